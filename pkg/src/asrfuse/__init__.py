"""asrfuse: desk-scale RNN-T/AED speech recognition with internal-LM
training and four LM-fusion decoding modes."""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
