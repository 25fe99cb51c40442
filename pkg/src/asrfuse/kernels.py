"""Kernel backend selection.

The lattice recursions and the edit-distance table are the only scalar
sequential loops in the package.  They exist twice: compiled (Cython,
``asrfuse._core``) and pure python (``asrfuse._core_py``).  The compiled
module is preferred when importable; set ASRFUSE_PURE_PYTHON=1 to force
the fallback (the test suite uses this to cross-check both).
"""

import os

import numpy as np

if os.environ.get("ASRFUSE_PURE_PYTHON", "") == "1":
    from . import _core_py as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as _impl

BACKEND = _impl.BACKEND


def get_impl(backend=None):
    """Return the kernel module for ``backend`` ("compiled" or "python").

    With backend=None the active module is returned.  Requesting "compiled"
    when the extension is not built raises ImportError.
    """
    if backend is None:
        return _impl
    if backend == "python":
        from . import _core_py

        return _core_py
    if backend == "compiled":
        from . import _core  # raises ImportError if not built

        return _core
    raise ValueError(f"unknown kernel backend: {backend!r}")


def lattice_alpha(blank_lp, label_lp, impl=None):
    """Run the forward lattice recursion, returning (alpha, log_likelihood)."""
    blank_lp = np.ascontiguousarray(blank_lp, dtype=np.float64)
    label_lp = np.ascontiguousarray(label_lp, dtype=np.float64)
    T, U1 = blank_lp.shape
    alpha = np.empty((T + 1, U1))
    ll = (impl or _impl).lattice_alpha(blank_lp, label_lp, alpha)
    return alpha, ll


def lattice_beta(blank_lp, label_lp, impl=None):
    """Run the backward lattice recursion, returning (beta, log_likelihood)."""
    blank_lp = np.ascontiguousarray(blank_lp, dtype=np.float64)
    label_lp = np.ascontiguousarray(label_lp, dtype=np.float64)
    T, U1 = blank_lp.shape
    beta = np.empty((T + 1, U1))
    ll = (impl or _impl).lattice_beta(blank_lp, label_lp, beta)
    return beta, ll


def edit_counts(ref, hyp, impl=None):
    """Canonical (substitutions, insertions, deletions) between id sequences."""
    mod = impl or _impl
    if mod.BACKEND == "compiled":
        ref = np.ascontiguousarray(ref, dtype=np.int64)
        hyp = np.ascontiguousarray(hyp, dtype=np.int64)
        return mod.edit_counts(ref, hyp)
    return mod.edit_counts(list(ref), list(hyp))
