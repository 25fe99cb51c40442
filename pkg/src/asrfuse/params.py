"""Named parameter storage, seeded initialization, the optimizer, and the
portable checkpoint file format.

Every model in the package (RNN-T, AED, LSTM-LM) keeps its weights in one
ParamStore under hierarchical names such as "rnnt.joint.W_j"; gradients
live in a parallel buffer of identical shapes.
"""

import json
import struct

import numpy as np

CKPT_MAGIC = b"ASRFCKPT"
CKPT_VERSION = 1


class ParamStore:
    """Map from hierarchical name to a float64 array plus its gradient.

    Shapes are fixed at creation; values may be mutated in place (optimizer
    steps, finite-difference probes) but never reshaped or replaced with a
    differently shaped array.
    """

    def __init__(self):
        self._arrays = {}
        self.grads = {}

    def create(self, name, value):
        if name in self._arrays:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        self._arrays[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def set(self, name, value):
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._arrays[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: have {self._arrays[name].shape}, "
                f"got {arr.shape}"
            )
        self._arrays[name][...] = arr

    def names(self):
        return sorted(self._arrays)

    def n_elements(self):
        return sum(a.size for a in self._arrays.values())

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def add_grad(self, name, delta):
        self.grads[name] += delta

    def copy(self):
        out = ParamStore()
        for name in self.names():
            out.create(name, self._arrays[name].copy())
        return out

    def grad_norm(self):
        total = 0.0
        for name in self.names():
            g = self.grads[name]
            total += float(np.dot(g.reshape(-1), g.reshape(-1)))
        return float(np.sqrt(total))


def uniform_init(store, name, shape, fan_in, rng):
    """Create a parameter initialized uniformly in [-r, r], r = 1/sqrt(fan_in)."""
    r = 1.0 / np.sqrt(float(fan_in))
    return store.create(name, rng.uniform(-r, r, size=shape))


class Adam:
    """Adaptive first-order optimizer with global gradient-norm clipping."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=5.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {n: np.zeros_like(store[n]) for n in store.names()}
        self._v = {n: np.zeros_like(store[n]) for n in store.names()}

    def step(self):
        self.t += 1
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.store.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name in self.store.names():
            g = self.store.grads[name] * scale
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            self.store[name][...] -= self.lr * update


def save_checkpoint(path, header, store):
    """Write a flat little-endian float64 checkpoint.

    ``header`` must carry at least the model family, vocabulary size, and
    layer dimensions; it is stored as JSON.  Round-trips are bit exact.
    """
    names = store.names()
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            enc = name.encode("utf-8")
            arr = store[name]
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<q", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns (header, store)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not an asrfuse checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (n_params,) = struct.unpack("<I", fh.read(4))
        store = ParamStore()
        for _ in range(n_params):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(
                struct.unpack("<q", fh.read(8))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(count * 8)
            arr = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(
                np.float64
            )
            store.create(name, arr)
    return header, store
