"""Log-domain math and the finite-difference gradient checking harness.

All probability mass in this package lives in log space; sums of
probabilities are always pairwise/vector log-add, never materialized
linearly inside a recursion.
"""

from dataclasses import dataclass

import numpy as np

NEG_INF = float("-inf")


@dataclass
class LogProbVector:
    """A vector of log-probabilities, normalized over its support."""

    values: np.ndarray
    normalized: bool = True

    def validate(self, tol=1e-9):
        if self.normalized:
            z = logsumexp(self.values)
            if abs(z) > tol:
                raise ValueError(f"log-probs not normalized: logsumexp={z:.3e}")
        return self


def logsumexp(x, axis=None):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_softmax(logits, axis=-1):
    """Normalize logits in the log domain.

    Shift invariant and argmax preserving.  Rejects non-finite input with a
    diagnostic naming the first offending index.
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.shape[axis] < 1:
        raise ValueError("log_softmax needs at least one logit")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        idx = tuple(int(i) for i in bad)
        raise ValueError(f"non-finite logit at index {idx}: {x[idx]}")
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    return shifted - lse


def log_softmax_vec(logits):
    """log_softmax for a single vector, wrapped as a LogProbVector."""
    return LogProbVector(log_softmax(logits, axis=-1))


class NonDeterministicFunction(RuntimeError):
    """Raised when two evaluations of a supposedly pure loss disagree."""


@dataclass
class GradCheckReport:
    passed: bool
    tol: float
    max_rel_err: float
    n_checked: int
    worst_param: str
    worst_index: int
    worst_analytic: float
    worst_numeric: float

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tol:.1e}) over {self.n_checked} elements; worst "
            f"{self.worst_param}[{self.worst_index}] analytic="
            f"{self.worst_analytic:.6e} numeric={self.worst_numeric:.6e}"
        )


def grad_check(f, params, eps=3e-5, tol=1e-4, n_sample=None, seed=0,
               denom_floor=1e-4):
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f(params)`` must be deterministic, return a scalar, and leave the
    gradient of every touched parameter in ``params.grads``.  Checks every
    element, or a seeded subsample of at least 100 when ``n_sample`` is
    given and the store is larger.  Relative error per element is
    |a - n| / max(|a|, |n|, denom_floor), so near-zero pairs are compared
    absolutely at denom_floor resolution.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    params.zero_grads()
    base = float(f(params))
    analytic = {name: params.grads[name].copy() for name in params.names()}
    params.zero_grads()
    again = float(f(params))
    if again != base:
        raise NonDeterministicFunction(
            f"two evaluations differ: {base!r} vs {again!r}"
        )

    coords = []
    for name in params.names():
        coords.extend((name, i) for i in range(params[name].size))
    if n_sample is not None and n_sample < len(coords):
        n_take = max(100, n_sample)
        if n_take < len(coords):
            rng = np.random.default_rng(seed)
            picked = rng.choice(len(coords), size=n_take, replace=False)
            coords = [coords[i] for i in sorted(picked)]

    max_err = 0.0
    worst = ("", 0, 0.0, 0.0)
    for name, i in coords:
        flat = params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        params.zero_grads()
        up = float(f(params))
        flat[i] = orig - eps
        params.zero_grads()
        down = float(f(params))
        flat[i] = orig
        numeric = (up - down) / (2.0 * eps)
        ana = float(analytic[name].reshape(-1)[i])
        err = abs(ana - numeric) / max(abs(ana), abs(numeric), denom_floor)
        if err > max_err:
            max_err = err
            worst = (name, i, ana, numeric)
    params.zero_grads()
    for name in params.names():
        params.grads[name][...] = analytic[name]
    return GradCheckReport(
        passed=max_err < tol,
        tol=tol,
        max_rel_err=max_err,
        n_checked=len(coords),
        worst_param=worst[0],
        worst_index=worst[1],
        worst_analytic=worst[2],
        worst_numeric=worst[3],
    )
