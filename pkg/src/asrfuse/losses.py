"""Training objectives with gradients.

Four base losses (transducer marginal likelihood, AED cross-entropy, and
the two internal-LM negative log-likelihoods) plus the combined objectives
that add a weighted internal-LM term.  Gradients accumulate into the
ParamStore passed in; callers zero them between batches.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels, models
from .numerics import log_softmax

NEG_INF = float("-inf")


@dataclass
class LossReport:
    total: float
    e2e_part: float
    ilm_part: float
    alpha: float


def rnnt_loss(params, cfg, x, y, need_grad=True, grad_scale=1.0):
    """Negative log of the alignment-marginalized sequence likelihood.

    The forward lattice runs in log space over (T+1) x (U+1) scores; the
    gradient comes from the matching backward recursion via per-edge
    posterior occupancies.
    """
    vocab = cfg.vocab
    y = [int(t) for t in y]
    H, enc_caches = models.rnnt_encode_cached(params, cfg, x)
    G, pred_cache = models.rnnt_predict_cached(params, cfg, y)
    Z, joint_cache = models.rnnt_joint_grid_cached(params, H, G)
    logP = log_softmax(Z, axis=-1)
    T = H.shape[0]
    U = len(y)
    blank_lp = np.ascontiguousarray(logP[:, :, vocab.blank])
    if U > 0:
        label_lp = np.ascontiguousarray(logP[np.arange(T)[:, None], np.arange(U)[None, :], np.asarray(y)[None, :]])
    else:
        label_lp = np.zeros((T, 0))
    alpha, ll = kernels.lattice_alpha(blank_lp, label_lp)
    if not need_grad:
        return -ll
    beta, ll_b = kernels.lattice_beta(blank_lp, label_lp)

    occ_blank = np.zeros((T, U + 1))
    if T > 1:
        occ_blank[: T - 1, :] = np.exp(
            alpha[1:T, :] + blank_lp[: T - 1, :] + beta[2 : T + 1, :] - ll
        )
    occ_blank[T - 1, U] = np.exp(alpha[T, U] + blank_lp[T - 1, U] - ll)
    dlogP = np.zeros_like(logP)
    dlogP[:, :, vocab.blank] = -occ_blank * grad_scale
    if U > 0:
        occ_label = np.exp(
            alpha[1 : T + 1, :U] + label_lp + beta[1 : T + 1, 1 : U + 1] - ll
        )
        np.subtract.at(
            dlogP,
            (np.arange(T)[:, None], np.arange(U)[None, :], np.asarray(y)[None, :]),
            occ_label * grad_scale,
        )
    dZ = dlogP - np.exp(logP) * dlogP.sum(axis=-1, keepdims=True)
    dH, dG = models.rnnt_joint_grid_backward(params, joint_cache, dZ)
    models.rnnt_encode_backward(params, cfg, enc_caches, dH)
    models.rnnt_predict_backward(params, cfg, pred_cache, dG)
    return -ll


def aed_loss(params, cfg, x, y, need_grad=True, grad_scale=1.0):
    """Teacher-forced cross entropy over y_1..y_U plus the sentence end."""
    vocab = cfg.vocab
    y = [int(t) for t in y]
    H, enc_caches = models.aed_encode_cached(params, cfg, x)
    Z, cache = models.aed_teacher_forward(params, cfg, H, y)
    logP = log_softmax(Z, axis=-1)
    targets = np.asarray(y + [vocab.eos])
    rows = np.arange(len(targets))
    loss = -float(logP[rows, targets].sum())
    if not need_grad:
        return loss
    dZ = np.exp(logP)
    dZ[rows, targets] -= 1.0
    dZ *= grad_scale
    dH = models.aed_teacher_backward(params, cfg, cache, dZ)
    models.aed_encode_backward(params, cfg, enc_caches, dH)
    return loss


def rnnt_ilm_loss(params, cfg, y, need_grad=True, grad_scale=1.0):
    """Internal-LM negative log-likelihood of y under the prediction and
    joint networks alone; encoder-side parameters get exactly zero gradient
    because they are never touched."""
    y = [int(t) for t in y]
    U = len(y)
    G, pred_cache = models.rnnt_predict_cached(params, cfg, y)
    if U == 0:
        return 0.0
    logP, cache = models.rnnt_ilm_grid_cached(params, cfg, G[:U])
    rows = np.arange(U)
    targets = np.asarray(y)
    loss = -float(logP[rows, targets].sum())
    if not need_grad:
        return loss
    dLogP = np.zeros_like(logP)
    dLogP[rows, targets] = -grad_scale
    dG_head = models.rnnt_ilm_grid_backward(params, cfg, cache, dLogP)
    dG = np.vstack([dG_head, np.zeros((1, G.shape[1]))])
    models.rnnt_predict_backward(params, cfg, pred_cache, dG)
    return loss


def aed_ilm_loss(params, cfg, y, need_grad=True, grad_scale=1.0):
    """Internal-LM negative log-likelihood of y plus sentence end under the
    decoder alone (zero context); encoder and attention parameters get
    exactly zero gradient."""
    vocab = cfg.vocab
    y = [int(t) for t in y]
    Z, cache = models.aed_ilm_forward(params, cfg, y)
    logP = log_softmax(Z, axis=-1)
    targets = np.asarray(y + [vocab.eos])
    rows = np.arange(len(targets))
    loss = -float(logP[rows, targets].sum())
    if not need_grad:
        return loss
    dZ = np.exp(logP)
    dZ[rows, targets] -= 1.0
    dZ *= grad_scale
    models.aed_ilm_backward(params, cfg, cache, dZ)
    return loss


def ilmt_loss(family, params, cfg, x, y, alpha, need_grad=True):
    """Combined objective: the end-to-end loss plus alpha times the
    internal-LM loss.  With alpha = 0 the gradient path is bit-identical to
    the plain end-to-end loss; the internal-LM value is still reported."""
    if alpha < 0:
        raise ValueError(f"internal-LM loss weight must be >= 0, got {alpha}")
    if family == "rnnt":
        e2e = rnnt_loss(params, cfg, x, y, need_grad=need_grad)
        ilm = rnnt_ilm_loss(params, cfg, y,
                            need_grad=need_grad and alpha > 0,
                            grad_scale=alpha)
    elif family == "aed":
        e2e = aed_loss(params, cfg, x, y, need_grad=need_grad)
        ilm = aed_ilm_loss(params, cfg, y,
                           need_grad=need_grad and alpha > 0,
                           grad_scale=alpha)
    else:
        raise ValueError(f"unknown model family {family!r}")
    return LossReport(total=e2e + alpha * ilm, e2e_part=e2e, ilm_part=ilm,
                      alpha=alpha)


def e2e_loss(family, params, cfg, x, y, need_grad=True):
    if family == "rnnt":
        return rnnt_loss(params, cfg, x, y, need_grad=need_grad)
    if family == "aed":
        return aed_loss(params, cfg, x, y, need_grad=need_grad)
    raise ValueError(f"unknown model family {family!r}")


def ilm_loss(family, params, cfg, y, need_grad=True, grad_scale=1.0):
    if family == "rnnt":
        return rnnt_ilm_loss(params, cfg, y, need_grad=need_grad,
                             grad_scale=grad_scale)
    if family == "aed":
        return aed_ilm_loss(params, cfg, y, need_grad=need_grad,
                            grad_scale=grad_scale)
    raise ValueError(f"unknown model family {family!r}")
