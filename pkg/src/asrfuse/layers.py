"""Hand-derived forward/backward passes for the building-block layers.

Each forward returns (output, cache); the matching backward consumes the
cache and returns input gradients plus parameter gradients.  Composition
and gradient accumulation into a ParamStore happen in the model code.
Correctness is enforced by the finite-difference harness in numerics.
"""

import numpy as np


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Linear / embedding
# ---------------------------------------------------------------------------

def linear_forward(x, W, b):
    """y = x @ W.T + b with W of shape (out, in); x may be (in,) or (..., in)."""
    return x @ W.T + b


def linear_backward(x, W, dy):
    """Returns (dx, dW, db) for linear_forward."""
    x2 = np.atleast_2d(x.reshape(-1, x.shape[-1]))
    dy2 = np.atleast_2d(dy.reshape(-1, dy.shape[-1]))
    dW = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = dy @ W
    return dx.reshape(x.shape), dW, db


def embed_forward(E, ids):
    return E[np.asarray(ids, dtype=np.intp)]


def embed_backward(E, ids, dout):
    dE = np.zeros_like(E)
    np.add.at(dE, np.asarray(ids, dtype=np.intp), dout)
    return dE


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------
# Gate layout along the last axis of Wx/Wh/b: [input, forget, output, cell].

def lstm_seq_forward(X, Wx, Wh, b, h0=None, c0=None):
    """Run an LSTM over X (T, d_in); returns (H (T, H), cache)."""
    T = X.shape[0]
    hidden = Wh.shape[0]
    Hs = np.zeros((T + 1, hidden))
    Cs = np.zeros((T + 1, hidden))
    if h0 is not None:
        Hs[0] = h0
    if c0 is not None:
        Cs[0] = c0
    G = np.empty((T, 4 * hidden))
    tanh_c = np.empty((T, hidden))
    pre = X @ Wx + b
    for t in range(T):
        g = pre[t] + Hs[t] @ Wh
        gates = sigmoid(g[:3 * hidden])
        i = gates[:hidden]
        f = gates[hidden:2 * hidden]
        o = gates[2 * hidden:]
        cc = np.tanh(g[3 * hidden:])
        Cs[t + 1] = f * Cs[t] + i * cc
        tc = np.tanh(Cs[t + 1])
        Hs[t + 1] = o * tc
        G[t, :3 * hidden] = gates
        G[t, 3 * hidden:] = cc
        tanh_c[t] = tc
    cache = (X, Wx, Wh, Hs, Cs, G, tanh_c)
    return Hs[1:], cache


def lstm_seq_backward(cache, dH, dh_last=None, dc_last=None):
    """Backprop through lstm_seq_forward.

    dH is the upstream gradient on every output step (T, H); dh_last/dc_last
    add gradient flowing into the final hidden/cell state from a consumer of
    the state itself.  Returns (dX, dWx, dWh, db, dh0, dc0).
    """
    X, Wx, Wh, Hs, Cs, G, tanh_c = cache
    T, hidden = dH.shape
    dX = np.zeros_like(X)
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * hidden)
    dh_next = np.zeros(hidden) if dh_last is None else dh_last.copy()
    dc_next = np.zeros(hidden) if dc_last is None else dc_last.copy()
    for t in range(T - 1, -1, -1):
        i = G[t, :hidden]
        f = G[t, hidden:2 * hidden]
        o = G[t, 2 * hidden:3 * hidden]
        cc = G[t, 3 * hidden:]
        tc = tanh_c[t]
        dh = dH[t] + dh_next
        do = dh * tc
        dct = dh * o * (1.0 - tc * tc) + dc_next
        df = dct * Cs[t]
        di = dct * cc
        dcc = dct * i
        dc_next = dct * f
        dg = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dcc * (1.0 - cc * cc),
        ])
        dWx += np.outer(X[t], dg)
        dWh += np.outer(Hs[t], dg)
        db += dg
        dX[t] = Wx @ dg
        dh_next = Wh @ dg
    return dX, dWx, dWh, db, dh_next, dc_next


def lstm_step(x, h_prev, c_prev, Wx, Wh, b):
    """Single cache-free LSTM step for decode time; returns (h, c).

    Works on single vectors or on stacked rows (n, d) for a batch of
    independent states.
    """
    hidden = Wh.shape[0]
    g = x @ Wx + h_prev @ Wh + b
    gates = sigmoid(g[..., :3 * hidden])
    i = gates[..., :hidden]
    f = gates[..., hidden:2 * hidden]
    o = gates[..., 2 * hidden:]
    cc = np.tanh(g[..., 3 * hidden:])
    c = f * c_prev + i * cc
    h = o * np.tanh(c)
    return h, c


def bilstm_seq_forward(X, fwd_weights, bwd_weights):
    """Bidirectional layer: concat of a forward and a time-reversed pass.

    Each weights tuple is (Wx, Wh, b).  Output is (T, 2H).
    """
    Hf, cache_f = lstm_seq_forward(X, *fwd_weights)
    Hb_rev, cache_b = lstm_seq_forward(X[::-1].copy(), *bwd_weights)
    H = np.concatenate([Hf, Hb_rev[::-1]], axis=1)
    return H, (cache_f, cache_b, Hf.shape[1])


def bilstm_seq_backward(cache, dH):
    cache_f, cache_b, hidden = cache
    dHf = dH[:, :hidden]
    dHb = dH[:, hidden:][::-1].copy()
    dXf, dWxf, dWhf, dbf, _, _ = lstm_seq_backward(cache_f, dHf)
    dXb, dWxb, dWhb, dbb, _, _ = lstm_seq_backward(cache_b, dHb)
    dX = dXf + dXb[::-1]
    return dX, (dWxf, dWhf, dbf), (dWxb, dWhb, dbb)


# ---------------------------------------------------------------------------
# Additive attention with a convolution over the previous weights
# ---------------------------------------------------------------------------

def conv1d_same(a, filters):
    """Correlate a (T,) signal with (F, K) filters, zero padded; (T, F) out."""
    T = a.shape[0]
    F, K = filters.shape
    half = K // 2
    padded = np.zeros(T + K - 1)
    padded[half:half + T] = a
    windows = np.stack([padded[j:j + T] for j in range(K)], axis=1)  # (T, K)
    return windows @ filters.T


def conv1d_same_backward(a, filters, dout):
    """Returns (da, dfilters) for conv1d_same."""
    T = a.shape[0]
    F, K = filters.shape
    half = K // 2
    padded = np.zeros(T + K - 1)
    padded[half:half + T] = a
    windows = np.stack([padded[j:j + T] for j in range(K)], axis=1)  # (T, K)
    dfilters = dout.T @ windows  # (F, K)
    dwindows = dout @ filters  # (T, K)
    dpadded = np.zeros(T + K - 1)
    for j in range(K):
        dpadded[j:j + T] += dwindows[:, j]
    return dpadded[half:half + T], dfilters


def attention_forward(H_enc, s, a_prev, p):
    """Content + location additive attention.

    Scores are v . tanh(W_enc h_t + W_dec s + W_loc conv(a_prev)_t + b);
    p is a dict with keys W_enc, W_dec, W_loc, b, v, conv.  Returns
    (a, c, cache) where a is the new weight vector over T frames and
    c = sum_t a_t h_t.
    """
    f = conv1d_same(a_prev, p["conv"])  # (T, F)
    q = H_enc @ p["W_enc"].T + s @ p["W_dec"].T + f @ p["W_loc"].T + p["b"]
    M = np.tanh(q)
    e = M @ p["v"]
    e = e - e.max()
    w = np.exp(e)
    a = w / w.sum()
    c = a @ H_enc
    return a, c, (H_enc, s, a_prev, f, M, a, p)


def attention_backward(cache, da_out, dc):
    """Backprop attention_forward given upstream da_out and dc.

    Returns (dH_enc, ds, da_prev, grads) with grads keyed like the param
    dict.
    """
    H_enc, s, a_prev, f, M, a, p = cache
    da = np.zeros_like(a) if da_out is None else da_out.copy()
    dH_enc = np.outer(a, dc)
    da += H_enc @ dc
    de = a * (da - float(a @ da))
    dM = np.outer(de, p["v"])
    dv = M.T @ de
    dq = dM * (1.0 - M * M)
    db = dq.sum(axis=0)
    dW_enc = dq.T @ H_enc
    dH_enc += dq @ p["W_enc"]
    dW_dec = np.outer(dq.sum(axis=0), s)
    ds = dq.sum(axis=0) @ p["W_dec"]
    dW_loc = dq.T @ f
    df = dq @ p["W_loc"]
    da_prev, dconv = conv1d_same_backward(a_prev, p["conv"], df)
    grads = {
        "W_enc": dW_enc,
        "W_dec": dW_dec,
        "W_loc": dW_loc,
        "b": db,
        "v": dv,
        "conv": dconv,
    }
    return dH_enc, ds, da_prev, grads
