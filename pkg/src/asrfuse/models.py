"""RNN-T and AED model definitions: configs, initialization, forward passes,
and the degraded internal-LM forward modes that drop all acoustic input.

Decode-time entry points (rnnt_encode, rnnt_joint, rnnt_ilm_step,
aed_decode_step, aed_ilm_step) are pure functions of (params, inputs).
Training-time *_forward/*_backward pairs carry caches and accumulate
gradients into the ParamStore.
"""

from dataclasses import dataclass

import numpy as np

from . import layers
from .numerics import LogProbVector, log_softmax
from .params import ParamStore, load_checkpoint, save_checkpoint, uniform_init


@dataclass(frozen=True)
class Vocabulary:
    """Dense token ids 0..size-1 plus one extra slot per special symbol.

    <sos> lives at embedding row `size` of decoder-side embedding tables;
    the RNN-T joint reserves output slot `size` for <b>; AED and LM outputs
    reserve slot `size` for <eos>.  The specials never collide because they
    live in different index spaces.
    """

    size: int

    @property
    def sos(self):
        return self.size

    @property
    def blank(self):
        return self.size

    @property
    def eos(self):
        return self.size

    def check_tokens(self, ids):
        for i in ids:
            if not 0 <= int(i) < self.size:
                raise ValueError(f"token id {i} outside vocabulary of {self.size}")


@dataclass(frozen=True)
class RnntConfig:
    vocab_size: int = 32
    d_in: int = 8
    enc_layers: int = 2
    enc_hidden: int = 64
    pred_layers: int = 1
    pred_hidden: int = 64
    embed_dim: int = 64
    joint_dim: int = 64

    @property
    def vocab(self):
        return Vocabulary(self.vocab_size)


@dataclass(frozen=True)
class AedConfig:
    vocab_size: int = 32
    d_in: int = 8
    enc_layers: int = 2
    enc_hidden: int = 64  # per direction; encoder output is twice this
    dec_layers: int = 1
    dec_hidden: int = 64
    attn_dim: int = 32
    attn_filters: int = 4
    attn_kernel: int = 3

    @property
    def enc_out(self):
        return 2 * self.enc_hidden

    @property
    def embed_dim(self):
        # the decoder input is e_{u-1} + c_{u-1}, which ties the embedding
        # width to the context width
        return self.enc_out

    @property
    def vocab(self):
        return Vocabulary(self.vocab_size)


# ---------------------------------------------------------------------------
# Initialization and parameter grouping
# ---------------------------------------------------------------------------

def _init_lstm(store, prefix, d_in, hidden, rng):
    uniform_init(store, f"{prefix}.Wx", (d_in, 4 * hidden), d_in, rng)
    uniform_init(store, f"{prefix}.Wh", (hidden, 4 * hidden), hidden, rng)
    uniform_init(store, f"{prefix}.b", (4 * hidden,), hidden, rng)


def _lstm_weights(store, prefix):
    return store[f"{prefix}.Wx"], store[f"{prefix}.Wh"], store[f"{prefix}.b"]


def init_rnnt(cfg, seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d = cfg.d_in
    for i in range(cfg.enc_layers):
        _init_lstm(store, f"rnnt.enc.l{i}", d, cfg.enc_hidden, rng)
        d = cfg.enc_hidden
    uniform_init(store, "rnnt.pred.embed", (cfg.vocab_size + 1, cfg.embed_dim),
                 cfg.embed_dim, rng)
    d = cfg.embed_dim
    for i in range(cfg.pred_layers):
        _init_lstm(store, f"rnnt.pred.l{i}", d, cfg.pred_hidden, rng)
        d = cfg.pred_hidden
    j = cfg.joint_dim
    uniform_init(store, "rnnt.joint.W_e", (j, cfg.enc_hidden), cfg.enc_hidden, rng)
    uniform_init(store, "rnnt.joint.b_e", (j,), cfg.enc_hidden, rng)
    uniform_init(store, "rnnt.joint.W_p", (j, cfg.pred_hidden), cfg.pred_hidden, rng)
    uniform_init(store, "rnnt.joint.b_p", (j,), cfg.pred_hidden, rng)
    uniform_init(store, "rnnt.joint.W_j", (cfg.vocab_size + 1, j), j, rng)
    uniform_init(store, "rnnt.joint.b_j", (cfg.vocab_size + 1,), j, rng)
    return store


def init_aed(cfg, seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d = cfg.d_in
    for i in range(cfg.enc_layers):
        _init_lstm(store, f"aed.enc.l{i}.fwd", d, cfg.enc_hidden, rng)
        _init_lstm(store, f"aed.enc.l{i}.bwd", d, cfg.enc_hidden, rng)
        d = cfg.enc_out
    uniform_init(store, "aed.embed", (cfg.vocab_size + 1, cfg.embed_dim),
                 cfg.embed_dim, rng)
    d = cfg.embed_dim
    for i in range(cfg.dec_layers):
        _init_lstm(store, f"aed.dec.l{i}", d, cfg.dec_hidden, rng)
        d = cfg.dec_hidden
    uniform_init(store, "aed.out.W_d", (cfg.vocab_size + 1, cfg.dec_hidden),
                 cfg.dec_hidden, rng)
    uniform_init(store, "aed.out.b_d", (cfg.vocab_size + 1,), cfg.dec_hidden, rng)
    a = cfg.attn_dim
    uniform_init(store, "aed.att.W_enc", (a, cfg.enc_out), cfg.enc_out, rng)
    uniform_init(store, "aed.att.W_dec", (a, cfg.dec_hidden), cfg.dec_hidden, rng)
    uniform_init(store, "aed.att.W_loc", (a, cfg.attn_filters), cfg.attn_filters, rng)
    uniform_init(store, "aed.att.b", (a,), cfg.attn_dim, rng)
    uniform_init(store, "aed.att.v", (a,), cfg.attn_dim, rng)
    uniform_init(store, "aed.att.conv", (cfg.attn_filters, cfg.attn_kernel),
                 cfg.attn_kernel, rng)
    return store


def rnnt_encoder_param_names(store):
    """Acoustic-side parameters: encoder LSTMs plus the joint's acoustic
    projection.  The internal LM must be exactly independent of these."""
    return [n for n in store.names()
            if n.startswith("rnnt.enc.")
            or n in ("rnnt.joint.W_e", "rnnt.joint.b_e")]


def rnnt_ilm_param_names(store):
    return [n for n in store.names() if n not in set(rnnt_encoder_param_names(store))]


def aed_encoder_param_names(store):
    return [n for n in store.names() if n.startswith("aed.enc.")]


def aed_attention_param_names(store):
    return [n for n in store.names() if n.startswith("aed.att.")]


def aed_decoder_param_names(store):
    skip = set(aed_encoder_param_names(store)) | set(aed_attention_param_names(store))
    return [n for n in store.names() if n not in skip]


# ---------------------------------------------------------------------------
# Model container and checkpointing
# ---------------------------------------------------------------------------

_CONFIG_TYPES = {"rnnt": RnntConfig, "aed": AedConfig}


@dataclass
class Model:
    family: str  # "rnnt" | "aed" | "lm"
    cfg: object
    params: ParamStore

    @property
    def vocab(self):
        return self.cfg.vocab

    def save(self, path):
        header = {
            "family": self.family,
            "vocab_size": self.cfg.vocab_size,
            "dims": {k: getattr(self.cfg, k) for k in self.cfg.__dataclass_fields__},
        }
        save_checkpoint(path, header, self.params)

    @classmethod
    def load(cls, path, config_types=None):
        header, store = load_checkpoint(path)
        types = config_types or _CONFIG_TYPES
        family = header["family"]
        if family not in types:
            raise ValueError(f"unknown model family in checkpoint: {family!r}")
        cfg = types[family](**header["dims"])
        return cls(family=family, cfg=cfg, params=store)


# ---------------------------------------------------------------------------
# RNN-T forward passes
# ---------------------------------------------------------------------------

def rnnt_encode_cached(params, cfg, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.d_in:
        raise ValueError(
            f"feature matrix must be (T, {cfg.d_in}); got {X.shape}"
        )
    caches = []
    h = X
    for i in range(cfg.enc_layers):
        h, cache = layers.lstm_seq_forward(h, *_lstm_weights(params, f"rnnt.enc.l{i}"))
        caches.append(cache)
    return h, caches


def rnnt_encode(params, cfg, X):
    """Map input features (T, d_in) to T encoder hidden states."""
    H, _ = rnnt_encode_cached(params, cfg, X)
    return H


def rnnt_encode_backward(params, cfg, caches, dH):
    d = dH
    for i in range(cfg.enc_layers - 1, -1, -1):
        d, dWx, dWh, db, _, _ = layers.lstm_seq_backward(caches[i], d)
        params.add_grad(f"rnnt.enc.l{i}.Wx", dWx)
        params.add_grad(f"rnnt.enc.l{i}.Wh", dWh)
        params.add_grad(f"rnnt.enc.l{i}.b", db)


def rnnt_predict_cached(params, cfg, y):
    """Prediction-network states over [<sos>, y_1 .. y_U]; G[u] has consumed
    u labels (plus the start token)."""
    vocab = cfg.vocab
    vocab.check_tokens(y)
    ids = [vocab.sos] + [int(t) for t in y]
    E = layers.embed_forward(params["rnnt.pred.embed"], ids)
    caches = []
    h = E
    for i in range(cfg.pred_layers):
        h, cache = layers.lstm_seq_forward(h, *_lstm_weights(params, f"rnnt.pred.l{i}"))
        caches.append(cache)
    return h, (ids, caches)


def rnnt_predict_backward(params, cfg, cache, dG):
    ids, caches = cache
    d = dG
    for i in range(cfg.pred_layers - 1, -1, -1):
        d, dWx, dWh, db, _, _ = layers.lstm_seq_backward(caches[i], d)
        params.add_grad(f"rnnt.pred.l{i}.Wx", dWx)
        params.add_grad(f"rnnt.pred.l{i}.Wh", dWh)
        params.add_grad(f"rnnt.pred.l{i}.b", db)
    params.add_grad("rnnt.pred.embed",
                    layers.embed_backward(params["rnnt.pred.embed"], ids, d))


def rnnt_joint(params, h_enc, h_pred):
    """Joint-network logits for one (frame, label-state) pair.

    Returns (logits over V+blank, acoustic_embedding, language_embedding);
    the two embeddings are the pre-activation contributions of each branch.
    """
    f_t = params["rnnt.joint.W_e"] @ h_enc + params["rnnt.joint.b_e"]
    g_u = params["rnnt.joint.W_p"] @ h_pred + params["rnnt.joint.b_p"]
    z = params["rnnt.joint.W_j"] @ np.tanh(f_t + g_u) + params["rnnt.joint.b_j"]
    return z, f_t, g_u


def rnnt_joint_grid_cached(params, H, G):
    """Joint logits for every (t, u) cell: returns (Z (T,U+1,V+1), cache)."""
    A = H @ params["rnnt.joint.W_e"].T + params["rnnt.joint.b_e"]
    B = G @ params["rnnt.joint.W_p"].T + params["rnnt.joint.b_p"]
    phi = np.tanh(A[:, None, :] + B[None, :, :])
    Z = phi @ params["rnnt.joint.W_j"].T + params["rnnt.joint.b_j"]
    return Z, (H, G, phi)


def rnnt_joint_grid_backward(params, cache, dZ):
    """Backprop the joint grid; returns (dH, dG) and accumulates param grads."""
    H, G, phi = cache
    W_j = params["rnnt.joint.W_j"]
    params.add_grad("rnnt.joint.W_j", np.einsum("tuv,tuj->vj", dZ, phi))
    params.add_grad("rnnt.joint.b_j", dZ.sum(axis=(0, 1)))
    dphi = dZ @ W_j
    dpre = dphi * (1.0 - phi * phi)
    dA = dpre.sum(axis=1)
    dB = dpre.sum(axis=0)
    params.add_grad("rnnt.joint.W_e", dA.T @ H)
    params.add_grad("rnnt.joint.b_e", dA.sum(axis=0))
    params.add_grad("rnnt.joint.W_p", dB.T @ G)
    params.add_grad("rnnt.joint.b_p", dB.sum(axis=0))
    dH = dA @ params["rnnt.joint.W_e"]
    dG = dB @ params["rnnt.joint.W_p"]
    return dH, dG


def rnnt_joint_from_embeds(params, f_acoustic, g_lang):
    """Joint logits from precomputed branch embeddings; broadcasts over
    stacked rows of either argument."""
    return np.tanh(f_acoustic + g_lang) @ params["rnnt.joint.W_j"].T \
        + params["rnnt.joint.b_j"]


def rnnt_ilm_logits(params, h_pred):
    """Full V+1 joint logits with the acoustic branch removed."""
    g_u = rnnt_lang_embed(params, h_pred)
    return params["rnnt.joint.W_j"] @ np.tanh(g_u) + params["rnnt.joint.b_j"]


def rnnt_ilm_step(params, cfg, h_pred):
    """Internal-LM distribution over the V real tokens for one state.

    Drops the blank slot from the acoustic-free joint logits and normalizes
    over what remains.
    """
    z = rnnt_ilm_logits(params, h_pred)
    nb = np.delete(z, cfg.vocab.blank)
    return LogProbVector(log_softmax(nb))


def rnnt_ilm_from_lang(params, cfg, g_lang):
    """rnnt_ilm_step from a cached language embedding (rows broadcast)."""
    z = np.tanh(g_lang) @ params["rnnt.joint.W_j"].T + params["rnnt.joint.b_j"]
    nb = np.delete(z, cfg.vocab.blank, axis=-1)
    return log_softmax(nb, axis=-1)


def rnnt_ilm_grid_cached(params, cfg, G):
    """Blank-free internal-LM log-probs for a batch of prediction states.

    G is (n, pred_hidden); returns (log-probs (n, V), cache).
    """
    B = G @ params["rnnt.joint.W_p"].T + params["rnnt.joint.b_p"]
    phi = np.tanh(B)
    Z = phi @ params["rnnt.joint.W_j"].T + params["rnnt.joint.b_j"]
    nb = np.delete(Z, cfg.vocab.blank, axis=1)
    return log_softmax(nb, axis=1), (G, phi, nb)


def rnnt_ilm_grid_backward(params, cfg, cache, dLogP):
    """Backprop rnnt_ilm_grid_cached given gradients on the log-probs."""
    G, phi, nb = cache
    p = np.exp(log_softmax(nb, axis=1))
    dnb = dLogP - p * dLogP.sum(axis=1, keepdims=True)
    dZ = np.insert(dnb, cfg.vocab.blank, 0.0, axis=1)
    params.add_grad("rnnt.joint.W_j", dZ.T @ phi)
    params.add_grad("rnnt.joint.b_j", dZ.sum(axis=0))
    dphi = dZ @ params["rnnt.joint.W_j"]
    dB = dphi * (1.0 - phi * phi)
    params.add_grad("rnnt.joint.W_p", dB.T @ G)
    params.add_grad("rnnt.joint.b_p", dB.sum(axis=0))
    return dB @ params["rnnt.joint.W_p"]


@dataclass
class RnntStates:
    """Decode-time recurrent state: per-layer (h, c) for encoder is not kept
    here (the encoder runs once per utterance); prediction state advances
    only on non-blank emissions.  The joint-input language embedding of the
    current prediction state is cached for reuse across frames."""

    pred: list  # [(h, c)] per prediction layer
    h_pred: np.ndarray  # top-layer prediction output
    lang_emb: np.ndarray = None  # W_p h_pred + b_p


def rnnt_lang_embed(params, h_pred):
    return params["rnnt.joint.W_p"] @ h_pred + params["rnnt.joint.b_p"]


def rnnt_acoustic_embed(params, h_enc):
    return params["rnnt.joint.W_e"] @ h_enc + params["rnnt.joint.b_e"]


def rnnt_init_state(params, cfg):
    pred = [(np.zeros(cfg.pred_hidden), np.zeros(cfg.pred_hidden))
            for _ in range(cfg.pred_layers)]
    state = RnntStates(pred=pred, h_pred=np.zeros(cfg.pred_hidden))
    return rnnt_advance_pred(params, cfg, state, cfg.vocab.sos)


def rnnt_advance_pred(params, cfg, state, token):
    """Feed one non-blank token (or <sos>) through the prediction network."""
    x = params["rnnt.pred.embed"][int(token)]
    new_layers = []
    for i, (h, c) in enumerate(state.pred):
        h2, c2 = layers.lstm_step(x, h, c, *_lstm_weights(params, f"rnnt.pred.l{i}"))
        new_layers.append((h2, c2))
        x = h2
    return RnntStates(pred=new_layers, h_pred=x,
                      lang_emb=rnnt_lang_embed(params, x))


# ---------------------------------------------------------------------------
# AED forward passes
# ---------------------------------------------------------------------------

def aed_encode_cached(params, cfg, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.d_in:
        raise ValueError(
            f"feature matrix must be (T, {cfg.d_in}); got {X.shape}"
        )
    caches = []
    h = X
    for i in range(cfg.enc_layers):
        h, cache = layers.bilstm_seq_forward(
            h,
            _lstm_weights(params, f"aed.enc.l{i}.fwd"),
            _lstm_weights(params, f"aed.enc.l{i}.bwd"),
        )
        caches.append(cache)
    return h, caches


def aed_encode(params, cfg, X):
    H, _ = aed_encode_cached(params, cfg, X)
    return H


def aed_encode_backward(params, cfg, caches, dH):
    d = dH
    for i in range(cfg.enc_layers - 1, -1, -1):
        d, fwd, bwd = layers.bilstm_seq_backward(caches[i], d)
        for tag, (dWx, dWh, db) in (("fwd", fwd), ("bwd", bwd)):
            params.add_grad(f"aed.enc.l{i}.{tag}.Wx", dWx)
            params.add_grad(f"aed.enc.l{i}.{tag}.Wh", dWh)
            params.add_grad(f"aed.enc.l{i}.{tag}.b", db)


def _att_params(params):
    return {
        "W_enc": params["aed.att.W_enc"],
        "W_dec": params["aed.att.W_dec"],
        "W_loc": params["aed.att.W_loc"],
        "b": params["aed.att.b"],
        "v": params["aed.att.v"],
        "conv": params["aed.att.conv"],
    }


@dataclass
class AedStates:
    """Decode-time state: per-layer decoder (h, c), current attention weights
    over the T frames, and the matching context vector.  Internal-LM states
    carry a=None and a zero context."""

    dec: list
    a: object  # np.ndarray of length T, or None in internal-LM mode
    c: np.ndarray


def aed_init_state(params, cfg, H_enc):
    """Fresh decoder state attending uniformly over H_enc."""
    T = H_enc.shape[0]
    a0 = np.full(T, 1.0 / T)
    dec = [(np.zeros(cfg.dec_hidden), np.zeros(cfg.dec_hidden))
           for _ in range(cfg.dec_layers)]
    return AedStates(dec=dec, a=a0, c=a0 @ H_enc)


def aed_init_ilm_state(params, cfg):
    dec = [(np.zeros(cfg.dec_hidden), np.zeros(cfg.dec_hidden))
           for _ in range(cfg.dec_layers)]
    return AedStates(dec=dec, a=None, c=np.zeros(cfg.embed_dim))


def aed_embed(params, token):
    return params["aed.embed"][int(token)]


def _aed_dec_stack_step(params, cfg, dec, x):
    new_dec = []
    for i, (h, c) in enumerate(dec):
        h2, c2 = layers.lstm_step(x, h, c, *_lstm_weights(params, f"aed.dec.l{i}"))
        new_dec.append((h2, c2))
        x = h2
    return new_dec, x


def aed_decode_step(params, cfg, state, e_prev, c_prev, H_enc):
    """One teacher-free decoder step with attention.

    Runs the decoder RNN on e_prev + c_prev, emits the normalized log-prob
    row over V tokens plus <eos>, then computes fresh attention weights and
    context from the new top hidden state.
    """
    if e_prev.shape != c_prev.shape:
        raise ValueError(
            f"embedding/context width mismatch: {e_prev.shape} vs {c_prev.shape}"
        )
    new_dec, h_top = _aed_dec_stack_step(params, cfg, state.dec, e_prev + c_prev)
    z = params["aed.out.W_d"] @ h_top + params["aed.out.b_d"]
    a, c, _ = layers.attention_forward(H_enc, h_top, state.a, _att_params(params))
    return LogProbVector(log_softmax(z)), AedStates(dec=new_dec, a=a, c=c)


def aed_ilm_step(params, cfg, state, e_prev):
    """Decoder step with the context vector forced to zero.

    Never reads encoder states or attention; the decoder acts as a plain
    recurrent LM over the token sequence.
    """
    new_dec, h_top = _aed_dec_stack_step(params, cfg, state.dec, e_prev)
    z = params["aed.out.W_d"] @ h_top + params["aed.out.b_d"]
    return LogProbVector(log_softmax(z)), AedStates(
        dec=new_dec, a=None, c=np.zeros(cfg.embed_dim))


# ---------------------------------------------------------------------------
# AED teacher-forced training graph
# ---------------------------------------------------------------------------

def aed_teacher_forward(params, cfg, H_enc, y):
    """Teacher-forced decoder pass over targets y_1..y_U plus <eos>.

    Returns (logits rows (U+1, V+1), cache).  Attention runs after every
    step except the last (its context would feed a step that never runs).
    """
    vocab = cfg.vocab
    vocab.check_tokens(y)
    T = H_enc.shape[0]
    U = len(y)
    prev_ids = [vocab.sos] + [int(t) for t in y]
    E = layers.embed_forward(params["aed.embed"], prev_ids)
    a = np.full(T, 1.0 / T)
    c = a @ H_enc
    a0 = a
    dec = [(np.zeros(cfg.dec_hidden), np.zeros(cfg.dec_hidden))
           for _ in range(cfg.dec_layers)]
    Z = np.empty((U + 1, vocab.size + 1))
    step_caches = []
    for u in range(U + 1):
        x = E[u] + c
        cell_caches = []
        new_dec = []
        inp = x
        for i, (h, ccell) in enumerate(dec):
            h2, c2, cache = _lstm_cell_cached(
                inp, h, ccell, *_lstm_weights(params, f"aed.dec.l{i}"))
            cell_caches.append(cache)
            new_dec.append((h2, c2))
            inp = h2
        dec = new_dec
        h_top = inp
        Z[u] = params["aed.out.W_d"] @ h_top + params["aed.out.b_d"]
        att_cache = None
        if u < U:
            a, c, att_cache = layers.attention_forward(
                H_enc, h_top, a, _att_params(params))
        step_caches.append((cell_caches, att_cache, h_top))
    return Z, (H_enc, prev_ids, a0, step_caches)


def _lstm_cell_cached(x, h_prev, c_prev, Wx, Wh, b):
    hidden = Wh.shape[0]
    g = x @ Wx + h_prev @ Wh + b
    i = layers.sigmoid(g[:hidden])
    f = layers.sigmoid(g[hidden:2 * hidden])
    o = layers.sigmoid(g[2 * hidden:3 * hidden])
    cc = np.tanh(g[3 * hidden:])
    c = f * c_prev + i * cc
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, cc, tc, Wx, Wh)


def _lstm_cell_backward(cache, dh, dc):
    x, h_prev, c_prev, i, f, o, cc, tc, Wx, Wh = cache
    do = dh * tc
    dct = dh * o * (1.0 - tc * tc) + dc
    df = dct * c_prev
    di = dct * cc
    dcc = dct * i
    dc_prev = dct * f
    dg = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        do * o * (1.0 - o),
        dcc * (1.0 - cc * cc),
    ])
    dWx = np.outer(x, dg)
    dWh = np.outer(h_prev, dg)
    dx = Wx @ dg
    dh_prev = Wh @ dg
    return dx, dh_prev, dc_prev, dWx, dWh, dg


def aed_teacher_backward(params, cfg, cache, dZ):
    """Backprop aed_teacher_forward; accumulates into params and returns
    dH_enc for the encoder stack."""
    H_enc, prev_ids, a0, step_caches = cache
    U1 = dZ.shape[0]
    T = H_enc.shape[0]
    dH = np.zeros_like(H_enc)
    dE = np.zeros((U1, cfg.embed_dim))
    dh_carry = [np.zeros(cfg.dec_hidden) for _ in range(cfg.dec_layers)]
    dc_carry = [np.zeros(cfg.dec_hidden) for _ in range(cfg.dec_layers)]
    da_next = None  # gradient on the attention weights produced at step u
    dctx_next = np.zeros(cfg.embed_dim)  # gradient on the context produced at u
    W_d = params["aed.out.W_d"]
    for u in range(U1 - 1, -1, -1):
        cell_caches, att_cache, h_top = step_caches[u]
        params.add_grad("aed.out.W_d", np.outer(dZ[u], h_top))
        params.add_grad("aed.out.b_d", dZ[u])
        dh_top = W_d.T @ dZ[u]
        if att_cache is not None:
            dH_att, ds, da_prev, grads = layers.attention_backward(
                att_cache, da_next, dctx_next)
            dH += dH_att
            dh_top = dh_top + ds
            da_next = da_prev
            for key, g in grads.items():
                params.add_grad(f"aed.att.{key}", g)
        dh_in = dh_top
        for i in range(cfg.dec_layers - 1, -1, -1):
            dx, dh_prev, dc_prev, dWx, dWh, dg = _lstm_cell_backward(
                cell_caches[i], dh_in + dh_carry[i], dc_carry[i])
            params.add_grad(f"aed.dec.l{i}.Wx", dWx)
            params.add_grad(f"aed.dec.l{i}.Wh", dWh)
            params.add_grad(f"aed.dec.l{i}.b", dg)
            dh_carry[i] = dh_prev
            dc_carry[i] = dc_prev
            dh_in = dx
        dE[u] = dh_in
        dctx_next = dh_in  # x_u = e_u + c_u: same gradient on both
    # context consumed at step 0 came from the uniform initial attention
    dH += np.outer(a0, dctx_next)
    params.add_grad("aed.embed",
                    layers.embed_backward(params["aed.embed"], prev_ids, dE))
    return dH


def aed_ilm_forward(params, cfg, y):
    """Acoustics-free teacher-forced pass: logits rows for y_1..y_U, <eos>."""
    vocab = cfg.vocab
    vocab.check_tokens(y)
    prev_ids = [vocab.sos] + [int(t) for t in y]
    E = layers.embed_forward(params["aed.embed"], prev_ids)
    caches = []
    h = E
    for i in range(cfg.dec_layers):
        h, cache = layers.lstm_seq_forward(h, *_lstm_weights(params, f"aed.dec.l{i}"))
        caches.append(cache)
    Z = h @ params["aed.out.W_d"].T + params["aed.out.b_d"]
    return Z, (prev_ids, caches, h)


def aed_ilm_backward(params, cfg, cache, dZ):
    prev_ids, caches, h_top = cache
    params.add_grad("aed.out.W_d", dZ.T @ h_top)
    params.add_grad("aed.out.b_d", dZ.sum(axis=0))
    d = dZ @ params["aed.out.W_d"]
    for i in range(cfg.dec_layers - 1, -1, -1):
        d, dWx, dWh, db, _, _ = layers.lstm_seq_backward(caches[i], d)
        params.add_grad(f"aed.dec.l{i}.Wx", dWx)
        params.add_grad(f"aed.dec.l{i}.Wh", dWh)
        params.add_grad(f"aed.dec.l{i}.b", db)
    params.add_grad("aed.embed",
                    layers.embed_backward(params["aed.embed"], prev_ids, d))


# ---------------------------------------------------------------------------
# Internal-LM sequence scorers (shared protocol with the external LM)
# ---------------------------------------------------------------------------
# Scorer protocol: start() gives a state that has consumed nothing; each
# step(state, token) consumes one token (<sos> first) and returns the
# log-prob row for the NEXT symbol plus the advanced state.

class RnntIlmScorer:
    """Step scorer over the V real tokens from the RNN-T's prediction and
    joint networks alone.  No sentence-end slot."""

    has_eos = False

    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg

    def start(self):
        zeros = [(np.zeros(self.cfg.pred_hidden), np.zeros(self.cfg.pred_hidden))
                 for _ in range(self.cfg.pred_layers)]
        return RnntStates(pred=zeros, h_pred=np.zeros(self.cfg.pred_hidden))

    def step(self, state, token):
        new = rnnt_advance_pred(self.params, self.cfg, state, token)
        return rnnt_ilm_step(self.params, self.cfg, new.h_pred), new


class AedIlmScorer:
    """Step scorer from the AED decoder with a zeroed context vector."""

    has_eos = True

    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg

    def start(self):
        return aed_init_ilm_state(self.params, self.cfg)

    def step(self, state, token):
        return aed_ilm_step(
            self.params, self.cfg, state, aed_embed(self.params, token))
