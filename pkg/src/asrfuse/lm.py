"""Token-level LSTM language models: training, step scoring, and perplexity.

The same step-scorer protocol is implemented by the internal-LM wrappers in
models.py, so perplexity and fusion code accept either an external LM or an
E2E model's acoustics-free mode interchangeably.
"""

from dataclasses import dataclass

import numpy as np

from . import layers
from .numerics import LogProbVector, log_softmax
from .params import Adam, ParamStore, uniform_init


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int = 32
    layers: int = 1
    hidden: int = 64
    embed_dim: int = 64

    @property
    def vocab(self):
        from .models import Vocabulary

        return Vocabulary(self.vocab_size)


def init_lm(cfg, seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    uniform_init(store, "lm.embed", (cfg.vocab_size + 1, cfg.embed_dim),
                 cfg.embed_dim, rng)
    d = cfg.embed_dim
    for i in range(cfg.layers):
        uniform_init(store, f"lm.l{i}.Wx", (d, 4 * cfg.hidden), d, rng)
        uniform_init(store, f"lm.l{i}.Wh", (cfg.hidden, 4 * cfg.hidden),
                     cfg.hidden, rng)
        uniform_init(store, f"lm.l{i}.b", (4 * cfg.hidden,), cfg.hidden, rng)
        d = cfg.hidden
    uniform_init(store, "lm.out.W", (cfg.vocab_size + 1, cfg.hidden),
                 cfg.hidden, rng)
    uniform_init(store, "lm.out.b", (cfg.vocab_size + 1,), cfg.hidden, rng)
    return store


@dataclass
class LmState:
    layers: list  # [(h, c)] per layer
    last_token: int


def lm_step(params, cfg, state, token):
    """Consume one token id (<sos> allowed) and return the normalized
    log-prob row over V tokens plus <eos>, with the advanced state."""
    token = int(token)
    if not 0 <= token <= cfg.vocab_size:
        raise ValueError(f"token id {token} out of range for LM input")
    x = params["lm.embed"][token]
    new_layers = []
    for i, (h, c) in enumerate(state.layers):
        h2, c2 = layers.lstm_step(
            x, h, c,
            params[f"lm.l{i}.Wx"], params[f"lm.l{i}.Wh"], params[f"lm.l{i}.b"])
        new_layers.append((h2, c2))
        x = h2
    z = params["lm.out.W"] @ x + params["lm.out.b"]
    return LogProbVector(log_softmax(z)), LmState(new_layers, token)


class LmScorer:
    """Step-scorer over V tokens plus <eos> backed by LSTM-LM parameters."""

    has_eos = True

    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg

    def start(self):
        zeros = [(np.zeros(self.cfg.hidden), np.zeros(self.cfg.hidden))
                 for _ in range(self.cfg.layers)]
        return LmState(zeros, -1)

    def step(self, state, token):
        return lm_step(self.params, self.cfg, state, token)


def lm_sequence_forward(params, cfg, y):
    """Teacher-forced logits over [<sos>] + y predicting y + [<eos>]."""
    vocab = cfg.vocab
    vocab.check_tokens(y)
    ids = [vocab.sos] + [int(t) for t in y]
    E = layers.embed_forward(params["lm.embed"], ids)
    caches = []
    h = E
    for i in range(cfg.layers):
        h, cache = layers.lstm_seq_forward(
            h, params[f"lm.l{i}.Wx"], params[f"lm.l{i}.Wh"], params[f"lm.l{i}.b"])
        caches.append(cache)
    Z = h @ params["lm.out.W"].T + params["lm.out.b"]
    return Z, (ids, caches, h)


def lm_loss(params, cfg, y, need_grad=True):
    """Cross entropy of y plus sentence end; gradients accumulate."""
    Z, (ids, caches, h_top) = lm_sequence_forward(params, cfg, y)
    logP = log_softmax(Z, axis=-1)
    targets = np.asarray([int(t) for t in y] + [cfg.vocab.eos])
    rows = np.arange(len(targets))
    loss = -float(logP[rows, targets].sum())
    if not need_grad:
        return loss
    dZ = np.exp(logP)
    dZ[rows, targets] -= 1.0
    params.add_grad("lm.out.W", dZ.T @ h_top)
    params.add_grad("lm.out.b", dZ.sum(axis=0))
    d = dZ @ params["lm.out.W"]
    for i in range(cfg.layers - 1, -1, -1):
        d, dWx, dWh, db, _, _ = layers.lstm_seq_backward(caches[i], d)
        params.add_grad(f"lm.l{i}.Wx", dWx)
        params.add_grad(f"lm.l{i}.Wh", dWh)
        params.add_grad(f"lm.l{i}.b", db)
    params.add_grad("lm.embed", layers.embed_backward(params["lm.embed"], ids, d))
    return loss


def lm_train(corpus, cfg, seed=0, epochs=10, lr=1e-3, clip_norm=5.0,
             batch_size=8, log=None):
    """Train an LSTM-LM on a list of token-id sentences.

    Returns (params, history) where history[e] is the full-corpus mean
    cross entropy per sentence measured after epoch e.
    """
    sentences = [list(map(int, s)) for s in corpus]
    if not sentences:
        raise ValueError("LM training corpus is empty")
    params = init_lm(cfg, seed)
    opt = Adam(params, lr=lr, clip_norm=clip_norm)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(sentences))
        for start in range(0, len(order), batch_size):
            params.zero_grads()
            for idx in order[start:start + batch_size]:
                lm_loss(params, cfg, sentences[idx])
            opt.step()
        total = sum(lm_loss(params, cfg, s, need_grad=False) for s in sentences)
        history.append(total / len(sentences))
        if log is not None:
            log(f"lm epoch {epoch + 1}/{epochs}: train CE/sentence "
                f"{history[-1]:.4f}")
    return params, history


@dataclass
class PerplexityReport:
    perplexity: float
    total_nll: float
    n_predicted: int
    n_sentences: int
    includes_eos: bool


def sequence_logprob(scorer, y, include_eos):
    """Chained log-probability of a token sequence under a step scorer."""
    state = scorer.start()
    total = 0.0
    # every scorer embeds <sos> at the extra row after the real tokens
    lp, state = scorer.step(state, scorer.cfg.vocab_size)
    for t in y:
        total += float(lp.values[int(t)])
        lp, state = scorer.step(state, int(t))
    if include_eos:
        if not scorer.has_eos:
            raise ValueError("scorer has no sentence-end slot")
        total += float(lp.values[-1])
    return total


def perplexity(scorer, corpus, include_eos=None):
    """exp(total NLL / tokens predicted) over a list of token sentences.

    include_eos defaults to the scorer's own convention (the RNN-T internal
    LM has no sentence-end slot and predicts U tokens per sentence; LM and
    AED internal-LM scorers predict U+1).
    """
    if include_eos is None:
        include_eos = scorer.has_eos
    if not corpus:
        raise ValueError("perplexity needs a nonempty corpus")
    total_nll = 0.0
    n_pred = 0
    for y in corpus:
        y = [int(t) for t in y]
        total_nll -= sequence_logprob(scorer, y, include_eos)
        n_pred += len(y) + (1 if include_eos else 0)
    ppl = float(np.exp(total_nll / max(1, n_pred)))
    return PerplexityReport(
        perplexity=ppl,
        total_nll=total_nll,
        n_predicted=n_pred,
        n_sentences=len(corpus),
        includes_eos=include_eos,
    )
