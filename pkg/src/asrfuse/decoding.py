"""Left-to-right beam search over RNN-T and AED with four scoring modes:
plain E2E, shallow fusion, density ratio, and internal-LM subtraction.

RNN-T decodes frame-synchronously, breadth first, with per-frame pruning
and merging of equal-prefix hypotheses by log-add of their path scores.
AED decodes label-synchronously; finished hypotheses retire to a completed
pool and compare without length normalization.  Ties break lexicographically
by token ids everywhere, so decoding is deterministic.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import losses, models
from .lm import sequence_logprob
from .numerics import log_softmax

NEG_INF = float("-inf")

METHODS = ("none", "shallow_fusion", "density_ratio", "ilme")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    method: str = "none"
    lam_ext: float = 0.0  # external LM weight
    lam_ilm: float = 0.0  # internal-LM (or source-LM) subtraction weight
    beam_size: int = 25
    max_symbols_per_frame: int = 8  # RNN-T within-frame emission cap
    max_len: int = 0  # AED output cap; 0 means "frame count"

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown fusion method {self.method!r}")
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.lam_ext < 0 or self.lam_ilm < 0:
            raise ConfigError("LM fusion weights must be >= 0")
        if self.max_symbols_per_frame < 1:
            raise ConfigError("max_symbols_per_frame must be >= 1")
        return self

    @property
    def eff_lam_ext(self):
        return self.lam_ext if self.method != "none" else 0.0

    @property
    def eff_lam_ilm(self):
        return self.lam_ilm if self.method in ("density_ratio", "ilme") else 0.0


@dataclass
class Hypothesis:
    """Beam entry.  The fused total is always derived from the components,
    so the score decomposition cannot drift."""

    prefix: tuple
    score_e2e: float
    score_ext: float
    score_ilm: float
    model_state: object
    ext_state: object = None
    ilm_state: object = None
    next_model: object = None  # AED: model log-prob row for the next symbol
    next_ext: object = None
    next_ilm: object = None

    def total(self, fusion):
        return (self.score_e2e
                + fusion.eff_lam_ext * self.score_ext
                - fusion.eff_lam_ilm * self.score_ilm)


@dataclass
class DecodeResult:
    tokens: list
    score_total: float
    score_e2e: float
    score_ext: float
    score_ilm: float


def fused_step_scores(family, model_lp, ext_lp, ilm_lp, fusion):
    """Per-symbol fused expansion scores for one hypothesis.

    RNN-T rows cover V tokens plus blank: fusion applies to the tokens
    only, blank keeps the bare E2E score.  AED rows cover V tokens plus
    <eos> with full fusion on every slot.
    """
    lam_e = fusion.eff_lam_ext
    lam_i = fusion.eff_lam_ilm
    out = np.array(model_lp, dtype=np.float64, copy=True)
    if family == "rnnt":
        V = out.shape[0] - 1
        if lam_e:
            out[:V] += lam_e * np.asarray(ext_lp)[:V]
        if lam_i:
            out[:V] -= lam_i * np.asarray(ilm_lp)[:V]
    elif family == "aed":
        if lam_e:
            out += lam_e * np.asarray(ext_lp)
        if lam_i:
            out -= lam_i * np.asarray(ilm_lp)
    else:
        raise ConfigError(f"unknown model family {family!r}")
    return out


def _check_lms(fusion, ext_lm, src_lm):
    # ilme needs nothing beyond the E2E model itself
    if fusion.method == "density_ratio" and src_lm is None:
        raise ConfigError("density_ratio fusion needs a source-domain LM")
    if fusion.eff_lam_ext > 0 and ext_lm is None:
        raise ConfigError("a nonzero external-LM weight needs an external LM")


def beam_search(model, x, fusion, ext_lm=None, src_lm=None):
    """Decode one utterance; returns DecodeResults sorted best first."""
    fusion.validate()
    _check_lms(fusion, ext_lm, src_lm)
    if model.family == "rnnt":
        return _rnnt_beam(model, x, fusion, ext_lm, src_lm)
    if model.family == "aed":
        return _aed_beam(model, x, fusion, ext_lm, src_lm)
    raise ConfigError(f"cannot decode family {model.family!r}")


def _result(hyp, fusion):
    return DecodeResult(
        tokens=list(hyp.prefix),
        score_total=hyp.total(fusion),
        score_e2e=hyp.score_e2e,
        score_ext=hyp.score_ext,
        score_ilm=hyp.score_ilm,
    )


def _ranked(pool, fusion):
    hyps = sorted(pool.values(), key=lambda h: (-h.total(fusion), h.prefix))
    return [_result(h, fusion) for h in hyps]


# ---------------------------------------------------------------------------
# RNN-T: frame-synchronous breadth-first search with prefix merging
# ---------------------------------------------------------------------------

def _merge(pool, hyp):
    """Insert by prefix; equal prefixes log-add their path scores (states and
    LM components are functions of the prefix alone, so they already agree)."""
    old = pool.get(hyp.prefix)
    if old is None:
        pool[hyp.prefix] = hyp
    else:
        old.score_e2e = float(np.logaddexp(old.score_e2e, hyp.score_e2e))


def _rnnt_beam(model, x, fusion, ext_lm, src_lm):
    params, cfg = model.params, model.cfg
    vocab = cfg.vocab
    V = vocab.size
    lam_e = fusion.eff_lam_ext
    lam_i = fusion.eff_lam_ilm
    use_ext = lam_e > 0
    use_ilm = lam_i > 0
    src_is_sub = fusion.method == "density_ratio"
    H = models.rnnt_encode(params, cfg, x)
    T = H.shape[0]

    def attach_lm(hyp, token):
        if use_ext:
            state = ext_lm.start() if token is None else hyp.ext_state
            lp, hyp.ext_state = ext_lm.step(
                state, vocab.sos if token is None else token)
            hyp.next_ext = lp.values
        if use_ilm:
            if src_is_sub:
                state = src_lm.start() if token is None else hyp.ilm_state
                lp, hyp.ilm_state = src_lm.step(
                    state, vocab.sos if token is None else token)
                hyp.next_ilm = lp.values
            else:
                hyp.next_ilm = models.rnnt_ilm_from_lang(
                    params, cfg, hyp.model_state.lang_emb)
        return hyp

    root = Hypothesis(prefix=(), score_e2e=0.0, score_ext=0.0, score_ilm=0.0,
                      model_state=models.rnnt_init_state(params, cfg))
    attach_lm(root, None)

    beam = {(): root}
    for t in range(T):
        f_acoustic = models.rnnt_acoustic_embed(params, H[t])
        live = beam
        next_pool = {}
        for it in range(fusion.max_symbols_per_frame + 1):
            if not live:
                break
            allow_labels = it < fusion.max_symbols_per_frame
            # live hypotheses sorted by prefix so the stable sort below
            # resolves equal scores lexicographically by (prefix, symbol),
            # with blank (id V) after every real token
            hyps = [live[k] for k in sorted(live)]
            G = np.stack([h.model_state.lang_emb for h in hyps])
            LP = log_softmax(
                models.rnnt_joint_from_embeds(params, f_acoustic, G), axis=-1)
            scores = LP.copy()
            if use_ext:
                scores[:, :V] += lam_e * np.stack([h.next_ext for h in hyps])[:, :V]
            if use_ilm:
                scores[:, :V] -= lam_i * np.stack([h.next_ilm for h in hyps])[:, :V]
            base = np.array([h.total(fusion) for h in hyps])
            scores += base[:, None]
            if not allow_labels:
                scores[:, :V] = NEG_INF
            flat = scores.reshape(-1)
            order = np.argsort(-flat, kind="stable")[:fusion.beam_size]
            new_live = {}
            for idx in order:
                if flat[idx] == NEG_INF:
                    continue
                row, v = divmod(int(idx), V + 1)
                hyp = hyps[row]
                if v == vocab.blank:
                    _merge(next_pool, replace(
                        hyp, score_e2e=hyp.score_e2e + LP[row, vocab.blank]))
                    continue
                new = Hypothesis(
                    prefix=hyp.prefix + (v,),
                    score_e2e=hyp.score_e2e + LP[row, v],
                    score_ext=hyp.score_ext + (hyp.next_ext[v] if use_ext else 0.0),
                    score_ilm=hyp.score_ilm + (hyp.next_ilm[v] if use_ilm else 0.0),
                    model_state=models.rnnt_advance_pred(
                        params, cfg, hyp.model_state, v),
                    ext_state=hyp.ext_state,
                    ilm_state=hyp.ilm_state,
                )
                attach_lm(new, v)
                _merge(new_live, new)
            live = new_live
        ordered = sorted(next_pool.values(),
                         key=lambda h: (-h.total(fusion), h.prefix))
        beam = {h.prefix: h for h in ordered[:fusion.beam_size]}
    return _ranked(beam, fusion)


# ---------------------------------------------------------------------------
# AED: label-synchronous search with an <eos>-completed pool
# ---------------------------------------------------------------------------

def _aed_beam(model, x, fusion, ext_lm, src_lm):
    params, cfg = model.params, model.cfg
    vocab = cfg.vocab
    use_ext = fusion.eff_lam_ext > 0
    use_ilm = fusion.eff_lam_ilm > 0
    src_is_sub = fusion.method == "density_ratio"
    H = models.aed_encode(params, cfg, x)
    T = H.shape[0]
    max_len = fusion.max_len if fusion.max_len > 0 else T

    def advance(hyp, token):
        """Consume one token (or <sos> at the root) on every track."""
        e = models.aed_embed(params, token)
        st = hyp.model_state
        lp, hyp.model_state = models.aed_decode_step(
            params, cfg, st, e, st.c, H)
        hyp.next_model = lp.values
        if use_ext:
            lp, hyp.ext_state = ext_lm.step(hyp.ext_state, token)
            hyp.next_ext = lp.values
        if use_ilm:
            if src_is_sub:
                lp, hyp.ilm_state = src_lm.step(hyp.ilm_state, token)
            else:
                lp, hyp.ilm_state = models.aed_ilm_step(
                    params, cfg, hyp.ilm_state, e)
            hyp.next_ilm = lp.values
        return hyp

    root = Hypothesis(prefix=(), score_e2e=0.0, score_ext=0.0, score_ilm=0.0,
                      model_state=models.aed_init_state(params, cfg, H))
    if use_ext:
        root.ext_state = ext_lm.start()
    if use_ilm:
        root.ilm_state = (src_lm.start() if src_is_sub
                          else models.aed_init_ilm_state(params, cfg))
    advance(root, vocab.sos)

    live = {(): root}
    completed = {}
    for step in range(max_len + 1):
        if not live:
            break
        force_eos = step == max_len
        cands = []
        for hyp in live.values():
            fused = fused_step_scores(
                "aed", hyp.next_model, hyp.next_ext, hyp.next_ilm, fusion)
            base = hyp.total(fusion)
            symbols = (vocab.eos,) if force_eos else range(vocab.size + 1)
            for v in symbols:
                # keying by prefix + moved symbol makes ties lexicographic
                # with <eos> (id V) after every real token
                cands.append((base + fused[v], hyp.prefix + (v,), hyp, v))
        cands.sort(key=lambda c: (-c[0], c[1]))
        new_live = {}
        for _total, _key, hyp, v in cands[:fusion.beam_size]:
            d_ext = hyp.next_ext[v] if use_ext else 0.0
            d_ilm = hyp.next_ilm[v] if use_ilm else 0.0
            new = Hypothesis(
                prefix=hyp.prefix if v == vocab.eos else hyp.prefix + (v,),
                score_e2e=hyp.score_e2e + hyp.next_model[v],
                score_ext=hyp.score_ext + d_ext,
                score_ilm=hyp.score_ilm + d_ilm,
                model_state=hyp.model_state,
                ext_state=hyp.ext_state,
                ilm_state=hyp.ilm_state,
                next_model=hyp.next_model,
                next_ext=hyp.next_ext,
                next_ilm=hyp.next_ilm,
            )
            if v == vocab.eos:
                completed[new.prefix] = new
            else:
                advance(new, v)
                new_live[new.prefix] = new
        live = new_live
    return _ranked(completed, fusion)


# ---------------------------------------------------------------------------
# Greedy decoding (argmax chain over the same fused step scores)
# ---------------------------------------------------------------------------

def greedy_decode(model, x, fusion, ext_lm=None, src_lm=None):
    """Argmax chain with the same fused scoring as the beam search."""
    results = beam_search(model, x, replace(fusion, beam_size=1),
                          ext_lm=ext_lm, src_lm=src_lm)
    return results[0]


def greedy_decode_reference(model, x, fusion, ext_lm=None, src_lm=None):
    """Independent argmax-chain decoder used to pin down beam_size=1.

    Follows the fused scores step by step with no pooling or merging.
    """
    fusion.validate()
    _check_lms(fusion, ext_lm, src_lm)
    params, cfg = model.params, model.cfg
    vocab = cfg.vocab
    use_ext = fusion.eff_lam_ext > 0
    use_ilm = fusion.eff_lam_ilm > 0
    src_is_sub = fusion.method == "density_ratio"

    if model.family == "rnnt":
        H = models.rnnt_encode(params, cfg, x)
        state = models.rnnt_init_state(params, cfg)
        ext_state = ilm_state = None
        next_ext = next_ilm = None
        if use_ext:
            lp, ext_state = ext_lm.step(ext_lm.start(), vocab.sos)
            next_ext = lp.values
        if use_ilm and src_is_sub:
            lp, ilm_state = src_lm.step(src_lm.start(), vocab.sos)
            next_ilm = lp.values
        tokens = []
        s_e2e = s_ext = s_ilm = 0.0
        for t in range(H.shape[0]):
            emitted = 0
            while True:
                z, _, _ = models.rnnt_joint(params, H[t], state.h_pred)
                lp = log_softmax(z)
                if use_ilm and not src_is_sub:
                    next_ilm = models.rnnt_ilm_step(params, cfg, state.h_pred).values
                fused = fused_step_scores("rnnt", lp, next_ext, next_ilm, fusion)
                if emitted >= fusion.max_symbols_per_frame:
                    v = vocab.blank
                else:
                    v = int(np.argmax(fused))  # argmax takes the lowest index on ties
                if v == vocab.blank:
                    s_e2e += lp[vocab.blank]
                    break
                tokens.append(v)
                s_e2e += lp[v]
                if use_ext:
                    s_ext += next_ext[v]
                    lp_ext, ext_state = ext_lm.step(ext_state, v)
                    next_ext = lp_ext.values
                if use_ilm:
                    s_ilm += next_ilm[v]
                    if src_is_sub:
                        lp_src, ilm_state = src_lm.step(ilm_state, v)
                        next_ilm = lp_src.values
                state = models.rnnt_advance_pred(params, cfg, state, v)
                emitted += 1
        total = s_e2e + fusion.eff_lam_ext * s_ext - fusion.eff_lam_ilm * s_ilm
        return DecodeResult(tokens, total, s_e2e, s_ext, s_ilm)

    H = models.aed_encode(params, cfg, x)
    max_len = fusion.max_len if fusion.max_len > 0 else H.shape[0]
    state = models.aed_init_state(params, cfg, H)
    lp, state = models.aed_decode_step(
        params, cfg, state, models.aed_embed(params, vocab.sos), state.c, H)
    next_model = lp.values
    ext_state = ilm_state = None
    next_ext = next_ilm = None
    if use_ext:
        lp_e, ext_state = ext_lm.step(ext_lm.start(), vocab.sos)
        next_ext = lp_e.values
    if use_ilm:
        if src_is_sub:
            lp_i, ilm_state = src_lm.step(src_lm.start(), vocab.sos)
        else:
            ilm_state = models.aed_init_ilm_state(params, cfg)
            lp_i, ilm_state = models.aed_ilm_step(
                params, cfg, ilm_state, models.aed_embed(params, vocab.sos))
        next_ilm = lp_i.values
    tokens = []
    s_e2e = s_ext = s_ilm = 0.0
    for step in range(max_len + 1):
        fused = fused_step_scores("aed", next_model, next_ext, next_ilm, fusion)
        v = vocab.eos if step == max_len else int(np.argmax(fused))
        s_e2e += next_model[v]
        if use_ext:
            s_ext += next_ext[v]
        if use_ilm:
            s_ilm += next_ilm[v]
        if v == vocab.eos:
            break
        tokens.append(v)
        e = models.aed_embed(params, v)
        lp, state = models.aed_decode_step(params, cfg, state, e, state.c, H)
        next_model = lp.values
        if use_ext:
            lp_e, ext_state = ext_lm.step(ext_state, v)
            next_ext = lp_e.values
        if use_ilm:
            if src_is_sub:
                lp_i, ilm_state = src_lm.step(ilm_state, v)
            else:
                lp_i, ilm_state = models.aed_ilm_step(params, cfg, ilm_state, e)
            next_ilm = lp_i.values
    total = s_e2e + fusion.eff_lam_ext * s_ext - fusion.eff_lam_ilm * s_ilm
    return DecodeResult(tokens, total, s_e2e, s_ext, s_ilm)


# ---------------------------------------------------------------------------
# Whole-sequence offline rescoring (independent of the search)
# ---------------------------------------------------------------------------

def rescore_sequence(model, x, y, fusion, ext_lm=None, src_lm=None):
    """Fused score of a complete hypothesis computed without beam search."""
    fusion.validate()
    _check_lms(fusion, ext_lm, src_lm)
    y = [int(t) for t in y]
    include_eos = model.family == "aed"
    e2e = -losses.e2e_loss(model.family, model.params, model.cfg, x, y,
                           need_grad=False)
    ext = 0.0
    if fusion.eff_lam_ext > 0:
        ext = sequence_logprob(ext_lm, y, include_eos)
    ilm = 0.0
    if fusion.eff_lam_ilm > 0:
        if fusion.method == "density_ratio":
            ilm = sequence_logprob(src_lm, y, include_eos)
        elif model.family == "rnnt":
            scorer = models.RnntIlmScorer(model.params, model.cfg)
            ilm = sequence_logprob(scorer, y, False)
        else:
            scorer = models.AedIlmScorer(model.params, model.cfg)
            ilm = sequence_logprob(scorer, y, True)
    total = e2e + fusion.eff_lam_ext * ext - fusion.eff_lam_ilm * ilm
    return DecodeResult(list(y), total, e2e, ext, ilm)


# ---------------------------------------------------------------------------
# Dev-set weight sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    method: str
    best_lam_ext: float
    best_lam_ilm: float
    best_wer: float
    table: list  # rows of (lam_ext, lam_ilm, wer)


def sweep_lambdas(model, dev_utts, grid, method, beam_size,
                  ext_lm=None, src_lm=None, max_symbols_per_frame=8,
                  max_len=0):
    """Evaluate WER on dev for each (lam_ext, lam_ilm) point and pick the
    best; ties break toward smaller lam_ilm, then smaller lam_ext."""
    from .data import corpus_wer

    if not grid:
        raise ConfigError("lambda sweep needs a nonempty grid")
    if not dev_utts:
        raise ConfigError("lambda sweep needs a nonempty dev set")
    table = []
    for lam_ext, lam_ilm in grid:
        fusion = FusionConfig(
            method=method, lam_ext=lam_ext, lam_ilm=lam_ilm,
            beam_size=beam_size, max_symbols_per_frame=max_symbols_per_frame,
            max_len=max_len).validate()
        pairs = []
        for utt in dev_utts:
            best = beam_search(model, utt.x, fusion,
                               ext_lm=ext_lm, src_lm=src_lm)[0]
            pairs.append((utt.y, best.tokens))
        table.append((float(lam_ext), float(lam_ilm), corpus_wer(pairs).rate))
    best = min(table, key=lambda row: (row[2], row[1], row[0]))
    return SweepResult(method=method, best_lam_ext=best[0],
                       best_lam_ilm=best[1], best_wer=best[2], table=table)
