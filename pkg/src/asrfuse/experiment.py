"""Experiment pipeline behind the CLI subcommands: corpus generation, E2E
and LM training, the weight sweep, and the (train loss) x (fusion method)
evaluation grid.

Everything is driven by one ExperimentConfig and one seed; identical
config + seed reproduces results byte for byte.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from . import decoding, losses, models
from . import lm as lm_mod
from .config import lm_config, model_config
from .params import Adam, load_checkpoint

LOSSES = ("standard", "ilmt")
METHODS = ("none", "shallow_fusion", "density_ratio", "ilme")


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# generate-data
# ---------------------------------------------------------------------------

def cmd_generate_data(cfg, log=print):
    """Write the preset source/target corpora under output_dir.

    Produces source train/dev/test utterances, target dev/test utterances,
    target text for the external LM, source transcripts for the
    density-ratio LM, and a larger source text pool for the intra-domain
    experiment.
    """
    g = cfg.generate
    out = _ensure_dir(cfg.output_dir)
    source, target = data_mod.preset_domain_pair(
        vocab_size=g.vocab_size, d_in=g.d_in, noise_sigma=g.noise_sigma)
    n_total = g.n_train + g.n_dev + g.n_test
    fracs = (g.n_train / n_total, g.n_dev / n_total, g.n_test / n_total)
    src_splits = data_mod.generate_corpus(source, n_total, cfg.seed, fracs)
    tgt_splits = data_mod.generate_corpus(target, n_total, cfg.seed + 1, fracs)

    paths = {}

    def save_utts(name, utts):
        path = os.path.join(out, name)
        data_mod.write_utterances(path, utts)
        paths[name] = path
        log(f"wrote {len(utts):5d} utterances -> {path}")

    def save_text(name, sentences):
        path = os.path.join(out, name)
        data_mod.write_text(path, sentences)
        paths[name] = path
        log(f"wrote {len(sentences):5d} sentences  -> {path}")

    save_utts("source.train.jsonl", src_splits.train)
    save_utts("source.dev.jsonl", src_splits.dev)
    save_utts("source.test.jsonl", src_splits.test)
    save_utts("target.dev.jsonl", tgt_splits.dev)
    save_utts("target.test.jsonl", tgt_splits.test)
    save_text("target.text.txt",
              data_mod.generate_text(target, g.n_lm_text, cfg.seed + 2))
    save_text("source.train_text.txt", [u.y for u in src_splits.train])
    save_text("source.text_pool.txt",
              data_mod.generate_text(source, g.n_lm_text * g.text_pool_factor,
                                     cfg.seed + 3))
    return paths


# ---------------------------------------------------------------------------
# train (E2E)
# ---------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    e2e_loss: float  # mean per utterance over the epoch's batches
    ilm_loss: float
    dev_wer: float  # greedy, no LM
    dev_ilm_ppl: float


def _init_e2e(cfg):
    mcfg = model_config(cfg)
    family = cfg.model.family
    if family == "rnnt":
        params = models.init_rnnt(mcfg, cfg.seed)
    else:
        params = models.init_aed(mcfg, cfg.seed)
    if cfg.train.init_checkpoint:
        header, loaded = load_checkpoint(cfg.train.init_checkpoint)
        fresh_names = params.names()
        if loaded.names() != fresh_names:
            missing = sorted(set(fresh_names) ^ set(loaded.names()))
            raise ValueError(
                f"init checkpoint parameter set mismatch, first differing "
                f"name: {missing[0]}")
        for name in fresh_names:
            if loaded[name].shape != params[name].shape:
                raise ValueError(
                    f"init checkpoint shape mismatch for {name}: "
                    f"{loaded[name].shape} vs {params[name].shape}")
            params.set(name, loaded[name])
    return models.Model(family, mcfg, params)


def _ilm_scorer(model):
    if model.family == "rnnt":
        return models.RnntIlmScorer(model.params, model.cfg)
    return models.AedIlmScorer(model.params, model.cfg)


def _greedy_dev_wer(model, dev_utts, max_symbols_per_frame=8):
    fusion = decoding.FusionConfig(method="none", beam_size=1,
                                   max_symbols_per_frame=max_symbols_per_frame)
    pairs = []
    for utt in dev_utts:
        res = decoding.greedy_decode(model, utt.x, fusion)
        pairs.append((utt.y, res.tokens))
    return data_mod.corpus_wer(pairs).rate


def train_e2e(cfg, log=print):
    """Train one E2E model per the config; returns (model, epoch logs).

    Per epoch: mean E2E and internal-LM losses over the training set, greedy
    dev WER, and dev internal-LM perplexity.  The checkpoint with the best
    dev WER (earliest epoch on ties) is kept at output_dir/model.ckpt.
    """
    if not cfg.data.train_utts or not cfg.data.dev_utts:
        raise ValueError("data.train_utts and data.dev_utts must be set")
    train_utts = data_mod.read_utterances(cfg.data.train_utts)
    dev_utts = data_mod.read_utterances(cfg.data.dev_utts)
    if not train_utts:
        raise ValueError("training set is empty")
    model = _init_e2e(cfg)
    alpha = cfg.alpha() if cfg.train.loss == "ilmt" else 0.0
    opt = Adam(model.params, lr=cfg.train.lr, clip_norm=cfg.train.clip_norm)
    rng = np.random.default_rng(cfg.seed)
    out = _ensure_dir(cfg.output_dir)
    ckpt_path = os.path.join(out, "model.ckpt")
    history = []
    best = None
    dev_text = [u.y for u in dev_utts]
    for epoch in range(1, cfg.train.epochs + 1):
        order = rng.permutation(len(train_utts))
        e2e_sum = 0.0
        ilm_sum = 0.0
        for start in range(0, len(order), cfg.train.batch_size):
            model.params.zero_grads()
            for idx in order[start:start + cfg.train.batch_size]:
                utt = train_utts[idx]
                rep = losses.ilmt_loss(model.family, model.params, model.cfg,
                                       utt.x, utt.y, alpha)
                e2e_sum += rep.e2e_part
                ilm_sum += rep.ilm_part
            opt.step()
        dev_wer = _greedy_dev_wer(model, dev_utts) if dev_utts else float("nan")
        dev_ppl = (lm_mod.perplexity(_ilm_scorer(model), dev_text).perplexity
                   if dev_text else float("nan"))
        entry = EpochLog(epoch=epoch,
                         e2e_loss=e2e_sum / len(train_utts),
                         ilm_loss=ilm_sum / len(train_utts),
                         dev_wer=dev_wer, dev_ilm_ppl=dev_ppl)
        history.append(entry)
        log(f"epoch {epoch:3d}: e2e {entry.e2e_loss:9.4f}  "
            f"ilm {entry.ilm_loss:8.4f}  dev WER {entry.dev_wer:6.3f}  "
            f"dev ILM ppl {entry.dev_ilm_ppl:9.2f}")
        if best is None or entry.dev_wer < best:
            best = entry.dev_wer
            model.save(ckpt_path)
    with open(os.path.join(out, "train_log.jsonl"), "w", encoding="utf-8") as fh:
        for e in history:
            fh.write(json.dumps({
                "epoch": e.epoch, "e2e_loss": e.e2e_loss,
                "ilm_loss": e.ilm_loss, "dev_wer": e.dev_wer,
                "dev_ilm_ppl": e.dev_ilm_ppl}) + "\n")
    header, store = load_checkpoint(ckpt_path)
    best_model = models.Model(model.family, model.cfg, store)
    return best_model, history


# ---------------------------------------------------------------------------
# train-lm
# ---------------------------------------------------------------------------

def train_lm(cfg, log=print):
    """Train the LSTM-LM on the configured text; checkpoint at lm.ckpt."""
    sentences = data_mod.read_text(cfg.lm.train_text)
    lcfg = lm_config(cfg)
    params, history = lm_mod.lm_train(
        sentences, lcfg, seed=cfg.seed, epochs=cfg.lm.epochs, lr=cfg.lm.lr,
        clip_norm=cfg.lm.clip_norm, batch_size=cfg.lm.batch_size, log=log)
    out = _ensure_dir(cfg.output_dir)
    ckpt_path = os.path.join(out, "lm.ckpt")
    header = {
        "family": "lm",
        "vocab_size": lcfg.vocab_size,
        "dims": {k: getattr(lcfg, k) for k in lcfg.__dataclass_fields__},
    }
    from .params import save_checkpoint

    save_checkpoint(ckpt_path, header, params)
    with open(os.path.join(out, "lm_log.jsonl"), "w", encoding="utf-8") as fh:
        for i, ce in enumerate(history, start=1):
            fh.write(json.dumps({"epoch": i, "train_ce": ce}) + "\n")
    return ckpt_path, history


def load_lm_scorer(path):
    header, store = load_checkpoint(path)
    if header.get("family") != "lm":
        raise ValueError(f"{path}: not an LM checkpoint")
    lcfg = lm_mod.LmConfig(**header["dims"])
    return lm_mod.LmScorer(store, lcfg)


# ---------------------------------------------------------------------------
# evaluate (the result grid) and sweep
# ---------------------------------------------------------------------------

def _method_grid(cfg, method):
    ext = [float(v) for v in cfg.eval.lam_ext_grid]
    ilm = [float(v) for v in cfg.eval.lam_ilm_grid]
    if method == "none":
        return [(0.0, 0.0)]
    if method == "shallow_fusion":
        return [(e, 0.0) for e in ext]
    return [(e, i) for e in ext for i in ilm]


def _decode_set(model, utts, fusion, ext_lm, src_lm):
    records = []
    for utt in utts:
        best = decoding.beam_search(model, utt.x, fusion,
                                    ext_lm=ext_lm, src_lm=src_lm)[0]
        records.append({
            "id": utt.id,
            "ref": [int(t) for t in utt.y],
            "hyp": [int(t) for t in best.tokens],
            "score_total": best.score_total,
            "score_e2e": best.score_e2e,
            "score_ext_lm": best.score_ext,
            "score_ilm": best.score_ilm,
        })
    return records


def wer_from_records(records):
    return data_mod.corpus_wer([(r["ref"], r["hyp"]) for r in records]).rate


def cmd_evaluate(cfg, log=print):
    """Fill the (train loss) x (fusion method) grid.

    Per cell: tune the fusion weights on the eval dev set over the config
    grid, decode the test set with the winner, report dev/test WER and test
    WERR against the (standard, none) baseline.  Decode records and the
    machine-readable grid land under output_dir.
    """
    ev = cfg.eval
    checkpoints = {"standard": ev.checkpoint_standard, "ilmt": ev.checkpoint_ilmt}
    e2e = {}
    for name, path in checkpoints.items():
        if not path:
            raise ValueError(f"eval.checkpoint_{name} is not set")
        e2e[name] = models.Model.load(path)
    ext_lm = load_lm_scorer(ev.ext_lm) if ev.ext_lm else None
    src_lm = load_lm_scorer(ev.src_lm) if ev.src_lm else None
    for name, model in e2e.items():
        if model.cfg.vocab_size != cfg.model.vocab_size:
            raise ValueError(
                f"vocabulary mismatch: config has {cfg.model.vocab_size}, "
                f"{name} checkpoint has {model.cfg.vocab_size}")
        if ext_lm and ext_lm.cfg.vocab_size != model.cfg.vocab_size:
            raise ValueError(
                "vocabulary mismatch between E2E model and external LM")
        if src_lm and src_lm.cfg.vocab_size != model.cfg.vocab_size:
            raise ValueError(
                "vocabulary mismatch between E2E model and source LM")
    dev = data_mod.read_utterances(ev.dev_utts)
    test = data_mod.read_utterances(ev.test_utts)
    out = _ensure_dir(cfg.output_dir)
    dec_dir = _ensure_dir(os.path.join(out, "decodes"))

    cells = []
    for loss_name in LOSSES:
        model = e2e[loss_name]
        for method in METHODS:
            sweep = decoding.sweep_lambdas(
                model, dev, _method_grid(cfg, method), method, ev.beam_size,
                ext_lm=ext_lm, src_lm=src_lm,
                max_symbols_per_frame=ev.max_symbols_per_frame)
            fusion = decoding.FusionConfig(
                method=method, lam_ext=sweep.best_lam_ext,
                lam_ilm=sweep.best_lam_ilm, beam_size=ev.beam_size,
                max_symbols_per_frame=ev.max_symbols_per_frame).validate()
            records = _decode_set(model, test, fusion, ext_lm, src_lm)
            rec_path = os.path.join(dec_dir, f"{loss_name}_{method}.jsonl")
            with open(rec_path, "w", encoding="utf-8") as fh:
                for r in records:
                    fh.write(json.dumps(r) + "\n")
            cell = {
                "loss": loss_name,
                "method": method,
                "lam_ext": sweep.best_lam_ext,
                "lam_ilm": sweep.best_lam_ilm,
                "dev_wer": sweep.best_wer,
                "test_wer": wer_from_records(records),
            }
            cells.append(cell)
            log(f"[{loss_name:8s} | {method:14s}] dev WER {cell['dev_wer']:.4f} "
                f"test WER {cell['test_wer']:.4f} "
                f"(lam_ext={cell['lam_ext']}, lam_ilm={cell['lam_ilm']})")
    baseline = next(c for c in cells if c["loss"] == "standard"
                    and c["method"] == "none")["test_wer"]
    for cell in cells:
        if cell["loss"] == "standard" and cell["method"] == "none":
            cell["test_werr"] = None
        else:
            cell["test_werr"] = data_mod.werr(baseline, cell["test_wer"])
    grid = {"config": cfg.to_dict(), "baseline_test_wer": baseline,
            "cells": cells}
    with open(os.path.join(out, "results.json"), "w", encoding="utf-8") as fh:
        json.dump(grid, fh, sort_keys=True, indent=1)
        fh.write("\n")
    table = format_grid(cells)
    with open(os.path.join(out, "results.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    log(table)
    return grid


def format_grid(cells):
    lines = [
        f"{'train loss':<12} {'method':<16} {'lam_E':>6} {'lam_I':>6} "
        f"{'dev WER':>8} {'test WER':>9} {'test WERR':>10}"
    ]
    lines.append("-" * len(lines[0]))
    for c in cells:
        werr_s = "-" if c["test_werr"] is None else f"{100 * c['test_werr']:9.1f}%"
        lines.append(
            f"{c['loss']:<12} {c['method']:<16} {c['lam_ext']:>6.2f} "
            f"{c['lam_ilm']:>6.2f} {c['dev_wer']:>8.4f} {c['test_wer']:>9.4f} "
            f"{werr_s:>10}")
    return "\n".join(lines)


def cmd_sweep(cfg, log=print):
    """Standalone weight sweep for one method/checkpoint; persists the grid."""
    model = models.Model.load(cfg.sweep.checkpoint)
    ev = cfg.eval
    ext_lm = load_lm_scorer(ev.ext_lm) if ev.ext_lm else None
    src_lm = load_lm_scorer(ev.src_lm) if ev.src_lm else None
    dev = data_mod.read_utterances(ev.dev_utts)
    result = decoding.sweep_lambdas(
        model, dev, _method_grid(cfg, cfg.sweep.method), cfg.sweep.method,
        ev.beam_size, ext_lm=ext_lm, src_lm=src_lm,
        max_symbols_per_frame=ev.max_symbols_per_frame)
    out = _ensure_dir(cfg.output_dir)
    payload = {
        "config": cfg.to_dict(),
        "method": result.method,
        "best": {"lam_ext": result.best_lam_ext,
                 "lam_ilm": result.best_lam_ilm,
                 "dev_wer": result.best_wer},
        "table": [{"lam_ext": e, "lam_ilm": i, "dev_wer": w}
                  for e, i, w in result.table],
    }
    with open(os.path.join(out, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    for e, i, w in result.table:
        log(f"lam_ext={e:<5.2f} lam_ilm={i:<5.2f} dev WER {w:.4f}")
    log(f"best: lam_ext={result.best_lam_ext} lam_ilm={result.best_lam_ilm} "
        f"dev WER {result.best_wer:.4f}")
    return payload
