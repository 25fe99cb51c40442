"""Synthetic domain-shifted corpus generation, corpus file IO, and WER.

Utterances are sampled from a per-domain token-bigram table and rendered as
per-token prototype vectors plus Gaussian noise, a few frames per token.
Two preset domains ship with the package: they share the vocabulary and the
acoustic rendering but differ strongly in bigram statistics, which is the
distribution shift the LM-fusion experiments exploit.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class DomainSpec:
    name: str
    init_probs: np.ndarray  # (V,)
    trans: np.ndarray  # (V, V), rows normalized
    prototypes: np.ndarray  # (V, d_in), shared across paired domains
    frames_per_token: tuple = (2, 4)  # inclusive range
    noise_sigma: float = 1.0
    length_range: tuple = (3, 12)  # tokens per sentence, inclusive

    @property
    def vocab_size(self):
        return self.trans.shape[0]

    @property
    def d_in(self):
        return self.prototypes.shape[1]

    def validate(self):
        V = self.vocab_size
        if self.init_probs.shape != (V,) or self.trans.shape != (V, V):
            raise ValueError("bigram table shapes are inconsistent")
        if not np.allclose(self.init_probs.sum(), 1.0, atol=1e-9):
            raise ValueError("initial token distribution is not normalized")
        if not np.allclose(self.trans.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("bigram transition rows are not normalized")
        if np.any(np.diag(self.trans) > 0.995):
            bad = int(np.argmax(np.diag(self.trans)))
            raise ValueError(f"token {bad} is (near-)absorbing")
        if self.frames_per_token[0] < 1:
            raise ValueError("frames_per_token must start at >= 1")
        return self


@dataclass
class Utterance:
    id: str
    x: np.ndarray  # (T, d_in)
    y: list  # token ids
    domain: str


def stationary_distribution(trans, iters=200):
    pi = np.full(trans.shape[0], 1.0 / trans.shape[0])
    for _ in range(iters):
        pi = pi @ trans
    return pi / pi.sum()


def bigram_kl(spec_a, spec_b):
    """KL divergence (nats) between the bigram next-token distributions,
    averaged under spec_a's stationary state distribution."""
    pi = stationary_distribution(spec_a.trans)
    ratio = np.log(spec_a.trans) - np.log(spec_b.trans)
    return float(np.sum(pi[:, None] * spec_a.trans * ratio))


def sample_sentence(spec, rng):
    lo, hi = spec.length_range
    length = int(rng.integers(lo, hi + 1))
    tokens = [int(rng.choice(spec.vocab_size, p=spec.init_probs))]
    while len(tokens) < length:
        tokens.append(int(rng.choice(spec.vocab_size, p=spec.trans[tokens[-1]])))
    return tokens


def render_features(spec, tokens, rng):
    lo, hi = spec.frames_per_token
    frames = []
    for t in tokens:
        k = int(rng.integers(lo, hi + 1))
        block = np.tile(spec.prototypes[t], (k, 1))
        if spec.noise_sigma > 0:
            block = block + rng.normal(0.0, spec.noise_sigma, size=block.shape)
        frames.append(block)
    return np.vstack(frames)


@dataclass
class CorpusSplits:
    train: list
    dev: list
    test: list


def generate_corpus(spec, n_utts, seed, split_fracs=(0.8, 0.1, 0.1)):
    """Sample utterances from a domain and split them train/dev/test.

    Fully deterministic in (spec, n_utts, seed); split membership is by
    utterance index, so ids are disjoint across splits.
    """
    spec.validate()
    if n_utts < 3:
        raise ValueError("need at least 3 utterances for three splits")
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(n_utts):
        y = sample_sentence(spec, rng)
        x = render_features(spec, y, rng)
        utts.append(Utterance(id=f"{spec.name}-{i:05d}", x=x, y=y,
                              domain=spec.name))
    n_dev = max(1, int(round(n_utts * split_fracs[1])))
    n_test = max(1, int(round(n_utts * split_fracs[2])))
    n_train = n_utts - n_dev - n_test
    if n_train < 1:
        raise ValueError("split fractions leave no training utterances")
    return CorpusSplits(train=utts[:n_train],
                        dev=utts[n_train:n_train + n_dev],
                        test=utts[n_train + n_dev:])


def generate_text(spec, n_sentences, seed):
    """Text-only sentences (token id lists) for LM training."""
    spec.validate()
    rng = np.random.default_rng(seed)
    return [sample_sentence(spec, rng) for _ in range(n_sentences)]


# ---------------------------------------------------------------------------
# Preset domain pair
# ---------------------------------------------------------------------------

def _bigram(vocab_size, stride_a, stride_b, p_a, p_b):
    rest = (1.0 - p_a - p_b) / (vocab_size - 2)
    trans = np.full((vocab_size, vocab_size), rest)
    for i in range(vocab_size):
        trans[i, (i + stride_a) % vocab_size] = p_a
        trans[i, (i + stride_b) % vocab_size] = p_b
    return trans / trans.sum(axis=1, keepdims=True)


def preset_domain_pair(vocab_size=32, d_in=8, noise_sigma=0.7,
                       proto_seed=90210, min_kl=0.5):
    """The shipped (source, target) pair: shared prototypes and rendering,
    strongly different bigram statistics (KL well above min_kl nats)."""
    if vocab_size < 6:
        raise ValueError("the preset domain pair needs vocab_size >= 6")
    rng = np.random.default_rng(proto_seed)
    prototypes = rng.normal(0.0, 1.0, size=(vocab_size, d_in))
    init = np.full(vocab_size, 1.0 / vocab_size)
    source = DomainSpec(
        name="source",
        init_probs=init,
        trans=_bigram(vocab_size, 1, 2, 0.62, 0.20),
        prototypes=prototypes,
        noise_sigma=noise_sigma,
    ).validate()
    target = DomainSpec(
        name="target",
        init_probs=init,
        trans=_bigram(vocab_size, vocab_size - 1, vocab_size - 3, 0.62, 0.20),
        prototypes=prototypes,
        noise_sigma=noise_sigma,
    ).validate()
    kl = bigram_kl(source, target)
    if kl <= min_kl:
        raise ValueError(
            f"preset domains are not separated enough: KL {kl:.3f} nats")
    return source, target


# ---------------------------------------------------------------------------
# Corpus file IO
# ---------------------------------------------------------------------------

def write_utterances(path, utts):
    """Line-delimited records with the feature matrix flattened after its
    shape header."""
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            rec = {
                "id": u.id,
                "domain": u.domain,
                "tokens": [int(t) for t in u.y],
                "shape": [int(s) for s in u.x.shape],
                "features": [float(v) for v in u.x.reshape(-1)],
            }
            fh.write(json.dumps(rec) + "\n")


def read_utterances(path):
    utts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            x = np.asarray(rec["features"], dtype=np.float64).reshape(rec["shape"])
            utts.append(Utterance(id=rec["id"], x=x, y=list(rec["tokens"]),
                                  domain=rec["domain"]))
    return utts


def write_text(path, sentences):
    """Token-id lines, one sentence per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(str(int(t)) for t in s) + "\n")


def read_text(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append([int(t) for t in line.split()])
    return out


# ---------------------------------------------------------------------------
# WER
# ---------------------------------------------------------------------------

@dataclass
class WerCounts:
    substitutions: int
    insertions: int
    deletions: int
    n_ref: int

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self):
        return self.errors / max(1, self.n_ref)


def wer(ref, hyp):
    """Token-level Levenshtein error counts and rate for one pair."""
    ref = [int(t) for t in ref]
    hyp = [int(t) for t in hyp]
    s, i, d = kernels.edit_counts(ref, hyp)
    return WerCounts(substitutions=int(s), insertions=int(i),
                     deletions=int(d), n_ref=len(ref))


def corpus_wer(pairs):
    """Pooled edit counts over (ref, hyp) pairs; the corpus rate is total
    errors over total reference tokens, not a mean of per-utterance rates."""
    total = WerCounts(0, 0, 0, 0)
    for ref, hyp in pairs:
        c = wer(ref, hyp)
        total = WerCounts(
            total.substitutions + c.substitutions,
            total.insertions + c.insertions,
            total.deletions + c.deletions,
            total.n_ref + c.n_ref,
        )
    return total


def werr(baseline_rate, system_rate):
    """Relative WER reduction; positive numbers mean improvement."""
    if baseline_rate == 0:
        return 0.0
    return (baseline_rate - system_rate) / baseline_rate
