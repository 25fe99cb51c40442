"""Experiment configuration: one human-editable YAML file, schema-validated
before any compute runs.  Unknown keys are rejected everywhere.

Defaults follow the reference setup where one exists (beam size 25,
internal-LM loss weight 0.4 for RNN-T and 1.0 for AED) and desk-scale
model dimensions otherwise.
"""

import dataclasses
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    family: str = "rnnt"
    vocab_size: int = 32
    d_in: int = 8
    enc_layers: int = 2
    enc_hidden: int = 64
    pred_layers: int = 1
    pred_hidden: int = 64
    embed_dim: int = 64
    joint_dim: int = 64
    dec_layers: int = 1
    dec_hidden: int = 64
    attn_dim: int = 32
    attn_filters: int = 4
    attn_kernel: int = 3


@dataclass
class TrainSection:
    loss: str = "standard"  # standard | ilmt
    alpha: float = -1.0  # < 0 means "family default": 0.4 rnnt, 1.0 aed
    epochs: int = 12
    batch_size: int = 8
    lr: float = 1e-3
    clip_norm: float = 5.0
    init_checkpoint: str = ""


@dataclass
class DataSection:
    train_utts: str = ""
    dev_utts: str = ""
    test_utts: str = ""


@dataclass
class LmSection:
    layers: int = 1
    hidden: int = 64
    embed_dim: int = 64
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    clip_norm: float = 5.0
    train_text: str = ""


@dataclass
class EvalSection:
    beam_size: int = 25
    max_symbols_per_frame: int = 8
    dev_utts: str = ""
    test_utts: str = ""
    checkpoint_standard: str = ""
    checkpoint_ilmt: str = ""
    ext_lm: str = ""
    src_lm: str = ""
    lam_ext_grid: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6])
    lam_ilm_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])


@dataclass
class SweepSection:
    method: str = "ilme"
    checkpoint: str = ""


@dataclass
class GenerateSection:
    n_train: int = 300
    n_dev: int = 60
    n_test: int = 120
    n_lm_text: int = 600
    text_pool_factor: int = 10
    vocab_size: int = 32
    d_in: int = 8
    noise_sigma: float = 0.7


@dataclass
class ExperimentConfig:
    seed: int = 17
    output_dir: str = "runs/exp"
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    lm: LmSection = field(default_factory=LmSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    generate: GenerateSection = field(default_factory=GenerateSection)

    def alpha(self):
        if self.train.alpha >= 0:
            return self.train.alpha
        return 0.4 if self.model.family == "rnnt" else 1.0

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTION_TYPES = {
    "model": ModelSection,
    "train": TrainSection,
    "data": DataSection,
    "lm": LmSection,
    "eval": EvalSection,
    "sweep": SweepSection,
    "generate": GenerateSection,
}


def _build_section(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        want = fields[key].type
        if want is int and isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected int, got bool")
        if want is int and not isinstance(value, int):
            raise ConfigError(f"{path}.{key}: expected int, got {type(value).__name__}")
        if want is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{path}.{key}: expected number")
            value = float(value)
        if want is str and not isinstance(value, str):
            raise ConfigError(f"{path}.{key}: expected string")
        if want is list and not isinstance(value, list):
            raise ConfigError(f"{path}.{key}: expected list")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - ({"seed", "output_dir"} | set(_SECTION_TYPES))
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    cfg = ExperimentConfig()
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
            raise ConfigError("seed: expected int")
        cfg.seed = raw["seed"]
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str):
            raise ConfigError("output_dir: expected string")
        cfg.output_dir = raw["output_dir"]
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            setattr(cfg, name, _build_section(cls, raw[name], name))
    return validate(cfg)


def validate(cfg):
    if cfg.model.family not in ("rnnt", "aed"):
        raise ConfigError(f"model.family must be rnnt or aed, got {cfg.model.family!r}")
    if cfg.train.loss not in ("standard", "ilmt"):
        raise ConfigError(f"train.loss must be standard or ilmt, got {cfg.train.loss!r}")
    if cfg.train.alpha < 0 and cfg.train.alpha != -1.0:
        raise ConfigError("train.alpha must be >= 0 (or omitted for the family default)")
    if cfg.eval.beam_size < 1:
        raise ConfigError("eval.beam_size must be >= 1")
    if cfg.sweep.method not in ("none", "shallow_fusion", "density_ratio", "ilme"):
        raise ConfigError(f"sweep.method is invalid: {cfg.sweep.method!r}")
    for grid_name in ("lam_ext_grid", "lam_ilm_grid"):
        grid = getattr(cfg.eval, grid_name)
        if not grid:
            raise ConfigError(f"eval.{grid_name} must be nonempty")
        for v in grid:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"eval.{grid_name}: entries must be numbers >= 0")
    if cfg.model.vocab_size < 2:
        raise ConfigError("model.vocab_size must be >= 2")
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def model_config(cfg):
    """Build the family-specific model config from the experiment config."""
    from .models import AedConfig, RnntConfig

    m = cfg.model
    if m.family == "rnnt":
        return RnntConfig(
            vocab_size=m.vocab_size, d_in=m.d_in, enc_layers=m.enc_layers,
            enc_hidden=m.enc_hidden, pred_layers=m.pred_layers,
            pred_hidden=m.pred_hidden, embed_dim=m.embed_dim,
            joint_dim=m.joint_dim)
    return AedConfig(
        vocab_size=m.vocab_size, d_in=m.d_in, enc_layers=m.enc_layers,
        enc_hidden=m.enc_hidden, dec_layers=m.dec_layers,
        dec_hidden=m.dec_hidden, attn_dim=m.attn_dim,
        attn_filters=m.attn_filters, attn_kernel=m.attn_kernel)


def lm_config(cfg):
    from .lm import LmConfig

    return LmConfig(vocab_size=cfg.model.vocab_size, layers=cfg.lm.layers,
                    hidden=cfg.lm.hidden, embed_dim=cfg.lm.embed_dim)
