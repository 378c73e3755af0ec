"""Run configuration: one flat dataclass, a tiny key=value file format,
and strict validation with field-naming errors."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig

SCHEDULES = ("uniform", "semantic")


@dataclass
class RunConfig:
    # model
    backbone: str = "transformer"
    schedule: str = "semantic"
    dim: int = 256
    n_heads: int = 4
    enc_layers: int = 8
    dec_layers: int = 8
    ffn_mult: int = 4
    state_size: int = 16
    conv_width: int = 4
    expand: int = 2
    max_source_len: int = 64
    max_target_len: int = 16
    diffusion_steps: int = 50
    sample_steps: int = 10
    # training
    train_steps: int = 5000
    batch_size: int = 32
    lr: float = 5e-5
    warmup_steps: int = 1000
    warmup_start_lr: float = 5e-8
    weight_decay: float = 0.01
    cls_weight: float = 1.0
    length_weight: float = 1.0
    disable_similarity_loss: bool = False
    no_detach_target: bool = False
    seed: int = 0
    log_every: int = 50
    eval_every: int = 1000
    eval_samples: int = 32
    early_stop_rouge_l: float = 0.0
    # data and io
    train_path: str = ""
    dev_path: str = ""
    vocab_min_count: int = 1
    checkpoint_path: str = "model.ckpt"
    resume: str = ""
    metrics_path: str = ""

    def validate(self) -> None:
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.backbone == "mamba" and self.schedule == "semantic":
            raise ConfigError(
                "the semantic schedule needs encoder attention scores, which the "
                "state-space backbone does not produce; use backbone=transformer "
                "or schedule=uniform"
            )
        if not 1 <= self.sample_steps <= self.diffusion_steps:
            raise ConfigError(
                f"need 1 <= sample_steps <= diffusion_steps, got "
                f"{self.sample_steps} and {self.diffusion_steps}"
            )
        for name in ("dim", "n_heads", "enc_layers", "dec_layers", "ffn_mult",
                     "state_size", "conv_width", "expand", "max_source_len",
                     "max_target_len", "train_steps", "batch_size", "log_every",
                     "eval_every", "eval_samples", "vocab_min_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("lr", "warmup_start_lr", "weight_decay", "cls_weight",
                     "length_weight", "early_stop_rouge_l"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        self.model_config(vocab_size=RESERVED_MIN).validate()

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            backbone=self.backbone,
            dim=self.dim,
            n_heads=self.n_heads,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            ffn_mult=self.ffn_mult,
            state_size=self.state_size,
            conv_width=self.conv_width,
            expand=self.expand,
            max_source_len=self.max_source_len,
            max_target_len=self.max_target_len,
            big_t=self.diffusion_steps,
        )


RESERVED_MIN = 7  # smallest legal vocabulary: the reserved ids plus one token

_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"field '{name}' expects a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as err:
        raise ConfigError(f"field '{name}' expects {kind}, got {raw!r}") from err
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """key = value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def make_run_config(mapping: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for key, raw in mapping.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration field '{key}'")
        setattr(cfg, key, _coerce(key, raw))
    cfg.validate()
    return cfg


def load_run_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    mapping = parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
    if overrides:
        mapping.update(overrides)
    return make_run_config(mapping)
