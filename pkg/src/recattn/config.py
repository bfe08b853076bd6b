"""Run configuration: JSON document + command-line overrides.

Unknown keys are rejected; missing keys take documented defaults; the
effective configuration is echoed to ``config.echo.json`` in the output
directory of every command.
"""

import json
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError

# JSON key -> attribute (only where the key is not a valid identifier).
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}


@dataclass
class RunConfig:
    seed: int = 0
    # Architecture.
    time_steps: int = 10
    hidden: int = 32
    lstm_layers: int = 2
    attention_shared: bool = False
    # Loss / fusion.
    lam: float = 1.0
    fusion_global: float = 1.0
    fusion_local: float = 1.0
    # Optimization.
    lr: float = 0.2
    epochs: int = 10
    batch_size: int = 8
    # Patches.
    patch_policy: str = "random"  # training-time selection; eval uses index 0
    patch_size: int = 32
    eval_patch_index: int = 0
    # Local-stream variant (ablation harness).
    local_mode: str = "attention"
    sum_k: int = 0  # 0 means T
    # Dataset.
    data_dir: str = "data"
    out_dir: str = "out"
    classes: int = 8
    per_class_train: int = 100
    per_class_test: int = 40
    channels: int = 1
    image_size: int = 32
    motif_size: int = 5
    noise_std: float = 0.3
    # Ablation sweep.
    sweep_steps: list = field(default_factory=lambda: [5, 10, 15])

    @property
    def fusion(self):
        return (self.fusion_global, self.fusion_local)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(attr, value):
    default = getattr(RunConfig(), attr)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("true", "1", "yes"):
            return True
        if str(value).lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{attr}: expected a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{attr}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{attr}: expected a number, got {value!r}") from None
    if isinstance(default, list):
        if isinstance(value, list):
            return [int(v) for v in value]
        return [int(v) for v in str(value).split(":") if v]
    return str(value)


def _apply(cfg, key, value):
    attr = _KEY_TO_ATTR.get(key, key)
    if attr not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, attr, _coerce(attr, value))


def load_config(path=None, overrides=None):
    """Build a RunConfig from an optional JSON file plus key=value overrides."""
    cfg = RunConfig()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        for key, value in doc.items():
            _apply(cfg, key, value)
    for key, value in (overrides or {}).items():
        _apply(cfg, key, value)
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.time_steps < 1:
        raise ConfigError(f"time_steps must be >= 1, got {cfg.time_steps}")
    if cfg.hidden < 1 or cfg.lstm_layers < 1:
        raise ConfigError("hidden size and lstm_layers must be >= 1")
    if cfg.lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {cfg.lam}")
    if cfg.lr <= 0:
        raise ConfigError(f"lr must be positive, got {cfg.lr}")
    if cfg.batch_size < 1 or cfg.epochs < 0:
        raise ConfigError("batch_size must be >= 1 and epochs >= 0")
    if cfg.patch_policy not in ("random", "first"):
        raise ConfigError(f"patch_policy must be 'random' or 'first', got {cfg.patch_policy!r}")
    from .model import LOCAL_MODES
    if cfg.local_mode not in LOCAL_MODES:
        raise ConfigError(f"local_mode must be one of {LOCAL_MODES}, got {cfg.local_mode!r}")
    if cfg.sum_k < 0 or cfg.sum_k > cfg.time_steps:
        raise ConfigError(f"sum_k must be in [0,{cfg.time_steps}], got {cfg.sum_k}")


def to_dict(cfg):
    out = {}
    for f in fields(RunConfig):
        key = _ATTR_TO_KEY.get(f.name, f.name)
        out[key] = getattr(cfg, f.name)
    return out


def echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.echo.json"), "w", encoding="utf-8") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_set_args(pairs):
    """Parse repeated --set key=value flags."""
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out
