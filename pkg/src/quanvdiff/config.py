"""Run configuration: flat key-value text with section headers.

Every key mirrors the corresponding component's field name one-to-one;
unknown sections or keys are rejected (no silent typos), and cross-component
constraints are validated before any work starts.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .denoiser import DenoiserConfig
from .diffusion import SCHEDULE_KINDS, TrainConfig
from .quanv import BottleneckConfig, QuanvConfig


class ConfigError(ValueError):
    """Configuration/validation failure; names the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_tuple(raw: str) -> Tuple[int, ...]:
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())

_SCHEMA = {
    "model": {
        "image_size": int,
        "base_channels": int,
        "channel_multipliers": _parse_int_tuple,
        "res_blocks_per_level": int,
        "time_embed_dim": int,
        "num_classes": int,
        "quantum_position": str,
        "norm_groups": int,
        "self_conditioning": _parse_bool,
    },
    "quanv": {
        "patch_size": int,
        "stride": int,
        "family": str,
        "n_layers": int,
    },
    "bottleneck": {
        "rho": float,
        "family": str,
        "n_layers": int,
    },
    "schedule": {
        "kind": str,
        "T": int,
    },
    "train": {
        "batch_size": int,
        "learning_rate": float,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_eps": float,
        "self_cond_prob": float,
        "p2_gamma": float,
        "p2_k": float,
        "total_steps": int,
        "seed": int,
        "checkpoint_every": int,
        "precision": str,
    },
    "data": {
        "source": str,
        "root": str,
        "n_per_class": int,
        "val_fraction": float,
    },
    "output": {
        "dir": str,
    },
}


@dataclass
class RunConfig:
    """Merged, validated view of all component configurations."""

    denoiser: DenoiserConfig
    train: TrainConfig
    schedule_kind: str = "cosine"
    schedule_T: int = 1000
    checkpoint_every: int = 500
    precision: str = "f64"
    data_source: str = "toy"
    data_root: Optional[str] = None
    n_per_class: int = 200
    val_fraction: float = 0.1
    output_dir: str = "runs/out"
    raw: Dict[str, str] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.train.seed

    def echo(self) -> Dict[str, str]:
        """Flat section.key -> value mapping (checkpoint config echo)."""
        d = self.denoiser
        out = {
            "model.image_size": d.image_size,
            "model.base_channels": d.base_channels,
            "model.channel_multipliers": ",".join(map(str, d.channel_multipliers)),
            "model.res_blocks_per_level": d.res_blocks_per_level,
            "model.time_embed_dim": d.time_embed_dim,
            "model.num_classes": d.num_classes,
            "model.quantum_position": d.quantum_position,
            "model.norm_groups": d.norm_groups,
            "model.self_conditioning": d.self_conditioning,
            "quanv.patch_size": d.quanv.patch_size,
            "quanv.family": d.quanv.family,
            "quanv.n_layers": d.quanv.n_layers,
            "bottleneck.rho": d.bottleneck.rho,
            "bottleneck.family": d.bottleneck.family,
            "bottleneck.n_layers": d.bottleneck.n_layers,
            "schedule.kind": self.schedule_kind,
            "schedule.T": self.schedule_T,
            "train.batch_size": self.train.batch_size,
            "train.learning_rate": self.train.learning_rate,
            "train.adam_beta1": self.train.adam_beta1,
            "train.adam_beta2": self.train.adam_beta2,
            "train.adam_eps": self.train.adam_eps,
            "train.self_cond_prob": self.train.self_cond_prob,
            "train.p2_gamma": self.train.p2_gamma,
            "train.p2_k": self.train.p2_k,
            "train.total_steps": self.train.total_steps,
            "train.seed": self.train.seed,
            "train.checkpoint_every": self.checkpoint_every,
            "train.precision": self.precision,
            "data.source": self.data_source,
            "data.root": self.data_root or "",
            "data.n_per_class": self.n_per_class,
            "data.val_fraction": self.val_fraction,
        }
        return {k: str(v) for k, v in out.items()}


def denoiser_config_from_echo(echo: Dict[str, str]) -> DenoiserConfig:
    """Rebuild the model configuration from a checkpoint's config echo."""
    get = echo.get
    return DenoiserConfig(
        image_size=int(get("model.image_size", 8)),
        base_channels=int(get("model.base_channels", 12)),
        channel_multipliers=_parse_int_tuple(get("model.channel_multipliers", "1,2")),
        res_blocks_per_level=int(get("model.res_blocks_per_level", 1)),
        time_embed_dim=int(get("model.time_embed_dim", 32)),
        num_classes=int(get("model.num_classes", 4)),
        quantum_position=get("model.quantum_position", "none"),
        norm_groups=int(get("model.norm_groups", 3)),
        self_conditioning=_parse_bool(get("model.self_conditioning", "false")),
        quanv=QuanvConfig(
            patch_size=int(get("quanv.patch_size", 2)),
            family=get("quanv.family", "HQConv"),
            n_layers=int(get("quanv.n_layers", 1))),
        bottleneck=BottleneckConfig(
            rho=float(get("bottleneck.rho", 0.2)),
            family=get("bottleneck.family", "HQConv"),
            n_layers=int(get("bottleneck.n_layers", 1))),
    )


def schedule_from_echo(echo: Dict[str, str]) -> Tuple[str, int]:
    return echo.get("schedule.kind", "cosine"), int(echo.get("schedule.T", 1000))


def parse_config(path) -> RunConfig:
    """Parse and validate a config file; raises ConfigError on any problem."""
    if not os.path.exists(path):
        raise ConfigError("config", f"file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (schedule.T)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError("config", f"parse failure: {exc}") from exc

    values: Dict[str, Dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(section, "unknown section")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            try:
                values[section][key] = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", f"bad value {raw!r}: {exc}") \
                    from exc

    def get(section, key, default):
        return values.get(section, {}).get(key, default)

    try:
        quanv = QuanvConfig(
            patch_size=get("quanv", "patch_size", 2),
            stride=get("quanv", "stride", None),
            family=get("quanv", "family", "HQConv"),
            n_layers=get("quanv", "n_layers", 1))
    except ValueError as exc:
        raise ConfigError("quanv", str(exc)) from exc
    try:
        bneck = BottleneckConfig(
            rho=get("bottleneck", "rho", 0.2),
            family=get("bottleneck", "family", "HQConv"),
            n_layers=get("bottleneck", "n_layers", 1))
    except ValueError as exc:
        raise ConfigError("bottleneck.rho", str(exc)) from exc
    try:
        den = DenoiserConfig(
            image_size=get("model", "image_size", 8),
            base_channels=get("model", "base_channels", 12),
            channel_multipliers=tuple(get("model", "channel_multipliers", (1, 2))),
            res_blocks_per_level=get("model", "res_blocks_per_level", 1),
            time_embed_dim=get("model", "time_embed_dim", 32),
            num_classes=get("model", "num_classes", 4),
            quantum_position=get("model", "quantum_position", "none"),
            norm_groups=get("model", "norm_groups", 3),
            self_conditioning=get("model", "self_conditioning", False),
            quanv=quanv, bottleneck=bneck)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc
    try:
        train = TrainConfig(
            batch_size=get("train", "batch_size", 32),
            learning_rate=get("train", "learning_rate", 1e-3),
            adam_beta1=get("train", "adam_beta1", 0.95),
            adam_beta2=get("train", "adam_beta2", 0.99),
            adam_eps=get("train", "adam_eps", 1e-7),
            self_cond_prob=get("train", "self_cond_prob", 0.5),
            p2_gamma=get("train", "p2_gamma", 1.0),
            p2_k=get("train", "p2_k", 1.0),
            total_steps=get("train", "total_steps", 1000),
            seed=get("train", "seed", 0))
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from exc

    cfg = RunConfig(
        denoiser=den,
        train=train,
        schedule_kind=get("schedule", "kind", "cosine"),
        schedule_T=get("schedule", "T", 1000),
        checkpoint_every=get("train", "checkpoint_every", 500),
        precision=get("train", "precision", "f64"),
        data_source=get("data", "source", "toy"),
        data_root=get("data", "root", None),
        n_per_class=get("data", "n_per_class", 200),
        val_fraction=get("data", "val_fraction", 0.1),
        output_dir=get("output", "dir", "runs/out"),
    )
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    """Cross-component constraints, checked before any side effects."""
    if cfg.schedule_kind not in SCHEDULE_KINDS:
        raise ConfigError("schedule.kind",
                          f"must be one of {SCHEDULE_KINDS}, got {cfg.schedule_kind!r}")
    if cfg.schedule_T < 1:
        raise ConfigError("schedule.T", "must be >= 1")
    if cfg.checkpoint_every < 1:
        raise ConfigError("train.checkpoint_every", "must be >= 1")
    if cfg.precision not in ("f64", "f32"):
        raise ConfigError("train.precision", "must be 'f64' or 'f32'")
    den = cfg.denoiser
    lvl = den.quanv_level()
    if lvl is not None:
        spatial = den.image_size // (2 ** lvl)
        if spatial % den.quanv.patch_size:
            raise ConfigError(
                "quanv.patch_size",
                f"level-{lvl} feature maps are {spatial}x{spatial}, not "
                f"divisible by patch_size {den.quanv.patch_size}")
    if cfg.data_source not in ("toy", "folder"):
        raise ConfigError("data.source", "must be 'toy' or 'folder'")
    if cfg.data_source == "folder" and not cfg.data_root:
        raise ConfigError("data.root", "required when data.source = folder")
    if cfg.data_source == "toy" and cfg.n_per_class < 1:
        raise ConfigError("data.n_per_class", "must be >= 1")
    if not 0.0 < cfg.val_fraction < 1.0:
        raise ConfigError("data.val_fraction", "must lie in (0, 1)")
    min_class = cfg.n_per_class if cfg.data_source == "toy" else None
    if min_class is not None and min_class * cfg.val_fraction < 1:
        raise ConfigError("data.val_fraction",
                          "validation split would be empty for some class")
