"""Run configuration with flat dotted keys (``env.grid_size``, ``algo.mu``, ``optim.lr``)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .env import ConfigError, GridWorldConfig

KD_TERM_NAMES = ("L_B", "L_Q", "L_F")


@dataclass(frozen=True)
class AlgoConfig:
    mixer: str = "vdn"
    ddn_enabled: bool = True
    use_personalized_state: bool = True
    kd_terms: tuple[str, ...] = KD_TERM_NAMES
    idm_enabled: bool = True
    mu: float = 0.75
    temperature: float = 1.0
    intrinsic_scale: float = 1.0
    normalize_idm_state: bool = True
    weight_L_B: float = 1.0
    weight_L_Q: float = 1.0
    weight_L_F: float = 1.0
    agent_hidden: int = 64
    fusion_dim: int = 32
    generator_hidden: int = 64
    mixing_dim: int = 32
    hyper_dim: int = 64
    idm_hidden: int = 64
    idm_out: int = 64


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 5e-4
    gamma: float = 0.99
    rms_decay: float = 0.99
    rms_eps: float = 1e-5
    grad_clip: float = 10.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_steps: int = 50_000
    target_interval: int = 200
    batch_size: int = 32
    buffer_capacity: int = 5000
    total_steps: int = 1_000_000
    eval_interval: int = 5000
    eval_episodes: int = 32
    checkpoint_interval: int = 0


@dataclass(frozen=True)
class RunConfig:
    env: GridWorldConfig = field(default_factory=GridWorldConfig)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    out_dir: str = "runs"

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        for section in ("env", "algo", "optim"):
            for f in fields(getattr(self, section)):
                value = getattr(getattr(self, section), f.name)
                flat[f"{section}.{f.name}"] = list(value) if isinstance(value, tuple) else value
        flat["seed"] = self.seed
        flat["out_dir"] = self.out_dir
        return flat

    def replace(self, **flat_overrides) -> "RunConfig":
        """Copy with overrides given as ``{"algo.mu": 0.5}`` style keys (use ``**{...}``)."""
        return apply_overrides(self, flat_overrides)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_flat(), sort_keys=False, default_flow_style=None)


_SECTIONS = {"env": GridWorldConfig, "algo": AlgoConfig, "optim": OptimConfig}


def _field_types() -> dict[str, Any]:
    types: dict[str, Any] = {"seed": int, "out_dir": str}
    defaults = RunConfig()
    for section in _SECTIONS:
        for f in fields(getattr(defaults, section)):
            types[f"{section}.{f.name}"] = type(getattr(getattr(defaults, section), f.name))
    return types


FIELD_TYPES = _field_types()


def _coerce(key: str, value: Any) -> Any:
    kind = FIELD_TYPES[key]
    if isinstance(value, str) and kind is not str:
        value = yaml.safe_load(value) if value.strip() else value
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is tuple:
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if value is None:
                value = []
            return tuple(str(v) for v in value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {kind.__name__}") from None


def apply_overrides(base: RunConfig, flat: Mapping[str, Any]) -> RunConfig:
    sections = {name: dataclasses.asdict(getattr(base, name)) for name in _SECTIONS}
    top = {"seed": base.seed, "out_dir": base.out_dir}
    for key, value in flat.items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        value = _coerce(key, value)
        if "." in key:
            section, name = key.split(".", 1)
            sections[section][name] = value
        else:
            top[key] = value
    cfg = RunConfig(
        env=GridWorldConfig(**sections["env"]),
        algo=AlgoConfig(**sections["algo"]),
        optim=OptimConfig(**sections["optim"]),
        **top,
    )
    return validate(cfg)


def validate(cfg: RunConfig) -> RunConfig:
    cfg.env.validate()
    a, o = cfg.algo, cfg.optim
    if a.mixer not in ("vdn", "qmix"):
        raise ConfigError(f"algo.mixer must be 'vdn' or 'qmix', got {a.mixer!r}")
    if not 0.0 <= a.mu <= 1.0:
        raise ConfigError(f"algo.mu must lie in [0, 1], got {a.mu}")
    if a.temperature <= 0:
        raise ConfigError(f"algo.temperature must be > 0, got {a.temperature}")
    if a.intrinsic_scale < 0:
        raise ConfigError(f"algo.intrinsic_scale must be >= 0, got {a.intrinsic_scale}")
    bad = [t for t in a.kd_terms if t not in KD_TERM_NAMES]
    if bad or (a.ddn_enabled and not a.kd_terms):
        raise ConfigError(f"algo.kd_terms must be a non-empty subset of {list(KD_TERM_NAMES)}, got {list(a.kd_terms)}")
    for name in ("agent_hidden", "fusion_dim", "generator_hidden", "mixing_dim", "hyper_dim", "idm_hidden", "idm_out"):
        if getattr(a, name) < 1:
            raise ConfigError(f"algo.{name} must be >= 1")
    if o.lr <= 0:
        raise ConfigError(f"optim.lr must be > 0, got {o.lr}")
    if not 0.0 <= o.gamma <= 1.0:
        raise ConfigError(f"optim.gamma must lie in [0, 1], got {o.gamma}")
    if not 0.0 < o.rms_decay < 1.0:
        raise ConfigError(f"optim.rms_decay must lie in (0, 1), got {o.rms_decay}")
    if not (0.0 <= o.eps_end <= o.eps_start <= 1.0):
        raise ConfigError(f"need 0 <= optim.eps_end <= optim.eps_start <= 1, got {o.eps_end}, {o.eps_start}")
    for name in ("target_interval", "batch_size", "buffer_capacity", "total_steps", "eval_episodes"):
        if getattr(o, name) < 1:
            raise ConfigError(f"optim.{name} must be >= 1, got {getattr(o, name)}")
    if o.buffer_capacity <= o.batch_size:
        raise ConfigError("optim.buffer_capacity must exceed optim.batch_size")
    if o.eval_interval < 0 or o.checkpoint_interval < 0 or o.eps_anneal_steps < 0:
        raise ConfigError("optim.eval_interval, optim.checkpoint_interval and optim.eps_anneal_steps must be >= 0")
    return cfg


def load_flat(path) -> dict[str, Any]:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of dotted keys")
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict) and key in _SECTIONS:  # nested form is accepted too
            for sub, v in value.items():
                flat[f"{key}.{sub}"] = v
        else:
            flat[str(key)] = value
    return flat


def parse_config(path=None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = validate(RunConfig())
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = apply_overrides(cfg, load_flat(path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def from_text(text: str) -> RunConfig:
    data = yaml.safe_load(text) or {}
    return apply_overrides(RunConfig(), data)
