"""Experiment configuration files.

The file is INI-style: one section per sub-config, ``key = value`` lines.
Tuples are comma separated; scatterers are ``x,y,r`` triples separated by
``;``.  Unknown sections or keys are errors.  ``canonical_text`` renders
every field (defaults included) in a fixed order, and its SHA-256 is the
config hash recorded in dataset manifests.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field, fields, replace

from .channel import ArrayConfig, LinkBudget
from .neural import TrainConfig
from .predictor import ModelSpec
from .scene import SceneConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CsiprepConfig:
    n_beams: int = 64
    top_k: int = 8
    rho_db: float = 15.0

    def __post_init__(self):
        if self.n_beams < 2 or not 1 <= self.top_k <= self.n_beams:
            raise ValueError("need n_beams >= 2 and 1 <= top_k <= n_beams")


@dataclass(frozen=True)
class BaselineConfig:
    kf_obs_sigma: float = 1.0
    kf_accel_sigma: float = 1.0
    ekf_sigma_theta: float = 0.01
    ekf_sigma_d: float = 0.1
    ekf_accel_sigma: float = 1.0
    history_window: int = 5

    def __post_init__(self):
        if min(self.kf_obs_sigma, self.ekf_sigma_theta, self.ekf_sigma_d) <= 0:
            raise ValueError("observation noise levels must be positive")
        if self.kf_accel_sigma < 0 or self.ekf_accel_sigma < 0:
            raise ValueError("process noise levels must be non-negative")
        if self.history_window < 2:
            raise ValueError("history_window must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    n_slots: int = 100
    n_realizations: int = 50
    seed: int = 2024
    output_dir: str = "out"
    report_thresholds: tuple = (4.6, 5.6, 6.6, 7.6)
    antenna_sweep: tuple = (8, 16, 32)

    def __post_init__(self):
        if self.n_slots < 3:
            raise ValueError("n_slots must be >= 3")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    arrays: ArrayConfig = field(default_factory=ArrayConfig)
    budget: LinkBudget = field(default_factory=LinkBudget)
    csiprep: CsiprepConfig = field(default_factory=CsiprepConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    experiment: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if self.model.n_beams != self.csiprep.n_beams:
            raise ValueError("model.n_beams must equal csiprep.n_beams")
        if self.model.raster != self.scene.raster_h * self.scene.raster_w:
            raise ValueError("model.raster must equal scene raster_h * raster_w")

    @property
    def seed(self):
        return self.experiment.seed

    def with_seed(self, seed):
        return replace(self, experiment=replace(self.experiment, seed=int(seed)),
                       scene=replace(self.scene, seed=int(seed)))


SECTIONS = tuple(f.name for f in fields(ExperimentConfig))
# seed lives in [experiment]; the scene copy is derived from it
HIDDEN = {("scene", "seed")}


def _section_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _kind(tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        return ("optional", _kind(inner[0]))
    return tp


def _parse_value(section, key, raw, tp, default):
    raw = raw.strip()
    kind = _kind(tp)
    try:
        if isinstance(kind, tuple) and kind[0] == "optional":
            if raw.lower() in ("", "none"):
                return None
            kind = kind[1]
        if key == "scatterers":
            if not raw:
                return ()
            return tuple(tuple(float(v) for v in item.split(",")) for item in raw.split(";")
                         if item.strip())
        if kind is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind is tuple:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default:
                conv = int if isinstance(default[0], int) else float
            else:  # no default to copy the element type from
                conv = int if all(p.lstrip("+-").isdigit() for p in parts) else float
            return tuple(conv(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None
    raise ConfigError(f"[{section}] {key}: unsupported field type {tp}")


def _format_value(v):
    if hasattr(v, "item"):  # numpy scalar
        v = v.item()
    if v is None:
        return "none"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(",".join(repr(float(x)) for x in item) for item in v)
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    defaults = ExperimentConfig()
    parts = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    for section in SECTIONS:
        base = getattr(defaults, section)
        types = _section_types(type(base))
        updates = {}
        if cp.has_section(section):
            for key, raw in cp.items(section):
                if key not in types or (section, key) in HIDDEN:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                updates[key] = _parse_value(section, key, raw, types[key], getattr(base, key))
        try:
            parts[section] = replace(base, **updates)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    try:
        cfg = ExperimentConfig(**parts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.with_seed(cfg.experiment.seed)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def canonical_text(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        sub = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(sub):
            if (section, f.name) in HIDDEN:
                continue
            lines.append(f"{f.name} = {_format_value(getattr(sub, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()


def to_dict(cfg: ExperimentConfig):
    return dataclasses.asdict(cfg)
