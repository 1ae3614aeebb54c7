"""Run configuration: nested dataclasses loaded from a YAML/JSON file plus CLI overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .core import ConfigError
from .metrics import EvalConfig
from .pseudolabel import AssociationConfig
from .synthworld import SceneParams

ARMS = ("raw", "assoc", "assoc+birp")
OUTPUT_ROOT_ENV = "CRVTRACK_OUTPUT_ROOT"

_NOISE_FIELDS = ("frag_prob", "switch_prob", "drift_prob", "embed_noise_sigma")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneParams = field(default_factory=SceneParams)
    assoc: AssociationConfig = field(default_factory=AssociationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    arms: tuple[str, ...] = ARMS
    output_dir: str = "runs"
    seed: int = 0
    n_seeds: int = 20
    scene_file: str | None = None

    def __post_init__(self):
        if not self.arms:
            raise ConfigError("config.arms: must name at least one arm")
        for arm in self.arms:
            if arm not in ARMS:
                raise ConfigError(f"config.arms: unknown arm {arm!r} (choose from {', '.join(ARMS)})")
        if self.n_seeds < 1:
            raise ConfigError("config.n_seeds: must be >= 1")
        if self.seed < 0:
            raise ConfigError("config.seed: must be >= 0")
        object.__setattr__(self, "arms", tuple(a for a in ARMS if a in self.arms))

    def seeds(self) -> list[int]:
        return list(range(self.seed, self.seed + self.n_seeds))

    def to_record(self) -> dict:
        scene = dataclasses.asdict(self.scene)
        return {
            "kind": "config",
            "scene": {k: v for k, v in scene.items() if k not in _NOISE_FIELDS},
            "noise": {k: scene[k] for k in _NOISE_FIELDS},
            "assoc": dataclasses.asdict(self.assoc),
            "eval": dataclasses.asdict(self.eval),
            "arms": list(self.arms),
            "seed": self.seed,
            "n_seeds": self.n_seeds,
            "scene_file": self.scene_file,
        }


def _build(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown field")
    kwargs = {}
    for key, value in data.items():
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}.{key}: expected a boolean")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}.{key}: expected an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{key}: expected a number")
            value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_mapping(data: Mapping | None) -> RunConfig:
    data = dict(data or {})
    top = {"scene", "noise", "assoc", "eval", "arms", "output_dir", "seed", "n_seeds", "scene_file"}
    for key in data:
        if key not in top:
            raise ConfigError(f"config.{key}: unknown field")
    scene_data = dict(data.get("scene") or {})
    noise_data = data.get("noise") or {}
    if not isinstance(noise_data, Mapping):
        raise ConfigError("config.noise: expected a mapping")
    for key in noise_data:
        if key not in _NOISE_FIELDS:
            raise ConfigError(f"config.noise.{key}: unknown field")
    for key in scene_data:
        if key in _NOISE_FIELDS:
            raise ConfigError(f"config.scene.{key}: belongs in the noise section")
    scene = _build(SceneParams, {**scene_data, **noise_data}, "config.scene")
    for name in _NOISE_FIELDS:
        value = getattr(scene, name)
        if name != "embed_noise_sigma" and not 0 <= value <= 1:
            raise ConfigError(f"config.noise.{name}: {value} outside [0, 1]")
        if value < 0:
            raise ConfigError(f"config.noise.{name}: must be nonnegative")
    arms = data.get("arms", ARMS)
    if isinstance(arms, str):
        arms = [a.strip() for a in arms.split(",") if a.strip()]
    kwargs = dict(
        scene=scene,
        assoc=_build(AssociationConfig, data.get("assoc"), "config.assoc"),
        eval=_build(EvalConfig, data.get("eval"), "config.eval"),
        arms=tuple(arms),
    )
    for key, kind in (("output_dir", str), ("seed", int), ("n_seeds", int), ("scene_file", str)):
        if key in data and data[key] is not None:
            if not isinstance(data[key], kind) or isinstance(data[key], bool):
                raise ConfigError(f"config.{key}: expected {kind.__name__}")
            kwargs[key] = data[key]
    return RunConfig(**kwargs)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_mapping(data)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply CLI flags; ``None`` means not given."""
    assoc = cfg.assoc
    changes = {k: overrides.pop(k) for k in ("tau_affinity", "max_rounds", "tau_group") if overrides.get(k) is not None}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        assoc = dataclasses.replace(assoc, **changes)
    return dataclasses.replace(cfg, assoc=assoc, **overrides)


def resolve_output_dir(cfg: RunConfig, flag: str | None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir)
