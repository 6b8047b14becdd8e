"""Run configuration: one YAML tree, named presets, strict keys.

Resolution order is preset, then file, then command-line overrides. The
effective configuration is written next to every command's outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .constraints import GuidanceConfig, Thresholds
from .diffusion import NoiseSchedule, TrainConfig
from .errors import ConfigError, InvalidArgument
from .evaluation.benchmark import BenchConfig
from .gripper import GripperSpec
from .network.params import NetworkConfig
from .scenes import DEFAULT_MU, KINDS


@dataclass(frozen=True)
class DataConfig:
    kinds: tuple[str, ...] = KINDS
    variants: int = 8
    grasps_per_object: int = 200
    n_points: int = 512
    mu: float = DEFAULT_MU

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise InvalidArgument(f"unknown object kind(s) {bad}; valid kinds: {', '.join(KINDS)}")
        if self.variants < 1 or self.grasps_per_object < 1 or self.n_points < 8 or not self.mu > 0:
            raise InvalidArgument("variants >= 1, grasps_per_object >= 1, n_points >= 8 and mu > 0 required")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    gripper: GripperSpec = field(default_factory=GripperSpec)
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=lambda: NetworkConfig(d=64, pointnet_widths=(64, 128, 64)))
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3))
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, GripperSpec):
                out[f.name] = v.to_dict()
            elif dataclasses.is_dataclass(v):
                out[f.name] = _plain(asdict(v))
            else:
                out[f.name] = v
        return out

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _plain(d):
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_plain(v) for v in d]
    return d


PRESETS: dict[str, dict] = {
    "desk": {},
    "paper": {
        "network": {"d": 128, "pointnet_widths": [64, 128, 128]},
        "train": {"epochs": 500, "learning_rate": 1e-4},
    },
    # tiny settings for smoke tests
    "smoke": {
        "data": {"variants": 1, "grasps_per_object": 32, "n_points": 128},
        "network": {"d": 16, "D": 1, "heads": 2, "mlp_ratio": 2, "pointnet_widths": [16, 16]},
        "schedule": {"L": 4, "n_inner": 1},
        "train": {"epochs": 2, "batch_size": 16},
        "bench": {"ts_sizes": [2, 4, 8, 16], "guided_sizes": [1, 4], "seeds": 2, "timing_warmup": 1},
    },
}

_SECTIONS = {
    "data": DataConfig,
    "network": NetworkConfig,
    "schedule": NoiseSchedule,
    "train": TrainConfig,
    "guidance": GuidanceConfig,
    "thresholds": Thresholds,
    "bench": BenchConfig,
}


def _merge_section(base, updates: dict, name: str):
    if not isinstance(updates, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    if name == "gripper":
        current = base.to_dict()
        unknown = set(updates) - set(current)
        if unknown:
            raise ConfigError(f"unknown key(s) in 'gripper': {sorted(unknown)}")
        if {"max_opening", "finger_depth", "base_offset"} & set(updates) and "canonical_points" not in updates:
            current.pop("canonical_points")
        current.update(updates)
        try:
            return GripperSpec.from_dict(current)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"gripper: {exc}") from exc
    valid = {f.name for f in fields(base)}
    unknown = set(updates) - valid
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {sorted(unknown)}")
    cleaned = {k: (tuple(v) if isinstance(v, list) else v) for k, v in updates.items()}
    try:
        return replace(base, **cleaned)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def apply(cfg: RunConfig, tree: dict | None) -> RunConfig:
    """Overlay a nested mapping onto ``cfg``; unknown sections or keys raise ConfigError."""
    if not tree:
        return cfg
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    valid = {f.name for f in fields(cfg)}
    unknown = set(tree) - valid
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    out = cfg
    for key, val in tree.items():
        if key == "seed":
            out = replace(out, seed=int(val))
        else:
            out = replace(out, **{key: _merge_section(getattr(out, key), val, key)})
    return out


def load_config(path=None, preset: str = "desk", overrides: dict | None = None) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = apply(RunConfig(), PRESETS[preset])
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            tree = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = apply(cfg, tree)
    return apply(cfg, overrides)
