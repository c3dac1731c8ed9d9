"""Experiment configuration: nested dataclasses loaded from TOML or JSON."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .egsr import EgsrParams
from .raytrace import TraceConfig
from .scene import DegradeParams, TxConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class SceneSource:
    # a scene JSON file, or else one generated city per seed
    path: Optional[str] = None
    seeds: tuple[int, ...] = (1, 2, 3)
    n_buildings: int = 60
    extent: float = 500.0
    cells: int = 50
    tx_clearance: float = 12.0


@dataclass(frozen=True)
class RadioConfig:
    carrier_frequency: float = 3.5e9
    array_size: int = 64
    element_spacing: float = 0.5
    h_r: float = 1.5
    max_depth: int = 3
    coverage_threshold: float = -80.0
    reflection_magnitude: float = 0.6
    reflection_phase: float = math.pi
    ground_reflection: bool = False

    def trace(self) -> TraceConfig:
        return TraceConfig(self.max_depth, self.reflection_magnitude, self.reflection_phase,
                           self.ground_reflection)

    def tx(self, position) -> TxConfig:
        return TxConfig(tuple(position), self.carrier_frequency, self.array_size, self.element_spacing)


@dataclass(frozen=True)
class CompareConfig:
    budgets: tuple[int, ...] = (0, 5, 10, 20, 30)
    methods: tuple[str, ...] = ("egsr", "random", "volume", "uniform")
    random_repeats: int = 20
    beamforming: bool = True
    gamma_step: float = 0.01


@dataclass(frozen=True)
class SweepConfig:
    deltas: tuple[float, ...] = (5.0, 10.0, 30.0, 50.0, 100.0, 150.0)
    budget: int = 30


@dataclass(frozen=True)
class AblationConfig:
    tau: float = 1.0


METHODS = ("egsr", "random", "volume", "uniform")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scene: SceneSource = SceneSource()
    degrade: DegradeParams = DegradeParams()
    degrade_seed: int = 7
    tx_positions: tuple[tuple[float, float, float], ...] = ((170.0, 180.0, 25.0), (330.0, 320.0, 25.0))
    radio: RadioConfig = RadioConfig()
    egsr: EgsrParams = EgsrParams()
    compare: CompareConfig = CompareConfig()
    sweep: SweepConfig = SweepConfig()
    ablation: AblationConfig = AblationConfig()
    out_dir: str = "out"
    threads: int = 1

    def __post_init__(self):
        if not self.tx_positions:
            raise ConfigError("at least one Tx deployment is required")
        for p in self.tx_positions:
            if len(p) != 3:
                raise ConfigError(f"tx position {p!r} must have three coordinates")
        if any(w < 0 for w in self.compare.budgets) or self.sweep.budget < 0:
            raise ConfigError("budgets must be non-negative")
        bad = set(self.compare.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {list(METHODS)}")
        if self.compare.random_repeats < 1:
            raise ConfigError("random_repeats must be >= 1")
        if self.scene.path is not None and not Path(self.scene.path).is_file():
            raise ConfigError(f"scene file not found: {self.scene.path}")
        if self.radio.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def txs(self) -> list[TxConfig]:
        return [self.radio.tx(p) for p in self.tx_positions]

    def content_dict(self) -> dict:
        """Everything that determines results (excludes output dir and threads)."""
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        d.pop("threads")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.content_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def stamp(self) -> str:
        return f"config_hash={self.config_hash()} seed={self.seed}"


_SECTIONS = {
    "scene": SceneSource,
    "degrade": DegradeParams,
    "radio": RadioConfig,
    "egsr": EgsrParams,
    "compare": CompareConfig,
    "sweep": SweepConfig,
    "ablation": AblationConfig,
}


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"[{where}] unknown keys {unknown}")
    try:
        return cls(**{k: _tupleize(v) for k, v in data.items()})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def config_from_dict(data: dict[str, Any], base_dir: Optional[str] = None) -> ExperimentConfig:
    data = dict(data)
    kwargs: dict[str, Any] = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            section = dict(data.pop(key))
            if key == "scene" and section.get("path") and base_dir and not os.path.isabs(section["path"]):
                section["path"] = os.path.join(base_dir, section["path"])
            kwargs[key] = _build(cls, section, key)
    if "tx" in data:
        txs = data.pop("tx")
        if not isinstance(txs, list):
            raise ConfigError("tx must be a list of {position = [x, y, z]} tables")
        try:
            kwargs["tx_positions"] = tuple(tuple(float(v) for v in t["position"]) for t in txs)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad tx entry: {exc}") from exc
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS) - {"tx_positions"}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    kwargs.update(data)
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    raw = p.read_bytes()
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return config_from_dict(data, base_dir=str(p.parent))
