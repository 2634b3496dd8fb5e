"""YAML run configuration.

Schema (every key except ``domain``/``class`` is optional)::

    length: 2000            # stream length N
    seed: 0                 # stream seed
    quota: false            # force exact per-state counts
    domain: {n: 5, mode: noniid, alpha1: 0.85, balance: imbalanced, beta: 5}
    class:  {n: 4, mode: iid, balance: balanced}
    world:  {channels: 8, height: 4, width: 4, noise: 1.0, class_sep: 2.0,
             shift: 2.0, scale_range: [0.7, 1.4], seed: 0, clean_domain0: true}
    model:  {n_source: 2000, n_layers: 2, seed: 0}
    engine: {mode: unitta, domain_pred_layer: 0, filter_enabled: true, eta: 0.05}

``alpha1`` may be omitted for iid/continual axes and ``beta`` for balanced
ones; they are implied by the mode.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .engine import EngineConfig
from .errors import InvalidConfig
from .markov import AxisConfig
from .stream import ScenarioConfig, enumerate_grid
from .world import PretrainedModel, SyntheticWorld, fit_source

# desk-scale defaults: about 100 samples per (domain, class) cell at N=2000,
# and a momentum that gives each cell roughly five EMA time constants
DESK_LENGTH = 2000
DESK_ETA = 0.05

WORLD_DEFAULTS = {
    "channels": 8,
    "height": 4,
    "width": 4,
    "noise": 1.0,
    "class_sep": 2.0,
    "shift": 2.0,
    "scale_range": [0.7, 1.4],
    "seed": 0,
    "clean_domain0": True,
}
MODEL_DEFAULTS = {"n_source": 2000, "n_layers": 2, "seed": 0}
ENGINE_DEFAULTS = {"mode": "unitta", "domain_pred_layer": 0, "filter_enabled": True, "eta": DESK_ETA}

_TOP_KEYS = {"length", "seed", "quota", "domain", "class", "world", "model", "engine"}
_AXIS_KEYS = {"n", "mode", "alpha1", "balance", "beta"}


def _merge(section: str, given: Optional[dict], defaults: dict) -> dict:
    given = {} if given is None else given
    if not isinstance(given, dict):
        raise InvalidConfig(f"'{section}' must be a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise InvalidConfig(f"unknown key(s) in '{section}': {', '.join(sorted(unknown))}")
    return {**defaults, **given}


def _axis(section: str, raw) -> AxisConfig:
    if not isinstance(raw, dict):
        raise InvalidConfig(f"'{section}' must be a mapping with at least 'n' and 'mode'")
    unknown = set(raw) - _AXIS_KEYS
    if unknown:
        raise InvalidConfig(f"unknown key(s) in '{section}': {', '.join(sorted(unknown))}")
    if "n" not in raw or "mode" not in raw:
        raise InvalidConfig(f"'{section}' needs 'n' and 'mode'")
    try:
        return AxisConfig(
            int(raw["n"]),
            str(raw["mode"]),
            None if raw.get("alpha1") is None else float(raw["alpha1"]),
            str(raw.get("balance", "balanced")),
            None if raw.get("beta") is None else float(raw["beta"]),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, InvalidConfig):
            raise
        raise InvalidConfig(f"bad value in '{section}': {e}") from e


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    world: dict = field(default_factory=lambda: dict(WORLD_DEFAULTS))
    model: dict = field(default_factory=lambda: dict(MODEL_DEFAULTS))
    engine: dict = field(default_factory=lambda: dict(ENGINE_DEFAULTS))

    @classmethod
    def from_dict(cls, raw: Any) -> "RunConfig":
        if not isinstance(raw, dict):
            raise InvalidConfig("config must be a YAML mapping")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise InvalidConfig(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
        for key in ("domain", "class"):
            if key not in raw:
                raise InvalidConfig(f"missing required section '{key}'")
        try:
            length = int(raw.get("length", DESK_LENGTH))
            seed = int(raw.get("seed", 0))
        except (TypeError, ValueError) as e:
            raise InvalidConfig(f"bad length/seed: {e}") from e
        scenario = ScenarioConfig(
            _axis("domain", raw["domain"]),
            _axis("class", raw["class"]),
            length,
            seed,
            bool(raw.get("quota", False)),
        )
        out = cls(
            scenario,
            _merge("world", raw.get("world"), WORLD_DEFAULTS),
            _merge("model", raw.get("model"), MODEL_DEFAULTS),
            _merge("engine", raw.get("engine"), ENGINE_DEFAULTS),
        )
        out.engine_config()  # validate early
        return out

    def to_dict(self) -> dict:
        s = self.scenario
        return {
            "length": s.length,
            "seed": s.seed,
            "quota": s.quota,
            "domain": s.domain_axis.to_dict(),
            "class": s.class_axis.to_dict(),
            "world": dict(self.world),
            "model": dict(self.model),
            "engine": dict(self.engine),
        }

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, scenario=self.scenario.with_seed(seed))

    def with_quota(self, quota: bool = True) -> "RunConfig":
        return dataclasses.replace(self, scenario=dataclasses.replace(self.scenario, quota=quota))

    def with_engine(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, engine={**self.engine, **kw})

    def engine_config(self) -> EngineConfig:
        e = self.engine
        return EngineConfig(
            mode=str(e["mode"]),
            domain_pred_layer=int(e["domain_pred_layer"]),
            filter_enabled=bool(e["filter_enabled"]),
            eta=None if e["eta"] is None else float(e["eta"]),
        )

    def make_world(self) -> SyntheticWorld:
        w = self.world
        s = self.scenario
        return SyntheticWorld.make(
            s.domain_axis.n,
            s.class_axis.n,
            channels=int(w["channels"]),
            height=int(w["height"]),
            width=int(w["width"]),
            noise=float(w["noise"]),
            class_sep=float(w["class_sep"]),
            shift=float(w["shift"]),
            scale_range=tuple(float(v) for v in w["scale_range"]),
            seed=int(w["seed"]),
            clean_domain0=bool(w["clean_domain0"]),
        )

    def fit_model(self, world: SyntheticWorld) -> PretrainedModel:
        m = self.model
        return fit_source(world, int(m["n_source"]), int(m["n_layers"]), int(m["seed"]))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InvalidConfig(f"cannot read config {path}: {e}") from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise InvalidConfig(f"config {path} is not valid YAML: {e}") from e
    return RunConfig.from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def grid_run_configs(base: RunConfig, grid: int = 24) -> list[RunConfig]:
    """One config per grid cell, sharing the world/model/engine of ``base``."""
    if grid not in (24, 36):
        raise InvalidConfig(f"grid must be 24 or 36, got {grid}")
    s = base.scenario
    cells = enumerate_grid(
        experiment=grid == 24,
        n_domains=s.domain_axis.n,
        n_classes=s.class_axis.n,
        length=s.length,
        seed=s.seed,
    )
    return [dataclasses.replace(base, scenario=dataclasses.replace(c, quota=s.quota)) for c in cells]
