"""Scenario configuration: defaults, JSON round-trip, validation and reference trajectories."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mpc import MpcConfig
from .plant import SoftRodPlant
from .predmodel import ModelDims, ThetaSpace

SCENARIOS = ("origin", "circle")


@dataclass
class ReferenceSpec:
    kind: str = "origin"
    radius: float = 0.05
    period: float | None = None  # None: one revolution per episode
    center: tuple[float, float] = (0.0, 0.0)
    phase: float = 0.0


@dataclass
class BoSettings:
    k_max: int = 100
    n_seeds: int = 10
    acquisition_budget: int = 4096
    refine_starts: int = 5
    gp_restarts: int = 8
    seed: int = 0
    cost_transform: str = "log"


@dataclass
class ScenarioConfig:
    name: str = "origin"
    duration: float = 20.0
    dt: float = 0.05
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    initial_position: tuple[float, float] = (0.0, 0.0)  # tip released at rest
    mpc: MpcConfig = field(default_factory=MpcConfig)
    bo: BoSettings = field(default_factory=BoSettings)
    plant: SoftRodPlant = field(default_factory=SoftRodPlant)
    model_dims: ModelDims = field(default_factory=ModelDims)
    a_bound: float = 1.2
    b_bound: float = 0.5

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def start_position(self) -> np.ndarray:
        return np.asarray(self.initial_position, dtype=float)

    @property
    def theta_space(self) -> ThetaSpace:
        return ThetaSpace(self.model_dims, self.a_bound, self.b_bound)

    def validate(self) -> "ScenarioConfig":
        n = self.duration / self.dt
        if self.dt <= 0 or self.duration <= 0 or abs(n - round(n)) > 1e-9:
            raise ConfigError("duration / dt must be a positive integer")
        if self.steps < self.mpc.horizon:
            raise ConfigError("episode shorter than the prediction horizon")
        if len(self.initial_position) != 2:
            raise ConfigError("initial_position must have two entries")
        if self.reference.kind not in SCENARIOS:
            raise ConfigError(f"unknown reference kind {self.reference.kind!r}")
        if self.reference.kind == "circle":
            reach = min(np.min(np.abs(self.mpc.y_min)), np.min(self.mpc.y_max))
            if not 0 < self.reference.radius <= reach:
                raise ConfigError("circle radius must be positive and inside the output bounds")
            if self.reference.period is not None and self.reference.period <= 0:
                raise ConfigError("circle period must be positive")
        dims = self.model_dims
        if dims.n_u != 3 or dims.n_y != 2:
            raise ConfigError("the rod has 3 cables and 2 outputs: n_u = 3, n_y = 2")
        if self.mpc.n_u != dims.n_u or self.mpc.n_y != dims.n_y:
            raise ConfigError("MPC weights do not match model dimensions")
        if self.a_bound <= 0 or self.b_bound <= 0:
            raise ConfigError("search-box half-widths must be positive")
        bo = self.bo
        if bo.n_seeds < 1 or bo.k_max < 1 or bo.acquisition_budget < 1 or bo.gp_restarts < 1:
            raise ConfigError("BO counts must be positive")
        if bo.cost_transform not in ("none", "log"):
            raise ConfigError("cost_transform must be 'none' or 'log'")
        return self


def default_config(scenario: str = "origin") -> ScenarioConfig:
    """Built-in setup for one of the two tracking tasks."""
    if scenario == "origin":
        return ScenarioConfig(name="origin", reference=ReferenceSpec("origin"), initial_position=(0.05, -0.04))
    if scenario == "circle":
        return ScenarioConfig(name="circle", reference=ReferenceSpec("circle"))
    raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def reference_at(cfg: ScenarioConfig, t: int) -> np.ndarray:
    """Reference at step ``t`` (time ``t * dt``); extends past the episode end."""
    return reference_array(cfg, t, t + 1)[0]


def reference_array(cfg: ScenarioConfig, start: int, stop: int) -> np.ndarray:
    """References for steps ``start .. stop - 1`` as an (n, 2) array."""
    ref = cfg.reference
    t = np.arange(start, stop) * cfg.dt
    center = np.asarray(ref.center, dtype=float)
    if ref.kind == "origin":
        return np.tile(center, (t.size, 1))
    period = cfg.duration if ref.period is None else ref.period
    angle = 2.0 * math.pi * t / period + ref.phase
    return center + ref.radius * np.column_stack([np.cos(angle), np.sin(angle)])


# --- JSON ---------------------------------------------------------------

def _mpc_to_dict(m: MpcConfig) -> dict:
    return {
        "horizon": m.horizon,
        "q_weight": m.q_weight.tolist(),
        "r_weight": m.r_weight.tolist(),
        "u_min": m.u_min.tolist(),
        "u_max": m.u_max.tolist(),
        "y_min": m.y_min.tolist(),
        "y_max": m.y_max.tolist(),
        "slack_weight": m.slack_weight,
    }


def to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "name": cfg.name,
        "duration": cfg.duration,
        "dt": cfg.dt,
        "reference": {**dataclasses.asdict(cfg.reference), "center": list(cfg.reference.center)},
        "initial_position": list(cfg.initial_position),
        "mpc": _mpc_to_dict(cfg.mpc),
        "bo": dataclasses.asdict(cfg.bo),
        "plant": dataclasses.asdict(cfg.plant),
        "model_dims": dataclasses.asdict(cfg.model_dims),
        "a_bound": cfg.a_bound,
        "b_bound": cfg.b_bound,
    }


def _merge(cls, base, overrides: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    values = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)}
    values.update(overrides)
    return values


def _weight(value, n: int):
    a = np.asarray(value, dtype=float)
    return a * np.eye(n) if a.ndim == 0 else a


def from_dict(data: dict) -> ScenarioConfig:
    """Build a validated config from a (possibly partial) mapping.

    Missing keys fall back to the built-in defaults of the scenario named by
    ``scenario`` (or ``name``, or ``reference.kind``); weights may be given
    as scalars meaning a multiple of the identity.
    """
    data = dict(data)
    scenario = data.pop("scenario", None) or data.get("name") or data.get("reference", {}).get("kind", "origin")
    if scenario not in SCENARIOS:
        scenario = data.get("reference", {}).get("kind", "origin")
    base = default_config(scenario)
    try:
        top = _merge(ScenarioConfig, base, data, "config")
        ref = ReferenceSpec(**_merge(ReferenceSpec, base.reference, data.get("reference", {}), "reference"))
        ref.center = tuple(float(c) for c in ref.center)
        bo = BoSettings(**_merge(BoSettings, base.bo, data.get("bo", {}), "bo"))
        plant = SoftRodPlant(**_merge(SoftRodPlant, base.plant, data.get("plant", {}), "plant"))
        dims = ModelDims(**_merge(ModelDims, base.model_dims, data.get("model_dims", {}), "model_dims"))
        mpc_vals = _merge(MpcConfig, base.mpc, data.get("mpc", {}), "mpc")
        mpc_vals["q_weight"] = _weight(mpc_vals["q_weight"], dims.n_y)
        mpc_vals["r_weight"] = _weight(mpc_vals["r_weight"], dims.n_u)
        mpc = MpcConfig(**mpc_vals)
        top.update(
            reference=ref,
            bo=bo,
            plant=plant,
            model_dims=dims,
            mpc=mpc,
            initial_position=tuple(float(v) for v in top["initial_position"]),
        )
        cfg = ScenarioConfig(**top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(data)


def dump_config(cfg: ScenarioConfig, path=None) -> str:
    text = json.dumps(to_dict(cfg), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
