"""Scenario description, JSON loading and the built-in synthetic scenarios.

A scenario file is a JSON object with the blocks ``terrain``, ``perimeters``,
``start``, ``goal``, ``vehicle``, ``tires``, ``constraints``, ``planner`` and
``trial``. Every field problem is collected and reported together.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .params import ConstraintConfig, TireParams, VehicleParams
from .planner import CostWeights, Goal, PlannerConfig
from .terrain import (Heightmap, Perimeter, build_sdist_map, gaussian_smooth, read_heightmap,
                      signed_distance, synth_terrain)

# terrain level of detail seen by (plant, srb formulation, est formulation)
LOD_TABLE = {
    1: ("plant", "srb", "est"),
    2: ("srb", "srb", "est"),
    3: ("est", "est", "est"),
}


@dataclass(frozen=True)
class TrialSettings:
    speeds: tuple = (5.0,)
    setup: int = 1
    n_trials: int = 1
    seed: int = 0
    timeout: float = 60.0
    rollover_deg: float = 72.0
    lateral_offset: float = 0.5
    heading_offset: float = 0.05
    sigma_srb: float = 0.3
    sigma_est: float = 1.5
    plant_dt: float = 0.01
    plant_substep: float = 0.001
    planner_period: float = 0.04

    def __post_init__(self):
        problems = []
        if self.setup not in LOD_TABLE:
            problems.append(f"trial.setup={self.setup!r} must be 1, 2 or 3")
        if not self.speeds or any(not (isinstance(v, (int, float)) and v > 0) for v in self.speeds):
            problems.append(f"trial.speeds={list(self.speeds)!r} must be a non-empty list of positive speeds")
        if self.n_trials < 0:
            problems.append(f"trial.n_trials={self.n_trials!r} must be >= 0")
        if not self.timeout > 0:
            problems.append(f"trial.timeout={self.timeout!r} must be > 0")
        if not 0 < self.rollover_deg < 90:
            problems.append(f"trial.rollover_deg={self.rollover_deg!r} must lie in (0, 90)")
        if self.lateral_offset < 0 or self.heading_offset < 0:
            problems.append("trial.lateral_offset and trial.heading_offset must be >= 0")
        if self.sigma_srb < 0 or self.sigma_est < 0:
            problems.append("trial.sigma_srb and trial.sigma_est must be >= 0")
        ratio = self.planner_period / self.plant_dt if self.plant_dt > 0 else 0
        if not (self.plant_dt > 0 and self.plant_substep > 0 and abs(ratio - round(ratio)) < 1e-9 and ratio >= 1):
            problems.append("trial.planner_period must be a positive multiple of trial.plant_dt")
        sub = self.plant_dt / self.plant_substep if self.plant_substep > 0 else 0
        if abs(sub - round(sub)) > 1e-9 or sub < 1:
            problems.append("trial.plant_substep must divide trial.plant_dt")
        if problems:
            raise ConfigError("trial settings invalid", problems)

    @property
    def plan_every(self) -> int:
        return int(round(self.planner_period / self.plant_dt))


@dataclass
class Scenario:
    terrain: Heightmap
    perimeters: list
    start: tuple            # (x, y, psi, speed)
    goal: Goal
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    tires: TireParams = field(default_factory=TireParams)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    trial: TrialSettings = field(default_factory=TrialSettings)
    name: str = "scenario"

    def __post_init__(self):
        problems = []
        x, y, _, speed = self.start
        if not speed > 0:
            problems.append(f"start.speed={speed!r} must be > 0")
        for i, p in enumerate(self.perimeters):
            if p.kind == "obstacle" and signed_distance((x, y), p) <= 0:
                problems.append(f"start ({x}, {y}) lies inside obstacle perimeters[{i}]")
        if problems:
            raise ConfigError("scenario invalid", problems)
        self._cache = {}

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def lod(self, name: str) -> Heightmap:
        """Terrain at level of detail ``plant``, ``srb`` or ``est``."""
        sigma = {"plant": 0.0, "srb": self.trial.sigma_srb, "est": self.trial.sigma_est}[name]
        key = ("lod", sigma)
        if key not in self._cache:
            self._cache[key] = self.terrain if sigma == 0 else gaussian_smooth(self.terrain, sigma)
        return self._cache[key]

    def terrains(self, setup: int | None = None) -> dict:
        """{'plant': ..., 'srb': ..., 'est': ...} heightmaps for a setup."""
        plant, srb, est = LOD_TABLE[setup or self.trial.setup]
        return {"plant": self.lod(plant), "srb": self.lod(srb), "est": self.lod(est)}

    @property
    def sdist(self):
        if "sdist" not in self._cache:
            self._cache["sdist"] = build_sdist_map(self.terrain, self.perimeters)
        return self._cache["sdist"]


# ----------------------------------------------------------------- loading

_BLOCKS = {"name", "terrain", "perimeters", "start", "goal", "vehicle", "tires", "constraints", "planner",
           "trial"}


def _build(cls, block, data, problems, rename=None, convert=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{block}: must be an object")
        return None
    names = {f.name for f in dataclasses.fields(cls)}
    rename = rename or {}
    kwargs = {}
    for key, value in data.items():
        target = rename.get(key, key)
        if target not in names:
            problems.append(f"{block}.{key}: unknown field")
            continue
        if convert and target in convert:
            try:
                value = convert[target](value)
            except (TypeError, ValueError):
                problems.append(f"{block}.{key}: invalid value {value!r}")
                continue
        elif isinstance(value, bool) or not isinstance(value, (int, float, str, type(None), list)):
            if not isinstance(value, bool) or target not in ("enable_distance", "enable_rollover"):
                problems.append(f"{block}.{key}: invalid value {value!r}")
                continue
        kwargs[target] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        problems.extend(f"{block}: {p}" for p in exc.problems or [str(exc)])
    except TypeError as exc:
        problems.append(f"{block}: {exc}")
    return None


def _terrain(data, base_dir, problems):
    if not isinstance(data, dict):
        problems.append("terrain: must be an object with 'file' or 'synth'")
        return None
    extra = set(data) - {"file", "synth"}
    for k in sorted(extra):
        problems.append(f"terrain.{k}: unknown field")
    if ("file" in data) == ("synth" in data):
        problems.append("terrain: exactly one of 'file' or 'synth' is required")
        return None
    try:
        if "file" in data:
            path = Path(data["file"])
            if not path.is_absolute():
                path = Path(base_dir) / path
            return read_heightmap(path)
        synth = dict(data["synth"])
        kind = synth.pop("kind", None)
        if kind is None:
            problems.append("terrain.synth.kind: required")
            return None
        return synth_terrain(kind, **synth)
    except ConfigError as exc:
        problems.extend(f"terrain: {p}" for p in (exc.problems or [str(exc)]))
    except OSError as exc:
        problems.append(f"terrain.file: {exc}")
    except (TypeError, ValueError) as exc:
        problems.append(f"terrain.synth: {exc}")
    return None


def _perimeters(data, problems):
    if data is None:
        return []
    if not isinstance(data, list):
        problems.append("perimeters: must be a list")
        return []
    out = []
    for i, p in enumerate(data):
        if not isinstance(p, dict) or set(p) - {"kind", "vertices"}:
            problems.append(f"perimeters[{i}]: must be an object with 'kind' and 'vertices'")
            continue
        try:
            out.append(Perimeter(p.get("kind"), p.get("vertices")))
        except ConfigError as exc:
            problems.extend(f"perimeters[{i}]: {q}" for q in (exc.problems or [str(exc)]))
        except (TypeError, ValueError) as exc:
            problems.append(f"perimeters[{i}]: {exc}")
    return out


def _xy_block(block, data, required, optional, problems):
    if not isinstance(data, dict):
        problems.append(f"{block}: must be an object")
        return None
    out = {}
    for k in sorted(set(data) - set(required) - set(optional)):
        problems.append(f"{block}.{k}: unknown field")
    for k in required:
        if k not in data:
            problems.append(f"{block}.{k}: required")
    for k in list(required) + list(optional):
        if k in data:
            v = data[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                problems.append(f"{block}.{k}: must be a finite number, got {v!r}")
            else:
                out[k] = float(v)
    if any(k not in out for k in required):
        return None
    return {**optional, **out}


def scenario_from_dict(data: dict, base_dir=".") -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario invalid", ["top level must be a JSON object"])
    problems = [f"{k}: unknown block" for k in sorted(set(data) - _BLOCKS)]
    for k in ("terrain", "start", "goal"):
        if k not in data:
            problems.append(f"{k}: required block missing")
    terrain = _terrain(data.get("terrain"), base_dir, problems) if "terrain" in data else None
    perimeters = _perimeters(data.get("perimeters"), problems)
    start = _xy_block("start", data.get("start", {}), ("x", "y", "speed"), {"psi": 0.0}, problems) \
        if "start" in data else None
    goal_d = _xy_block("goal", data.get("goal", {}), ("x", "y"), {"r": 2.5}, problems) if "goal" in data else None
    goal = None
    if goal_d is not None:
        try:
            goal = Goal(goal_d["x"], goal_d["y"], goal_d["r"])
        except ConfigError as exc:
            problems.extend(f"goal: {p}" for p in exc.problems)
    vehicle = _build(VehicleParams, "vehicle", data.get("vehicle"), problems)
    tires = _build(TireParams, "tires", data.get("tires"), problems)
    constraints = _build(ConstraintConfig, "constraints", data.get("constraints"), problems)
    planner_d = dict(data.get("planner") or {}) if isinstance(data.get("planner", {}), dict) else None
    planner = None
    if planner_d is None:
        problems.append("planner: must be an object")
    else:
        weights_d = planner_d.pop("weights", None)
        weights = _build(CostWeights, "planner.weights", weights_d, problems)
        planner = _build(PlannerConfig, "planner", planner_d, problems)
        if planner is not None and weights is not None and constraints is not None:
            planner = planner.replace(weights=weights, constraints=constraints)
    trial = _build(TrialSettings, "trial", data.get("trial"), problems,
                   convert={"speeds": lambda v: tuple(float(x) for x in v), "setup": int, "n_trials": int,
                            "seed": int})
    if problems:
        raise ConfigError("scenario invalid", problems)
    name = str(data.get("name", "scenario"))
    return Scenario(terrain, perimeters, (start["x"], start["y"], start["psi"], start["speed"]), goal,
                    vehicle, tires, constraints, planner, trial, name)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("scenario unreadable", [f"{path}: {exc.strerror or exc}"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("scenario is not valid JSON", [f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from None
    return scenario_from_dict(data, base_dir=path.parent)


# -------------------------------------------------------------- built-ins

def benign_spec(speed=5.0, model="srb", n_samples=128, seed=0):
    """Flat ground, goal 20 m straight ahead, no features."""
    return {
        "name": "benign",
        "terrain": {"synth": {"kind": "flat", "origin_x": -10, "origin_y": -15, "width": 45, "length": 30,
                              "resolution": 0.25}},
        "perimeters": [],
        "start": {"x": 0.0, "y": 0.0, "psi": 0.0, "speed": speed},
        "goal": {"x": 20.0, "y": 0.0, "r": 2.5},
        "planner": {"model": model, "n_samples": n_samples, "seed": seed},
        "trial": {"speeds": [speed], "setup": 1, "n_trials": 20, "seed": seed},
    }


def stress_spec(speed=8.0, model="srb", n_samples=128, seed=0, setup=1):
    """Oblique ridge field followed by a 90 degree left turn in a bounded corridor.

    The ridges cross the corridor at 0.3 rad, so the left and right wheels
    meet each crest at different times and the chassis is rocked in roll as
    well as pitch.
    """
    return {
        "name": "ridge_and_turn",
        "terrain": {"synth": {"kind": "sine_ridge", "amplitude": 0.35, "wavelength": 4.0, "angle": 0.3,
                              "x_start": 8.0, "x_end": 24.0, "taper": 2.0,
                              "origin_x": -8, "origin_y": -10, "width": 58, "length": 50,
                              "resolution": 0.1}},
        "perimeters": [
            {"kind": "path_boundary",
             "vertices": [[-6, -5], [44, -5], [44, 38], [34, 38], [34, 5], [-6, 5]]},
        ],
        "start": {"x": 0.0, "y": 0.0, "psi": 0.0, "speed": speed},
        "goal": {"x": 39.0, "y": 30.0, "r": 2.5},
        "planner": {"model": model, "n_samples": n_samples, "seed": seed},
        "trial": {"speeds": [speed], "setup": setup, "n_trials": 50, "seed": seed},
    }


def builtin(name: str, **kw) -> Scenario:
    specs = {"benign": benign_spec, "stress": stress_spec}
    if name not in specs:
        raise ConfigError("unknown built-in scenario", [f"{name!r} must be one of {', '.join(specs)}"])
    return scenario_from_dict(specs[name](**kw))
