"""Optimal control problem assembly and the sampling ("empirical argmin") solver.

The solver draws N i.i.d. steering-rate sequences, rolls every one of them
out through the configured vehicle model, and keeps the cheapest. There is
no warm start and no sample averaging.
"""
from __future__ import annotations

import dataclasses
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import backend as _backend
from . import dynamics as dyn
from ._layout import BREAKDOWN_FIELDS, pack_cost
from .constraints import constraint_set_cost, esm, wheel_ground_points
from .errors import ConfigError, SolverError
from .params import ConstraintConfig, TireParams, VehicleParams
from .rng import counter_uniform


@dataclass(frozen=True)
class CostWeights:
    w_t: float = 5.0
    w_c: float = 8.0
    w_g: float = 15.0

    def __post_init__(self):
        bad = [f"{k}={v!r} must be >= 0" for k, v in vars(self).items() if not v >= 0]
        if bad:
            raise ConfigError("cost weights invalid", bad)


@dataclass(frozen=True)
class Goal:
    x_g: float
    y_g: float
    r_g: float = 2.5

    def __post_init__(self):
        if not self.r_g > 0:
            raise ConfigError("goal invalid", [f"r_g={self.r_g!r} must be > 0"])

    def distance(self, x, y):
        return np.hypot(np.asarray(x) - self.x_g, np.asarray(y) - self.y_g)


@dataclass
class ControlSequence:
    """``n_t`` zero-order-hold segments of (steering rate, longitudinal acceleration)."""

    values: np.ndarray
    dt_zoh: float = 0.25

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, 2)
        if self.values.shape[0] < 1:
            raise ConfigError("control sequence invalid", ["n_t must be >= 1"])

    @property
    def n_t(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return self.n_t * self.dt_zoh

    def __len__(self):
        return self.n_t

    def __getitem__(self, i) -> dyn.Control:
        return dyn.Control(*map(float, self.values[i]))

    def within_bounds(self, vp: VehicleParams) -> bool:
        return bool(np.all(np.abs(self.values[:, 0]) <= vp.delta_rate_max))


def _default_workers():
    raw = os.environ.get("TMPC_WORKERS")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("TMPC_WORKERS invalid", [f"TMPC_WORKERS={raw!r} must be a positive integer"]) from None
    if n < 1:
        raise ConfigError("TMPC_WORKERS invalid", [f"TMPC_WORKERS={raw!r} must be a positive integer"])
    return n


@dataclass(frozen=True)
class PlannerConfig:
    n_samples: int = 1024
    seed: int = 0
    model: str = "srb"
    dt_int: float = 0.005
    dt_zoh: float = 0.25
    n_t: int = 16
    delta_rate_max: float = 1.0
    v_bx_rate: float = 0.0
    workers: int | None = None
    backend: str | None = None
    weights: CostWeights = field(default_factory=CostWeights)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)

    def __post_init__(self):
        problems = []
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            problems.append(f"n_samples={self.n_samples!r} must be a positive integer")
        if self.model not in dyn.MODELS:
            problems.append(f"model={self.model!r} must be one of {', '.join(dyn.MODELS)}")
        if self.n_t < 1:
            problems.append(f"n_t={self.n_t!r} must be >= 1")
        if not self.delta_rate_max > 0:
            problems.append(f"delta_rate_max={self.delta_rate_max!r} must be > 0")
        if self.workers is not None and self.workers < 1:
            problems.append(f"workers={self.workers!r} must be >= 1")
        if not (self.dt_int > 0 and self.dt_zoh > 0):
            problems.append("dt_int and dt_zoh must be > 0")
        else:
            try:
                dyn.steps_per_segment(self.dt_zoh, self.dt_int)
            except ConfigError as exc:
                problems.extend(exc.problems)
        if problems:
            raise ConfigError("planner configuration invalid", problems)

    @property
    def n_workers(self) -> int:
        return self.workers if self.workers is not None else _default_workers()

    def replace(self, **changes) -> "PlannerConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RolloutResult:
    cost: float
    breakdown: dict
    goal_time: float | None = None
    trajectory: np.ndarray | None = None

    @property
    def reached_goal(self) -> bool:
        return self.goal_time is not None


@dataclass
class SolverStats:
    iteration: int
    n_samples: int
    best_index: int
    best_cost: float
    mean_cost: float
    n_diverged: int
    elapsed_s: float
    rollouts_per_s: float
    workers: int
    backend: str


def _rate_terms(model, states, aux, delta_rates, weights, cfg, sdist, vp):
    idx_psi = dyn.EST_PSI if model == "est" else dyn.SRB_PSI
    n = states.shape[0]
    if sdist is not None and sdist.has_features:
        pts = wheel_ground_points(states[:, 0], states[:, 1], states[:, idx_psi], vp)
        wheel_sd = sdist.at(pts[..., 0], pts[..., 1])
    else:
        wheel_sd = np.full((n, 4), np.inf)
    if model == "est":
        measure = aux
    else:
        measure = esm(states[:, dyn.SRB_PHI], states[:, dyn.SRB_THETA], vp)
    soft = constraint_set_cost(model, np.asarray(measure, dtype=np.float64), wheel_sd, cfg, vp)
    return (np.full(n, weights.w_t), weights.w_c * delta_rates ** 2,
            np.asarray(soft.distance, dtype=np.float64), np.asarray(soft.rollover, dtype=np.float64))


def trajectory_cost(model, states, aux, controls: ControlSequence, weights: CostWeights, goal: Goal,
                    cfg: ConstraintConfig, sdist, vp: VehicleParams, dt_int: float) -> RolloutResult:
    """Cost of an integrated rollout.

    ``states`` and ``aux`` come from :func:`tmpc.dynamics.integrate` with
    ``return_aux=True``. The running cost is summed with the rectangle rule on
    the integration grid and stops at the first state inside the goal circle;
    the terminal cost is charged at that (possibly truncated) state.
    """
    states = np.asarray(states, dtype=np.float64)
    aux = np.asarray(aux, dtype=np.float64)
    k = dyn.steps_per_segment(controls.dt_zoh, dt_int)
    n_steps = states.shape[0] - 1
    inside = goal.distance(states[:, 0], states[:, 1]) <= goal.r_g
    stop = int(np.argmax(inside)) if inside.any() else n_steps
    goal_time = stop * dt_int if inside.any() else None
    seg = np.minimum(np.arange(stop) // k, controls.n_t - 1)
    rates = _rate_terms(model, states[:stop], aux[:stop], controls.values[seg, 0], weights, cfg, sdist, vp)
    parts = dict(zip(BREAKDOWN_FIELDS, (
        float(np.sum(rates[0]) * dt_int),
        float(np.sum(rates[1]) * dt_int),
        float(weights.w_g * goal.distance(states[stop, 0], states[stop, 1])),
        float(np.sum(rates[2]) * dt_int),
        float(np.sum(rates[3]) * dt_int),
    )))
    return RolloutResult(sum(parts.values()), parts, goal_time, states[:stop + 1])


def sample_controls(cfg: PlannerConfig, stream: int = 0, n_samples: int | None = None) -> np.ndarray:
    """Sampled control sequences, shape (N, n_t, 2).

    Sample ``i`` depends only on ``(cfg.seed, stream, i)``, so a smaller batch
    is always a prefix of a larger one.
    """
    n = cfg.n_samples if n_samples is None else int(n_samples)
    out = np.empty((n, cfg.n_t, 2))
    out[..., 0] = counter_uniform(cfg.seed, stream, n, cfg.n_t, -cfg.delta_rate_max, cfg.delta_rate_max)
    out[..., 1] = cfg.v_bx_rate
    return out


def _check_state(model, state):
    s = np.asarray(state, dtype=np.float64)
    dim = dyn.state_dim(model)
    if s.shape != (dim,):
        raise ConfigError("state invalid", [f"{model} state must have shape ({dim},), got {s.shape}"])
    if not np.all(np.isfinite(s)):
        raise ConfigError("state invalid", ["state contains non-finite entries"])
    return s


def solve_ocp(state, terrain, sdist, goal: Goal, cfg: PlannerConfig, vp: VehicleParams | None = None,
              tp: TireParams | None = None, iteration: int = 0, keep_trajectory: bool = False):
    """Evaluate ``cfg.n_samples`` sampled sequences and return the cheapest.

    Returns ``(ControlSequence, RolloutResult, SolverStats)``. Ties go to the
    lowest sample index. Raises :class:`SolverError` if every rollout diverged.
    """
    vp = vp or VehicleParams()
    tp = tp or TireParams()
    s0 = _check_state(cfg.model, state)
    impl = _backend.get(cfg.backend)
    samples = sample_controls(cfg, stream=iteration)
    cost_vec = pack_cost(cfg.model, cfg.weights, goal, cfg.constraints, vp)
    workers = cfg.n_workers
    t0 = time.perf_counter()
    costs, parts, goal_times = impl.rollout_costs(cfg.model, s0, samples, terrain, sdist, vp, tp, cost_vec,
                                                  cfg.dt_zoh, cfg.dt_int, workers=workers)
    elapsed = time.perf_counter() - t0
    finite = np.isfinite(costs)
    if not finite.any():
        raise SolverError(f"all {cfg.n_samples} rollouts diverged")
    best = int(np.argmin(np.where(finite, costs, np.inf)))
    seq = ControlSequence(samples[best], cfg.dt_zoh)
    gt = float(goal_times[best])
    result = RolloutResult(float(costs[best]), dict(zip(BREAKDOWN_FIELDS, map(float, parts[best]))),
                           None if math.isnan(gt) else gt)
    if keep_trajectory:
        result.trajectory = dyn.integrate(cfg.model, s0, seq.values, terrain, vp, tp, dt_int=cfg.dt_int,
                                          dt_zoh=cfg.dt_zoh, backend=impl)
    stats = SolverStats(iteration, cfg.n_samples, best, float(costs[best]), float(np.mean(costs[finite])),
                        int((~finite).sum()), elapsed, cfg.n_samples / max(elapsed, 1e-12), workers, impl.name)
    return seq, result, stats


class MpcContext:
    """Receding-horizon planner state: one solve per call, a fresh sample stream each time."""

    def __init__(self, cfg: PlannerConfig, terrain, sdist, goal: Goal, vp=None, tp=None, stream_offset=1):
        self.cfg = cfg
        self.terrain = terrain
        self.sdist = sdist
        self.goal = goal
        self.vp = vp or VehicleParams()
        self.tp = tp or TireParams()
        self.iteration = 0
        self.stream_offset = stream_offset
        self.last = None

    def solve(self, state):
        out = solve_ocp(state, self.terrain, self.sdist, self.goal, self.cfg, self.vp, self.tp,
                        iteration=self.stream_offset + self.iteration)
        self.iteration += 1
        self.last = out
        return out


def plan_step(ctx: MpcContext, state) -> dyn.Control:
    """Solve the OCP from ``state`` and return the first control of the best sequence."""
    seq, _, _ = ctx.solve(state)
    return seq[0]
