"""Closed-loop trials, matched-seed batches and open-loop model errors.

The plant is the single rigid body model integrated with RK4 at 1 ms on the
plant level-of-detail terrain. Every 40 ms of simulated time the planner is
handed the plant state (no delay, no noise) and its first steering-rate
command is held for the next 40 ms.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .constraints import esm, soft_cost_rate, wheel_ground_points
from .errors import ConfigError, DomainError, IntegrationDiverged, SolverError
from .params import SoftConstraintParams
from .planner import MpcContext
from .rng import counter_uniform
from .scenario import LOD_TABLE, Scenario
from .stats import mann_whitney_u, stat_summary

OUTCOMES = ("success", "goal_with_collision", "rollover", "timeout", "aborted")

TRIAL_COLUMNS = ("t", "x", "y", "z", "psi", "theta", "phi", "v_bx", "v_by", "v_bz", "omega_bx", "omega_by",
                 "omega_bz", "delta", "delta_rate_cmd", "cost_rate", "min_sdist", "esm")

SOLVER_COLUMNS = ("iteration", "best_cost", "mean_cost", "rollouts_per_s")

IC_STREAM = 0


# ------------------------------------------------------------------- plant

def plant_step(state, control, terrain, vp, tp, dt=0.01, substep=0.001, backend=None):
    """Advance the plant by ``dt`` under a held (steering rate, v_bx rate) command."""
    u = control.as_array() if isinstance(control, dyn.Control) else np.asarray(control, dtype=np.float64)
    traj = dyn.integrate("srb", state, u.reshape(1, 2), terrain, vp, tp, dt_int=substep, dt_zoh=dt,
                         scheme="rk4", backend=backend)
    return traj[-1]


def planner_state(model, plant_state):
    """Project a plant (SRB) state onto the planner model's state vector."""
    s = np.asarray(plant_state, dtype=np.float64)
    if model == "srb":
        return s.copy()
    return np.array([s[dyn.SRB_X], s[dyn.SRB_Y], s[dyn.SRB_PSI], s[dyn.SRB_VBY], s[dyn.SRB_WBZ],
                     s[dyn.SRB_DELTA], s[dyn.SRB_VBX]])


def initial_offsets(seed, lateral, heading):
    """Matched initial-condition perturbation (lateral m, heading rad) for a trial seed."""
    u = counter_uniform(seed, IC_STREAM, 1, 2, -1.0, 1.0)[0]
    return float(lateral * u[0]), float(heading * u[1])


def initial_plant_state(scenario: Scenario, speed, seed, terrain):
    x, y, psi, _ = scenario.start
    d_lat, d_psi = initial_offsets(seed, scenario.trial.lateral_offset, scenario.trial.heading_offset)
    x0 = x - math.sin(psi) * d_lat
    y0 = y + math.cos(psi) * d_lat
    return dyn.srb_rest_state(terrain, x0, y0, psi + d_psi, speed, scenario.vehicle), (d_lat, d_psi)


# ----------------------------------------------------------------- records

@dataclass
class TrialRecord:
    seed: int
    model: str
    setup: int
    speed: float
    outcome: str
    t_end: float
    cost_total: float
    rows: np.ndarray
    offsets: tuple = (0.0, 0.0)
    first_collision_time: float | None = None
    collision_time: float = 0.0
    solver_rows: list = field(default_factory=list)
    wall_time_s: float = 0.0
    message: str = ""

    @property
    def times(self):
        return self.rows[:, 0]

    @property
    def states(self):
        return self.rows[:, 1:14]

    @property
    def controls(self):
        return self.rows[:, 14]

    def metadata(self) -> dict:
        return {"seed": self.seed, "model": self.model, "setup": self.setup, "speed": self.speed,
                "outcome": self.outcome, "t_end": self.t_end, "cost_total": self.cost_total,
                "lateral_offset": self.offsets[0], "heading_offset": self.offsets[1],
                "first_collision_time": "" if self.first_collision_time is None else self.first_collision_time,
                "collision_time": self.collision_time}

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        for k, v in self.metadata().items():
            buf.write(f"# {k}={v!r}\n" if isinstance(v, str) else f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in self.rows:
            w.writerow([repr(float(v)) for v in r])
        text = buf.getvalue()
        if path_or_buf is not None:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        return text

    def solver_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SOLVER_COLUMNS)
        for r in self.solver_rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def read_trial_csv(path) -> TrialRecord:
    meta = {}
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for n, line in enumerate(lines, 1):
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        else:
            body.append((n, line))
    if not body or tuple(body[0][1].split(",")) != TRIAL_COLUMNS:
        raise ConfigError("trial log invalid", [f"{path}: missing or unexpected header"])
    for n, line in body[1:]:
        parts = line.split(",")
        if len(parts) != len(TRIAL_COLUMNS):
            raise ConfigError("trial log invalid", [f"{path}:{n}: expected {len(TRIAL_COLUMNS)} fields"])
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ConfigError("trial log invalid", [f"{path}:{n}: non-numeric field"]) from None
    try:
        fct = meta.get("first_collision_time", "")
        return TrialRecord(seed=int(meta["seed"]), model=meta["model"].strip("'"), setup=int(meta["setup"]),
                           speed=float(meta["speed"]), outcome=meta["outcome"].strip("'"),
                           t_end=float(meta["t_end"]), cost_total=float(meta["cost_total"]),
                           rows=np.array(rows).reshape(-1, len(TRIAL_COLUMNS)),
                           offsets=(float(meta["lateral_offset"]), float(meta["heading_offset"])),
                           first_collision_time=float(fct) if fct not in ("", "''") else None,
                           collision_time=float(meta["collision_time"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError("trial log invalid", [f"{path}: bad metadata ({exc})"]) from None


# ------------------------------------------------------------------ trials

def _cost_rate(delta_rate, wheel_sds, scenario):
    """Accrued-cost rate on the plant: time, control and per-wheel distance terms."""
    cfg = scenario.planner
    rate = cfg.weights.w_t + cfg.weights.w_c * delta_rate ** 2
    if scenario.constraints.enable_distance:
        scp = SoftConstraintParams(scenario.constraints.eps_dist, scenario.constraints.sigma)
        finite = np.isfinite(wheel_sds)
        rate += float(np.sum(soft_cost_rate(-wheel_sds[finite], scp)))
    return rate


def run_trial(scenario: Scenario, seed: int, model: str | None = None, speed: float | None = None,
              setup: int | None = None, n_samples: int | None = None, workers: int | None = None,
              perturb: bool = True) -> TrialRecord:
    """One closed-loop trial; the outcome is exactly one of :data:`OUTCOMES`."""
    cfg = scenario.planner
    changes = {"seed": int(seed)}
    if model is not None:
        changes["model"] = model
    if n_samples is not None:
        changes["n_samples"] = int(n_samples)
    if workers is not None:
        changes["workers"] = int(workers)
    cfg = cfg.replace(**changes)
    ts = scenario.trial
    setup = setup or ts.setup
    speed = float(speed if speed is not None else scenario.start[3])
    terrains = scenario.terrains(setup)
    plant_terrain = terrains["plant"]
    vp, tp = scenario.vehicle, scenario.tires
    sdist = scenario.sdist
    ctx = MpcContext(cfg, terrains[cfg.model], sdist, scenario.goal, vp, tp)
    state, offsets = initial_plant_state(scenario, speed, seed, plant_terrain)
    if not perturb:
        x, y, psi, _ = scenario.start
        state, offsets = dyn.srb_rest_state(plant_terrain, x, y, psi, speed, vp), (0.0, 0.0)
    roll_lim = math.radians(ts.rollover_deg)
    n_max = int(round(ts.timeout / ts.plant_dt))
    rows = []
    solver_rows = []
    cost = 0.0
    collided_at = None
    collision_time = 0.0
    delta_rate = 0.0
    outcome = None
    message = ""
    t0 = time.perf_counter()
    step = 0
    while True:
        t = step * ts.plant_dt
        pts = wheel_ground_points(state[dyn.SRB_X], state[dyn.SRB_Y], state[dyn.SRB_PSI], vp)
        wheel_sds = sdist.at(pts[:, 0], pts[:, 1]) if sdist.has_features else np.full(4, np.inf)
        min_sd = float(np.min(wheel_sds))
        if min_sd < 0:
            collided_at = t if collided_at is None else collided_at
        u_esm = esm(state[dyn.SRB_PHI], state[dyn.SRB_THETA], vp)
        if scenario.goal.distance(state[0], state[1]) <= scenario.goal.r_g:
            outcome = "success" if collided_at is None else "goal_with_collision"
        elif max(abs(state[dyn.SRB_PHI]), abs(state[dyn.SRB_THETA])) > roll_lim:
            outcome = "rollover"
        elif step >= n_max:
            outcome = "timeout"
        if outcome is None and step % ts.plan_every == 0:
            try:
                seq, _, stats = ctx.solve(planner_state(cfg.model, state))
                delta_rate = float(seq.values[0, 0])
                solver_rows.append((stats.iteration, stats.best_cost, stats.mean_cost, stats.rollouts_per_s))
            except (SolverError, DomainError) as exc:
                outcome, message = "aborted", str(exc)
        rate = _cost_rate(delta_rate, wheel_sds, scenario)
        rows.append([t, *state, delta_rate if outcome is None else 0.0, rate, min_sd, u_esm])
        if outcome is not None:
            break
        cost += rate * ts.plant_dt
        if min_sd < 0:
            collision_time += ts.plant_dt
        try:
            state = plant_step(state, (delta_rate, cfg.v_bx_rate), plant_terrain, vp, tp, ts.plant_dt,
                               ts.plant_substep)
        except (DomainError, IntegrationDiverged) as exc:
            # the plant can only leave its domain by tumbling past the rollover threshold
            outcome, message = "aborted", f"plant: {exc}"
            rows.append([t + ts.plant_dt, *np.full(13, np.nan), 0.0, np.nan, np.nan, np.nan])
            break
        step += 1
    t_end = rows[-1][0]
    if outcome in ("success", "goal_with_collision", "timeout"):
        cost += cfg.weights.w_g * float(scenario.goal.distance(state[0], state[1]))
    return TrialRecord(int(seed), cfg.model, int(setup), speed, outcome, float(t_end), float(cost),
                       np.array(rows), offsets, collided_at, collision_time, solver_rows,
                       time.perf_counter() - t0, message)


# ------------------------------------------------------------------- batch

@dataclass
class BatchSummary:
    rows: list
    trials: list
    seeds: list = field(default_factory=list)

    SUMMARY_COLUMNS = ("speed", "setup", "formulation", "n", "seeds") + tuple(
        f"{k}_{o}" for o in OUTCOMES for k in ("p", "se")) + ("median_cost", "mw_p_cost")
    TRIAL_TABLE_COLUMNS = ("speed", "setup", "formulation", "trial", "seed", "outcome", "t_end", "cost_total",
                           "lateral_offset", "heading_offset")

    def cell(self, speed, setup, formulation):
        for r in self.rows:
            if r["speed"] == speed and r["setup"] == setup and r["formulation"] == formulation:
                return r
        raise KeyError((speed, setup, formulation))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.SUMMARY_COLUMNS)
        for r in self.rows:
            w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in self.SUMMARY_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def trials_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.TRIAL_TABLE_COLUMNS)
        for (i, rec) in self.trials:
            w.writerow([rec.speed, rec.setup, rec.model, i, rec.seed, rec.outcome, repr(rec.t_end),
                        repr(rec.cost_total), repr(rec.offsets[0]), repr(rec.offsets[1])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def summarize(trials, speeds, setups, formulations, seeds) -> BatchSummary:
    rows = []
    for speed in speeds:
        for setup in setups:
            cell_costs = {}
            for f in formulations:
                recs = [r for _, r in trials if r.speed == speed and r.setup == setup and r.model == f]
                if not recs:
                    continue
                summ = stat_summary([r.outcome for r in recs], OUTCOMES)
                row = {"speed": speed, "setup": setup, "formulation": f, "n": len(recs),
                       "seeds": " ".join(str(r.seed) for r in recs)}
                for o in OUTCOMES:
                    row[f"p_{o}"] = summ[o].p
                    row[f"se_{o}"] = summ[o].se
                costs = [r.cost_total for r in recs if r.outcome == "success"]
                cell_costs[f] = costs
                row["median_cost"] = float(np.median(costs)) if costs else float("nan")
                row["mw_p_cost"] = float("nan")
                rows.append(row)
            fs = [f for f in formulations if cell_costs.get(f)]
            if len(fs) == 2:
                p = mann_whitney_u(cell_costs[fs[0]], cell_costs[fs[1]]).p_value
                for r in rows:
                    if r["speed"] == speed and r["setup"] == setup:
                        r["mw_p_cost"] = p
    return BatchSummary(rows, trials, list(seeds))


def run_batch(scenario: Scenario, speeds=None, formulations=("est", "srb"), n_trials=None, base_seed=None,
              setups=None, n_samples=None, workers=1, trial_workers=1, on_trial=None) -> BatchSummary:
    """Matched-seed batch: trial ``i`` uses seed ``base_seed + i`` in every cell.

    A trial that fails unexpectedly is recorded as ``aborted`` and the batch
    continues.
    """
    ts = scenario.trial
    speeds = [float(s) for s in (speeds if speeds is not None else ts.speeds)]
    setups = list(setups if setups is not None else [ts.setup])
    n_trials = ts.n_trials if n_trials is None else int(n_trials)
    base_seed = ts.seed if base_seed is None else int(base_seed)
    for f in formulations:
        dyn.state_dim(f)
    for s in setups:
        if s not in LOD_TABLE:
            raise ConfigError("batch invalid", [f"setup={s!r} must be 1, 2 or 3"])
    seeds = [base_seed + i for i in range(n_trials)]
    jobs = [(speed, setup, f, i, seed) for speed in speeds for setup in setups for f in formulations
            for i, seed in enumerate(seeds)]

    def run(job):
        speed, setup, f, i, seed = job
        try:
            rec = run_trial(scenario, seed, model=f, speed=speed, setup=setup, n_samples=n_samples,
                            workers=workers)
        except Exception as exc:  # noqa: BLE001 - a broken trial must not sink the batch
            rec = TrialRecord(seed, f, setup, speed, "aborted", 0.0, float("nan"), np.empty((0, 18)),
                              message=f"{type(exc).__name__}: {exc}")
        if on_trial is not None:
            on_trial(i, rec)
        return i, rec

    if trial_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(trial_workers) as pool:
            trials = list(pool.map(run, jobs))
    else:
        trials = [run(j) for j in jobs]
    return summarize(trials, speeds, setups, formulations, seeds)


# --------------------------------------------------------------- open loop

@dataclass
class OpenLoopError:
    location: float
    esm: float
    diverged: bool = False
    start_time: float = 0.0


def model_esm(model, states, terrain, vp):
    """ESM along a model trajectory; the EST model uses its local-plane attitude."""
    states = np.asarray(states)
    if model == "srb":
        return esm(states[:, dyn.SRB_PHI], states[:, dyn.SRB_THETA], vp)
    phi, theta, R = dyn.est_kinematics(states, terrain)
    _, theta321, phi321 = dyn.attitude_321_from_matrix(R)
    return esm(phi321, theta321, vp)


def _time_average(values, dt):
    # trapezoid rule over a uniform grid, divided by the window length
    v = np.asarray(values, dtype=np.float64)
    return float((v.sum() - 0.5 * (v[0] + v[-1])) / (v.size - 1))


def open_loop_errors(plant_states, delta_rates, model, terrain, vp, tp, horizon=4.0, plant_dt=0.01,
                     dt_int=0.005, v_bx_rate=0.0, start_time=0.0, scheme="euler") -> OpenLoopError:
    """Time-averaged location and ESM errors of ``model`` against a plant trajectory.

    ``plant_states`` (n, 13) are sampled every ``plant_dt`` and ``delta_rates``
    holds the command applied over each plant step. The model starts from the
    plant's first state and replays the same commands open loop, integrated
    the way the planner integrates it unless ``scheme``/``dt_int`` say otherwise.
    """
    plant_states = np.asarray(plant_states, dtype=np.float64)
    n = int(round(horizon / plant_dt))
    if plant_states.shape[0] < n + 1 or len(delta_rates) < n:
        raise ConfigError("open-loop segment too short",
                          [f"need {n + 1} plant samples for a {horizon} s horizon, got {plant_states.shape[0]}"])
    seg = plant_states[:n + 1]
    controls = np.column_stack([np.asarray(delta_rates[:n], dtype=np.float64), np.full(n, v_bx_rate)])
    k = dyn.steps_per_segment(plant_dt, dt_int)
    try:
        traj = dyn.integrate(model, planner_state(model, seg[0]), controls, terrain, vp, tp, dt_int=dt_int,
                             dt_zoh=plant_dt, scheme=scheme)
    except (DomainError, IntegrationDiverged):
        return OpenLoopError(math.inf, math.inf, True, start_time)
    traj = traj[::k]
    loc = np.hypot(traj[:, 0] - seg[:, 0], traj[:, 1] - seg[:, 1])
    plant_esm = esm(seg[:, dyn.SRB_PHI], seg[:, dyn.SRB_THETA], vp)
    e_esm = np.abs(model_esm(model, traj, terrain, vp) - plant_esm)
    return OpenLoopError(_time_average(loc, plant_dt), _time_average(e_esm, plant_dt), False, start_time)


def open_loop_study(records, scenario: Scenario, models=("est", "srb"), horizon=4.0, stride=0.04, setup=None):
    """Errors for every ``stride``-spaced 4 s window of the plant trajectories in ``records``.

    Returns {model: [OpenLoopError, ...]}, one entry per window, in matching order.
    """
    ts = scenario.trial
    terrains = scenario.terrains(setup)
    step = max(1, int(round(stride / ts.plant_dt)))
    n = int(round(horizon / ts.plant_dt))
    out = {m: [] for m in models}
    for rec in records:
        rows = rec.rows
        finite = np.all(np.isfinite(rows[:, 1:14]), axis=1)
        usable = int(np.argmin(finite)) if not finite.all() else rows.shape[0]
        for i0 in range(0, usable - n, step):
            for m in models:
                e = open_loop_errors(rows[i0:i0 + n + 1, 1:14], rows[i0:i0 + n, 14], m, terrains[m],
                                     scenario.vehicle, scenario.tires, horizon, ts.plant_dt,
                                     scenario.planner.dt_int, scenario.planner.v_bx_rate, rows[i0, 0])
                out[m].append(e)
    return out
