from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmpc import dynamics as dyn
from tmpc import planner
from tmpc._layout import BREAKDOWN_FIELDS, pack_cost
from tmpc.errors import ConfigError, SolverError
from tmpc.params import ConstraintConfig, VehicleParams
from tmpc.planner import (ControlSequence, CostWeights, Goal, MpcContext, PlannerConfig, plan_step, sample_controls,
                          solve_ocp, trajectory_cost)
from tmpc.rng import counter_uniform
from tmpc.terrain import Perimeter, build_sdist_map, synth_terrain

from conftest import BACKENDS


def run_cost(model, s0, controls, terrain, vp, tp, goal, sdist=None, weights=CostWeights(), cfg=ConstraintConfig()):
    seq = ControlSequence(controls)
    states, aux = dyn.integrate(model, s0, seq.values, terrain, vp, tp, return_aux=True)
    return trajectory_cost(model, states, aux, seq, weights, goal, cfg, sdist, vp, 0.005)


# -------------------------------------------------------- trajectory_cost

@pytest.mark.parametrize("model", ["est", "srb"])
def test_straight_run_cost(model, vp, tp, flat):
    s0 = np.array([0, 0, 0, 0, 0, 0, 5.0]) if model == "est" else dyn.srb_rest_state(flat, 0, 0, 0, 5.0, vp)
    r = run_cost(model, s0, np.zeros((16, 2)), flat, vp, tp, Goal(30.0, 0.0))
    # 4 s at w_t = 5 plus w_g = 15 times the 10 m left to go
    assert r.cost == pytest.approx(5 * 4 + 15 * 10, rel=1e-9)
    assert r.breakdown["control"] == 0.0 and r.breakdown["rollover"] == 0.0
    assert r.goal_time is None


def test_constant_steer_rate_cost(vp, tp, flat):
    s0 = np.array([0, 0, 0, 0, 0, 0, 5.0])
    r = run_cost("est", s0, np.tile([0.5, 0.0], (16, 1)), flat, vp, tp, Goal(30.0, 0.0))
    assert r.breakdown["control"] == pytest.approx(8 * 0.25 * 4, rel=1e-9)


def test_start_inside_goal(vp, tp, flat):
    s0 = np.array([1.0, 0.5, 0, 0, 0, 0, 5.0])
    r = run_cost("est", s0, np.zeros((4, 2)), flat, vp, tp, Goal(0.0, 0.0))
    assert r.goal_time == 0.0
    assert r.breakdown["time"] == 0.0 and r.breakdown["control"] == 0.0
    assert r.cost == pytest.approx(15 * math.hypot(1.0, 0.5))


def test_goal_truncation(vp, tp, flat):
    s0 = np.array([0, 0, 0, 0, 0, 0, 5.0])
    r = run_cost("est", s0, np.zeros((16, 2)), flat, vp, tp, Goal(12.5, 0.0, 2.5))
    assert r.goal_time == pytest.approx(2.0)
    assert r.breakdown["time"] == pytest.approx(10.0)
    assert r.breakdown["terminal"] == pytest.approx(15 * 2.5)


def test_breakdown_sums_and_distance_term(vp, tp, flat):
    s0 = dyn.srb_rest_state(flat, 0, 0, 0, 6.0, vp)
    u = np.column_stack([np.linspace(-1, 1, 16), np.zeros(16)])
    lane = build_sdist_map(flat, [Perimeter("path_boundary", [(-5, -1.2), (40, -1.2), (40, 1.2), (-5, 1.2)])])
    r = run_cost("srb", s0, u, flat, vp, tp, Goal(25.0, 0.0), sdist=lane)
    assert r.cost == pytest.approx(sum(r.breakdown.values()), rel=1e-9)
    assert r.breakdown["distance"] > 0
    free = run_cost("srb", s0, u, flat, vp, tp, Goal(25.0, 0.0), sdist=build_sdist_map(flat, []))
    assert free.breakdown["distance"] == 0.0


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("model", ["est", "srb"])
def test_kernel_costs_match_oracle(backend, model, vp, tp, mild):
    """Fused rollout-and-cost kernels against integrate + trajectory_cost."""
    lane = build_sdist_map(mild, [Perimeter("path_boundary", [(-4, -4), (33, -4), (33, 4), (-4, 4)])])
    goal = Goal(14.0, 1.0)
    s0 = np.array([0, 0, 0, 0, 0, 0, 6.0]) if model == "est" else dyn.srb_rest_state(mild, 0, 0, 0, 6.0, vp)
    cfg = PlannerConfig(n_samples=24, model=model, backend=backend, seed=3)
    ctrl = sample_controls(cfg)
    cost_vec = pack_cost(model, cfg.weights, goal, cfg.constraints, vp)
    costs, parts, goal_times = planner._backend.get(backend).rollout_costs(model, s0, ctrl, mild, lane, vp, tp,
                                                                           cost_vec, 0.25, 0.005)
    for i in range(ctrl.shape[0]):
        r = run_cost(model, s0, ctrl[i], mild, vp, tp, goal, sdist=lane)
        assert costs[i] == pytest.approx(r.cost, rel=1e-9)
        assert np.allclose(parts[i], [r.breakdown[k] for k in BREAKDOWN_FIELDS], rtol=1e-9, atol=1e-9)
        assert (r.goal_time is None) == math.isnan(goal_times[i])
        if r.goal_time is not None:
            assert goal_times[i] == pytest.approx(r.goal_time)
    assert np.any(~np.isnan(goal_times)) and np.any(parts[:, 3] > 0)


# -------------------------------------------------------- sample_controls

def test_samples_within_bounds_and_centered():
    cfg = PlannerConfig(n_samples=6250)
    x = sample_controls(cfg)
    assert x.shape == (6250, 16, 2)
    d = x[..., 0].ravel()
    assert np.all(np.abs(d) <= 1.0) and np.all(x[..., 1] == 0.0)
    assert abs(d.mean()) < 3 * (1 / math.sqrt(3)) / math.sqrt(d.size)
    assert d.var() == pytest.approx(1 / 3, rel=0.02)


def test_samples_deterministic_and_nested():
    cfg = PlannerConfig(n_samples=256, seed=11)
    a = sample_controls(cfg, stream=5)
    assert np.array_equal(a, sample_controls(cfg, stream=5))
    assert np.array_equal(a[:64], sample_controls(cfg, stream=5, n_samples=64))
    assert not np.array_equal(a, sample_controls(cfg, stream=6))
    assert not np.array_equal(a, sample_controls(cfg.replace(seed=12), stream=5))


def test_counter_uniform_independent_columns():
    u = counter_uniform(1, 0, 20000, 2)
    assert abs(np.corrcoef(u[:, 0], u[:, 1])[0, 1]) < 0.03
    assert np.all((u >= 0) & (u < 1))


# --------------------------------------------------------------- solve_ocp

def test_single_sample_is_returned(vp, tp, flat):
    cfg = PlannerConfig(n_samples=1, model="est", seed=2)
    seq, res, stats = solve_ocp(np.array([0, 0, 0, 0, 0, 0, 5.0]), flat, None, Goal(30.0, 0.0), cfg, vp, tp)
    assert np.array_equal(seq.values, sample_controls(cfg)[0])
    assert stats.best_index == 0 and stats.n_samples == 1


SMALL_FLAT = synth_terrain("flat", origin_x=-10, origin_y=-10, width=30, length=20, resolution=0.25)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 64), st.integers(1, 64))
def test_nested_prefix_monotone(seed, n1, extra):
    cfg = PlannerConfig(n_samples=n1, model="est", seed=seed, n_t=4)
    s0 = np.array([0, 0, 0, 0, 0, 0, 5.0])
    _, r1, _ = solve_ocp(s0, SMALL_FLAT, None, Goal(8.0, 3.0), cfg)
    _, r2, _ = solve_ocp(s0, SMALL_FLAT, None, Goal(8.0, 3.0), cfg.replace(n_samples=n1 + extra))
    assert r2.cost <= r1.cost


def test_tie_break_lowest_index(vp, tp, flat, monkeypatch):
    base = sample_controls(PlannerConfig(n_samples=4, model="est"))
    dup = np.concatenate([base[[2]], base[[1]], base[[2]], base[[1]]])
    monkeypatch.setattr(planner, "sample_controls", lambda cfg, stream=0, n_samples=None: dup.copy())
    cfg = PlannerConfig(n_samples=4, model="est")
    _, _, stats = solve_ocp(np.array([0, 0, 0, 0, 0, 0, 5.0]), flat, None, Goal(30.0, 0.0), cfg, vp, tp)
    assert stats.best_index in (0, 1)


def test_all_diverged_raises(vp, tp, flat):
    def rollout_costs(model, x0, controls, *args, **kw):
        n = controls.shape[0]
        return np.full(n, np.inf), np.full((n, 5), np.inf), np.full(n, np.nan)

    fake = SimpleNamespace(name="fake", rollout_costs=rollout_costs)
    cfg = PlannerConfig(n_samples=8, model="est", backend=fake)
    with pytest.raises(SolverError):
        solve_ocp(np.array([0, 0, 0, 0, 0, 0, 5.0]), flat, None, Goal(30.0, 0.0), cfg, vp, tp)


def test_flat_goal_ahead_near_zero_steer(vp, tp, flat):
    s0 = np.array([0, 0, 0, 0, 0, 0, 5.0])
    goal = Goal(30.0, 0.0)
    cfg = PlannerConfig(n_samples=1024, model="est", seed=0)
    seq, res, _ = solve_ocp(s0, flat, None, goal, cfg, vp, tp, keep_trajectory=True)
    zero = run_cost("est", s0, np.zeros((16, 2)), flat, vp, tp, goal)
    assert abs(res.cost - zero.cost) <= 0.05 * zero.cost
    x, y, psi = res.trajectory[-1, [dyn.EST_X, dyn.EST_Y, dyn.EST_PSI]]
    bearing = math.atan2(goal.y_g - y, goal.x_g - x)
    assert abs(psi - bearing) < 0.2


@pytest.mark.parametrize("model", ["est", "srb"])
def test_solver_worker_invariance(model, vp, tp, ridge):
    s0 = np.array([0, 0, 0, 0, 0, 0, 6.0]) if model == "est" else dyn.srb_rest_state(ridge, 0, 0, 0, 6.0, vp)
    cfg = PlannerConfig(n_samples=64, model=model, seed=9)
    out = [solve_ocp(s0, ridge, None, Goal(20.0, 2.0), cfg.replace(workers=w), vp, tp) for w in (1, 4, 8)]
    for seq, res, stats in out[1:]:
        assert np.array_equal(seq.values, out[0][0].values)
        assert res.cost == out[0][1].cost and stats.best_index == out[0][2].best_index


def test_solver_stats(vp, tp, flat):
    cfg = PlannerConfig(n_samples=32, model="est")
    _, res, stats = solve_ocp(np.array([0, 0, 0, 0, 0, 0, 5.0]), flat, None, Goal(30.0, 0.0), cfg, vp, tp)
    assert stats.best_cost == res.cost <= stats.mean_cost
    assert stats.n_diverged == 0 and stats.rollouts_per_s > 0
    assert stats.backend in BACKENDS


def test_bad_state_shape(vp, tp, flat):
    with pytest.raises(ConfigError):
        solve_ocp(np.zeros(13), flat, None, Goal(30.0, 0.0), PlannerConfig(model="est"), vp, tp)
    with pytest.raises(ConfigError):
        solve_ocp(np.full(7, np.nan), flat, None, Goal(30.0, 0.0), PlannerConfig(model="est"), vp, tp)


# ------------------------------------------------------------------ config

def test_planner_config_collects_problems():
    with pytest.raises(ConfigError) as exc:
        PlannerConfig(n_samples=0, model="car", dt_int=0.003)
    assert len(exc.value.problems) == 3


def test_workers_env(monkeypatch):
    monkeypatch.setenv("TMPC_WORKERS", "3")
    assert PlannerConfig().n_workers == 3
    assert PlannerConfig(workers=2).n_workers == 2
    monkeypatch.setenv("TMPC_WORKERS", "lots")
    with pytest.raises(ConfigError):
        PlannerConfig().n_workers


def test_value_types():
    with pytest.raises(ConfigError):
        CostWeights(w_t=-1)
    with pytest.raises(ConfigError):
        Goal(0, 0, 0)
    seq = ControlSequence(np.zeros((3, 2)))
    assert seq.horizon == 0.75 and len(seq) == 3
    assert seq.within_bounds(VehicleParams())
    assert not ControlSequence([[1.5, 0.0]]).within_bounds(VehicleParams())


# ---------------------------------------------------------------- plan_step

def test_plan_step_is_first_segment(vp, tp, flat):
    cfg = PlannerConfig(n_samples=32, model="est", seed=5)
    s = np.array([0, 0, 0, 0, 0, 0, 5.0])
    ctx = MpcContext(cfg, flat, None, Goal(30.0, 5.0), vp, tp)
    u = plan_step(ctx, s)
    seq = ctx.last[0]
    assert u.delta_rate == seq.values[0, 0] and u.v_bx_rate == seq.values[0, 1]
    again = plan_step(MpcContext(cfg, flat, None, Goal(30.0, 5.0), vp, tp), s)
    assert again == u
    # successive calls draw fresh streams
    assert ctx.solve(s)[2].iteration == 2
