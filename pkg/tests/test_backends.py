"""Compiled kernel against the numpy reference."""
from __future__ import annotations

import numpy as np
import pytest

from tmpc import _fallback, backend
from tmpc import dynamics as dyn
from tmpc._layout import pack_cost
from tmpc.errors import ConfigError
from tmpc.params import ConstraintConfig
from tmpc.planner import CostWeights, Goal, PlannerConfig, sample_controls
from tmpc.terrain import Perimeter, build_sdist_map

cython = pytest.importorskip("tmpc._compiled", reason="compiled extension not built")


def corridor(grid):
    return build_sdist_map(grid, [Perimeter("path_boundary", [(-4, -3), (30, -3), (30, 3), (-4, 3)]),
                                  Perimeter("obstacle", [(12, -1), (14, -1), (14, 0.5), (12, 0.5)])])


def states(terrain, vp):
    est = np.array([0.0, 0.3, 0.05, 0.2, 0.1, 0.05, 6.0])
    srb = dyn.srb_rest_state(terrain, 0.0, 0.3, 0.05, 6.0, vp)
    srb[dyn.SRB_WBX] = 0.2
    srb[dyn.SRB_VBY] = 0.3
    return {"est": est, "srb": srb}


def test_default_is_compiled():
    assert backend.DEFAULT == "cython"
    assert backend.get().name == "cython"
    assert backend.get("python") is _fallback


def test_env_override(monkeypatch):
    monkeypatch.setenv("TMPC_BACKEND", "python")
    assert backend.get().name == "python"
    monkeypatch.setenv("TMPC_BACKEND", "fortran")
    with pytest.raises(ConfigError):
        backend.get()


@pytest.mark.parametrize("model", ["est", "srb"])
def test_derivative_parity(model, vp, tp, ridge, rng):
    s = states(ridge, vp)[model]
    for _ in range(20):
        x = s + rng.normal(0, 0.05, s.shape)
        u = np.array([rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)])
        a, aux_a = cython.derivative(model, x, u, ridge, vp, tp)
        b, aux_b = _fallback.derivative(model, x, u, ridge, vp, tp)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-10)
        assert aux_a == pytest.approx(float(aux_b), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("model", ["est", "srb"])
@pytest.mark.parametrize("scheme", ["euler", "rk4"])
def test_integrate_parity(model, scheme, vp, tp, ridge):
    s = states(ridge, vp)[model]
    u = np.column_stack([0.5 * np.sin(np.arange(8)), np.zeros(8)])
    a, aux_a = cython.integrate(model, s, u, ridge, vp, tp, 0.25, 0.005, scheme, return_aux=True)
    b, aux_b = _fallback.integrate(model, s, u, ridge, vp, tp, 0.25, 0.005, scheme, return_aux=True)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-9)
    assert np.allclose(aux_a, aux_b, rtol=1e-10, atol=1e-9)


@pytest.mark.parametrize("model", ["est", "srb"])
def test_rollout_cost_parity(model, vp, tp, ridge):
    s = states(ridge, vp)[model]
    sdist = corridor(ridge)
    cfg = PlannerConfig(n_samples=48, model=model, seed=4)
    ctrl = sample_controls(cfg, stream=2)
    goal = Goal(18.0, 0.0)
    cost_vec = pack_cost(model, CostWeights(), goal, ConstraintConfig(), vp)
    ca, pa, ga = cython.rollout_costs(model, s, ctrl, ridge, sdist, vp, tp, cost_vec, 0.25, 0.005)
    cb, pb, gb = _fallback.rollout_costs(model, s, ctrl, ridge, sdist, vp, tp, cost_vec, 0.25, 0.005)
    assert np.allclose(ca, cb, rtol=1e-9)
    assert np.allclose(pa, pb, rtol=1e-9, atol=1e-9)
    assert np.array_equal(np.isnan(ga), np.isnan(gb))
    assert np.allclose(ga[~np.isnan(ga)], gb[~np.isnan(gb)])
    assert np.any(~np.isnan(ga)) and np.any(pa[:, 3] > 0)


@pytest.mark.parametrize("impl", [cython, _fallback], ids=["cython", "python"])
def test_rollout_workers_identical(impl, vp, tp, ridge):
    s = states(ridge, vp)["srb"]
    cfg = PlannerConfig(n_samples=40, model="srb")
    ctrl = sample_controls(cfg)
    cost_vec = pack_cost("srb", CostWeights(), Goal(15.0, 0.0), ConstraintConfig(), vp)
    ref = impl.rollout_costs("srb", s, ctrl, ridge, corridor(ridge), vp, tp, cost_vec, 0.25, 0.005, workers=1)
    for w in (3, 8):
        out = impl.rollout_costs("srb", s, ctrl, ridge, corridor(ridge), vp, tp, cost_vec, 0.25, 0.005, workers=w)
        for x, y in zip(ref, out):
            assert np.array_equal(x, y, equal_nan=True)


@pytest.mark.parametrize("impl", [cython, _fallback], ids=["cython", "python"])
def test_divergent_rollout_costs_inf(impl, vp, tp, flat):
    s = dyn.srb_rest_state(flat, 0, 0, 0, 3.0, vp)
    s[dyn.SRB_THETA] = 1.5702  # gimbal lock at the first step
    ctrl = np.zeros((3, 2, 2))
    cost_vec = pack_cost("srb", CostWeights(), Goal(30.0, 0.0), ConstraintConfig(), vp)
    costs, parts, _ = impl.rollout_costs("srb", s, ctrl, flat, None, vp, tp, cost_vec, 0.25, 0.005)
    assert np.all(np.isinf(costs)) and np.all(np.isinf(parts))


@pytest.mark.parametrize("impl", [cython, _fallback], ids=["cython", "python"])
def test_empty_batch_rejected(impl, vp, tp, flat):
    cost_vec = pack_cost("est", CostWeights(), Goal(30.0, 0.0), ConstraintConfig(), vp)
    with pytest.raises(ConfigError):
        impl.rollout_costs("est", np.zeros(7), np.zeros((0, 4, 2)), flat, None, vp, tp, cost_vec, 0.25, 0.005)
