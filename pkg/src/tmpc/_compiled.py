"""Adapter exposing the Cython kernels with the same API as :mod:`tmpc._fallback`."""
from __future__ import annotations

import numpy as np

from . import _kernels
from . import dynamics as dyn
from ._layout import pack_vehicle
from .errors import ConfigError, DomainError, IntegrationDiverged

name = "cython"


def _grid(hmap):
    return (np.ascontiguousarray(hmap.heights, dtype=np.float64), hmap.origin_x, hmap.origin_y,
            hmap.resolution)


def _sdist_args(sdist):
    if sdist is None or not sdist.has_features:
        return (np.zeros((2, 2)), 0.0, 0.0, 1.0, False)
    return (np.ascontiguousarray(sdist.values), sdist.origin_x, sdist.origin_y, sdist.resolution, True)


def rollout_costs(model, x0, controls, terrain, sdist, vp, tp, cost_vec, dt_zoh, dt_int, workers=1):
    """Cost of each control sequence in ``controls`` (N, n_t, 2)."""
    dyn.state_dim(model)
    controls = np.ascontiguousarray(controls, dtype=np.float64)
    if controls.ndim != 3 or controls.shape[0] == 0 or controls.shape[2] != 2:
        raise ConfigError("no samples", ["controls must have shape (N>0, n_t, 2)"])
    k = dyn.steps_per_segment(dt_zoh, dt_int)
    return _kernels.rollout_costs_raw(
        model, np.ascontiguousarray(x0, dtype=np.float64), controls, *_grid(terrain),
        *_sdist_args(sdist), pack_vehicle(vp, tp), np.ascontiguousarray(cost_vec, dtype=np.float64),
        k, float(dt_int), int(workers))


def integrate(model, s0, controls, terrain, vp, tp, dt_zoh, dt_int, scheme="euler", return_aux=False):
    s0 = np.asarray(s0, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    if s0.ndim != 1 or controls.ndim != 2:
        # batched integration only exists in the numpy reference
        return dyn.integrate_numpy(model, s0, controls, terrain, vp, tp, dt_zoh, dt_int, scheme, return_aux)
    dim = dyn.state_dim(model)
    if s0.shape[0] != dim:
        raise ConfigError("state invalid", [f"{model} state must have {dim} entries, got {s0.shape[0]}"])
    if scheme not in ("euler", "rk4"):
        raise ConfigError("integration scheme invalid", [f"scheme={scheme!r} must be euler or rk4"])
    k = dyn.steps_per_segment(dt_zoh, dt_int)
    states, aux, status, step = _kernels.integrate_raw(
        model, np.ascontiguousarray(s0), np.ascontiguousarray(controls), *_grid(terrain),
        pack_vehicle(vp, tp), k, float(dt_int), int(scheme == "rk4"))
    if status == 1:
        raise DomainError("SRB pitch too close to gimbal lock")
    if status == 2:
        raise IntegrationDiverged(step)
    if return_aux:
        return states, aux
    return states


def derivative(model, s, u, terrain, vp, tp):
    s = np.asarray(s, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if s.ndim != 1:
        return dyn.derivative(model, s, u, terrain, vp, tp, return_aux=True)
    try:
        return _kernels.derivative_raw(model, np.ascontiguousarray(s), float(u[0]), float(u[1]),
                                       *_grid(terrain), pack_vehicle(vp, tp))
    except ArithmeticError as exc:
        raise DomainError(str(exc)) from None
