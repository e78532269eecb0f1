"""Pure-numpy rollout backend, vectorized across samples.

Selected when the compiled ``tmpc._kernels`` extension is unavailable or when
``TMPC_BACKEND=python``. Slower by one to two orders of magnitude, but runs
the same algorithm through :mod:`tmpc.dynamics`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dynamics as dyn
from ._layout import COST_FIELDS, unpack
from .constraints import wheel_ground_points
from .errors import ConfigError

name = "python"


def _soft(pi, eps, sigma):
    return sigma * np.maximum(0.0, 1.0 + pi / eps) ** 2


def _rollout_chunk(model, x0, controls, terrain, sdist, vp, tp, c, dt_zoh, dt_int):
    n = controls.shape[0]
    dim = dyn.state_dim(model)
    k = dyn.steps_per_segment(dt_zoh, dt_int)
    n_t = controls.shape[1]
    s = np.broadcast_to(np.asarray(x0, dtype=np.float64), (n, dim)).copy()
    parts = np.zeros((n, 5))
    goal_time = np.full(n, np.nan)
    active = np.ones(n, dtype=bool)
    diverged = np.zeros(n, dtype=bool)
    use_dist = c["enable_dist"] > 0 and sdist is not None and sdist.has_features
    use_roll = c["enable_roll"] > 0
    idx_psi = dyn.EST_PSI if model == "est" else dyn.SRB_PSI
    idx_delta = dyn.EST_DELTA if model == "est" else dyn.SRB_DELTA
    safe = np.nan_to_num(np.array(x0, dtype=np.float64))
    if model == "srb":
        safe[dyn.SRB_THETA] = 0.0
    step = 0
    for seg in range(n_t):
        u = controls[:, seg, :]
        for _ in range(k):
            d_goal = np.hypot(s[:, 0] - c["x_g"], s[:, 1] - c["y_g"])
            reached = active & (d_goal <= c["r_g"])
            goal_time[reached] = step * dt_int
            active &= ~reached
            if not active.any():
                break
            if model == "srb":
                bad = active & (np.abs(s[:, dyn.SRB_THETA]) >= math.pi / 2 - dyn.GIMBAL_MARGIN)
                diverged |= bad
                active &= ~bad
            # frozen rows (goal reached or diverged) are evaluated at a harmless state
            s_eval = np.where(active[:, None], s, safe)
            with np.errstate(all="ignore"):
                ds, aux = dyn.derivative(model, s_eval, u, terrain, vp, tp, return_aux=True)
            rate_t = np.full(n, c["w_t"])
            rate_c = c["w_c"] * u[:, 0] ** 2
            rate_d = np.zeros(n)
            if use_dist:
                pts = wheel_ground_points(s_eval[:, 0], s_eval[:, 1], s_eval[:, idx_psi], vp)
                sd = sdist.at(pts[..., 0], pts[..., 1])
                rate_d = _soft(-sd, c["eps_dist"], c["sigma"]).sum(axis=-1)
            rate_r = np.zeros(n)
            if use_roll:
                if model == "est":
                    pi = np.abs(aux) - c["a_by_bar"]
                else:
                    phi, theta = s_eval[:, dyn.SRB_PHI], s_eval[:, dyn.SRB_THETA]
                    dh = c["R_bar"] * (1.0 - np.sin(np.abs(phi) + c["phi_bar"])) * np.cos(theta)
                    outside = np.abs(phi) + c["phi_bar"] > math.pi / 2
                    pi = -vp.M * vp.g * np.where(outside, -dh, dh)
                rate_r = _soft(pi, c["eps_roll"], c["sigma"])
            a = active[:, None]
            parts[:, :2] += np.where(a, np.stack([rate_t, rate_c], axis=1) * dt_int, 0.0)
            parts[:, 3:] += np.where(a, np.stack([rate_d, rate_r], axis=1) * dt_int, 0.0)
            with np.errstate(all="ignore"):
                s_next = s + dt_int * ds
            np.clip(s_next[:, idx_delta], -vp.delta_max, vp.delta_max, out=s_next[:, idx_delta])
            s = np.where(a, s_next, s)
            step += 1
            bad = active & ~np.all(np.isfinite(s), axis=1)
            diverged |= bad
            active &= ~bad
        if not active.any():
            break
    with np.errstate(invalid="ignore"):
        d_goal = np.hypot(s[:, 0] - c["x_g"], s[:, 1] - c["y_g"])
    reached = active & (d_goal <= c["r_g"])
    goal_time[reached] = step * dt_int
    parts[:, 2] = c["w_g"] * d_goal
    parts[diverged] = np.inf
    costs = parts.sum(axis=1)
    return costs, parts, goal_time


def rollout_costs(model, x0, controls, terrain, sdist, vp, tp, cost_vec, dt_zoh, dt_int, workers=1):
    """Cost of each control sequence in ``controls`` (N, n_t, 2)."""
    c = unpack(COST_FIELDS, cost_vec)
    controls = np.ascontiguousarray(controls, dtype=np.float64)
    n = controls.shape[0]
    if n == 0:
        raise ConfigError("no samples", ["controls must contain at least one sequence"])
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    args = (terrain, sdist, vp, tp, c, dt_zoh, dt_int)
    if workers == 1:
        return _rollout_chunk(model, x0, controls, *args)
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(lambda ab: _rollout_chunk(model, x0, controls[ab[0]:ab[1]], *args),
                              zip(bounds[:-1], bounds[1:])))
    return tuple(np.concatenate(p) for p in zip(*parts))


def integrate(model, s0, controls, terrain, vp, tp, dt_zoh, dt_int, scheme="euler", return_aux=False):
    return dyn.integrate_numpy(model, s0, controls, terrain, vp, tp, dt_zoh, dt_int, scheme, return_aux)


def derivative(model, s, u, terrain, vp, tp):
    return dyn.derivative(model, s, u, terrain, vp, tp, return_aux=True)
