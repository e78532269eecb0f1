"""Rollover metrics and normalized soft-constraint costs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import G, ConstraintConfig, SoftConstraintParams, VehicleParams


def esm_geometry(vp: VehicleParams):
    """(R_bar, phi_bar): CoM-to-wheel-line radius and its elevation angle."""
    hr = vp.h + vp.R
    return math.hypot(hr, vp.e / 2), math.atan(2 * hr / vp.e)


def esm(phi, theta, vp: VehicleParams):
    """Energy stability margin [J] for roll ``phi`` and pitch ``theta`` (3-2-1).

    Positive while the CoM is inside the footprint, zero at the balance point
    ``|phi| = pi/2 - phi_bar`` and increasingly negative past it. Pitch-over is
    assumed to need more energy than roll-over.
    """
    R_bar, phi_bar = esm_geometry(vp)
    dh = R_bar * (1.0 - np.sin(np.abs(phi) + phi_bar)) * np.cos(theta)
    # past the balance point dh >= 0 again while the CoM is outside the footprint
    outside = np.abs(phi) + phi_bar > math.pi / 2
    out = vp.M * vp.g * np.where(outside, -dh, dh)
    return float(out) if np.ndim(out) == 0 else out


def esm_normalization(vp: VehicleParams) -> float:
    """Flat-ground ESM; the scale for the ESM constraint's safety band."""
    return esm(0.0, 0.0, vp)


def lateral_accel_violation(a_by, g_by, cfg: ConstraintConfig):
    """Violation measure ``|a_by - g_by| - a_by_bar`` [m/s^2]."""
    return np.abs(np.asarray(a_by) - g_by) - cfg.a_by_bar


def soft_cost_rate(pi_c, scp: SoftConstraintParams):
    """Normalized quadratic penalty: zero below ``-epsilon``, ``sigma`` at ``pi = 0``."""
    out = scp.sigma * np.maximum(0.0, 1.0 + np.asarray(pi_c, dtype=np.float64) / scp.epsilon) ** 2
    return float(out) if np.ndim(out) == 0 else out


def rollover_soft_params(model: str, cfg: ConstraintConfig, vp: VehicleParams) -> SoftConstraintParams:
    if model == "est":
        return SoftConstraintParams(cfg.safety_factor * cfg.a_by_bar, cfg.sigma)
    nominal = cfg.esm_nominal if cfg.esm_nominal is not None else esm_normalization(vp)
    return SoftConstraintParams(cfg.safety_factor * nominal, cfg.sigma)


def wheel_ground_points(x, y, psi, vp: VehicleParams):
    """Planar contact-point positions (..., 4, 2) from CoM position and yaw."""
    rho = np.array([[vp.L_f, vp.e / 2], [vp.L_f, -vp.e / 2], [-vp.L_r, vp.e / 2], [-vp.L_r, -vp.e / 2]])
    c, s = np.cos(psi)[..., None], np.sin(psi)[..., None]
    px = np.asarray(x)[..., None] + c * rho[:, 0] - s * rho[:, 1]
    py = np.asarray(y)[..., None] + s * rho[:, 0] + c * rho[:, 1]
    return np.stack([px, py], axis=-1)


@dataclass
class SoftCostBreakdown:
    distance: float | np.ndarray
    rollover: float | np.ndarray

    @property
    def total(self):
        return self.distance + self.rollover


def constraint_set_cost(model: str, rollover_measure, wheel_sdist, cfg: ConstraintConfig,
                        vp: VehicleParams) -> SoftCostBreakdown:
    """Soft-constraint cost rate of one formulation.

    ``rollover_measure`` is ``a_by - g_by`` for the EST formulation and the ESM
    value [J] for the SRB formulation. ``wheel_sdist`` holds signed distances
    with wheels (and features, if given per feature) on the trailing axes; use
    ``+inf`` for "no feature".
    """
    dist = np.zeros(np.shape(rollover_measure))
    if cfg.enable_distance:
        sd = np.asarray(wheel_sdist, dtype=np.float64)
        scp = SoftConstraintParams(cfg.eps_dist, cfg.sigma)
        per = np.where(np.isfinite(sd), soft_cost_rate(-np.where(np.isfinite(sd), sd, 0.0), scp), 0.0)
        lead = per.shape[:np.ndim(rollover_measure)]
        dist = per.reshape(lead + (math.prod(per.shape[len(lead):]),)).sum(axis=-1)
    roll = np.zeros(np.shape(rollover_measure))
    if cfg.enable_rollover:
        scp = rollover_soft_params(model, cfg, vp)
        if model == "est":
            pi = np.abs(rollover_measure) - cfg.a_by_bar
        else:
            pi = -np.asarray(rollover_measure)
        roll = soft_cost_rate(pi, scp)
    if np.ndim(dist) == 0:
        return SoftCostBreakdown(float(dist), float(roll))
    return SoftCostBreakdown(dist, roll)


def critical_lateral_accel(vp: VehicleParams) -> float:
    """Tire-liftoff lateral acceleration from load transfer, ``M g / (2 K_zy)``."""
    K_zy = vp.M * (vp.h + vp.R) / vp.e
    return vp.M * vp.g / (2 * K_zy)


@dataclass(frozen=True)
class CriticalMu:
    threshold: float
    mu: float | None
    violable: bool | None


def critical_mu(cfg: ConstraintConfig, g: float = G, mu: float | None = None) -> CriticalMu:
    """Friction needed before the lateral-acceleration constraint can be violated.

    The constraint is reachable iff ``mu >= a_by_bar / g``.
    """
    threshold = cfg.a_by_bar / g
    violable = None if mu is None else bool(mu >= threshold)
    return CriticalMu(threshold, mu, violable)
