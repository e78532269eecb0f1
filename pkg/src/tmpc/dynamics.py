"""Extended single-track (EST) and single rigid body (SRB) vehicle models.

Every function broadcasts over leading axes: a state may be a single vector
of shape ``(7,)``/``(13,)`` or a batch ``(N, 7)``/``(N, 13)``. The batched
form doubles as the pure-numpy rollout backend.

Frames: world ``W`` is z-up; body ``B`` is x-forward, y-left, z-up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, astuple

import numpy as np

from .errors import ConfigError, DomainError, IntegrationDiverged
from .params import TireParams, VehicleParams
from .terrain import Heightmap, gradient_at, height_at, normal_at

# EST state layout
EST_X, EST_Y, EST_PSI, EST_VBY, EST_WBZ, EST_DELTA, EST_VBX = range(7)
EST_DIM = 7
# SRB state layout
(SRB_X, SRB_Y, SRB_Z, SRB_PSI, SRB_THETA, SRB_PHI, SRB_VBX, SRB_VBY, SRB_VBZ,
 SRB_WBX, SRB_WBY, SRB_WBZ, SRB_DELTA) = range(13)
SRB_DIM = 13

V_BX_FLOOR = 0.1
GIMBAL_MARGIN = 1e-3

WHEELS = ("fl", "fr", "rl", "rr")

MODELS = ("est", "srb")


def state_dim(model: str) -> int:
    if model == "est":
        return EST_DIM
    if model == "srb":
        return SRB_DIM
    raise ConfigError("unknown model", [f"model={model!r} must be 'est' or 'srb'"])


@dataclass
class EstState:
    x: float
    y: float
    psi: float
    v_by: float
    omega_bz: float
    delta: float
    v_bx: float

    def as_array(self):
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a):
        return cls(*map(float, a))


@dataclass
class SrbState:
    x: float
    y: float
    z: float
    psi: float
    theta: float
    phi: float
    v_bx: float
    v_by: float
    v_bz: float
    omega_bx: float
    omega_by: float
    omega_bz: float
    delta: float

    def as_array(self):
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a):
        return cls(*map(float, a))


@dataclass
class Control:
    delta_rate: float
    v_bx_rate: float = 0.0

    def as_array(self):
        return np.array([self.delta_rate, self.v_bx_rate], dtype=np.float64)


@dataclass
class TireOutputs:
    """Per-step tire diagnostics, wheels ordered fl, fr, rl, rr."""

    F_z: np.ndarray
    F_y: np.ndarray
    slip: np.ndarray
    chi: np.ndarray | None = None
    chi_rate: np.ndarray | None = None


# ------------------------------------------------------------------ rotations

def rot_123(phi, theta, psi):
    """Body-to-world rotation for 1-2-3 Euler angles (x by phi, y by theta, z by psi)."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.stack([
        np.stack([ct * cp, -ct * sp, st * np.ones_like(cp)], axis=-1),
        np.stack([cf * sp + cp * sf * st, cf * cp - sf * st * sp, -ct * sf * np.ones_like(cp)], axis=-1),
        np.stack([sf * sp - cf * cp * st, cp * sf + cf * st * sp, cf * ct * np.ones_like(cp)], axis=-1),
    ], axis=-2)


def rot_321(psi, theta, phi):
    """Body-to-world rotation for 3-2-1 Euler angles (z by psi, y by theta, x by phi)."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.stack([
        np.stack([cp * ct, cp * sf * st - cf * sp, sf * sp + cf * cp * st], axis=-1),
        np.stack([ct * sp, cf * cp + sf * sp * st, cf * sp * st - cp * sf], axis=-1),
        np.stack([-st * np.ones_like(cp), ct * sf, cf * ct], axis=-1),
    ], axis=-2)


def euler_rates_321(omega_body, theta, phi):
    """Map body angular velocity to (psi_dot, theta_dot, phi_dot)."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(np.abs(theta) >= math.pi / 2 - GIMBAL_MARGIN):
        raise DomainError(f"pitch {theta!r} too close to gimbal lock (|theta| >= pi/2 - {GIMBAL_MARGIN})")
    w = np.asarray(omega_body, dtype=np.float64)
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    psi_dot = (sf * wy + cf * wz) / ct
    theta_dot = cf * wy - sf * wz
    phi_dot = wx + (sf * st * wy + cf * st * wz) / ct
    return np.stack([psi_dot, theta_dot, phi_dot], axis=-1)


def local_plane_attitude(normal):
    """Roll and pitch (1-2-3 convention) that align body z with ``normal``."""
    n = np.asarray(normal, dtype=np.float64)
    theta = np.arcsin(np.clip(n[..., 0], -1.0, 1.0))
    phi = np.arctan2(-n[..., 1], n[..., 2])
    return phi, theta


def attitude_321_from_matrix(R):
    """Recover (psi, theta, phi) 3-2-1 angles from a rotation matrix."""
    R = np.asarray(R)
    theta = -np.arcsin(np.clip(R[..., 2, 0], -1.0, 1.0))
    phi = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    psi = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return psi, theta, phi


# ---------------------------------------------------------------- tire, loads

def tire_lateral_force(alpha, F_z, tp: TireParams):
    """Sigmoid lateral force, saturating at ``mu * F_z``."""
    ca = tp.C * np.asarray(alpha, dtype=np.float64)
    out = F_z * (-ca * tp.mu) / np.sqrt(tp.mu * tp.mu + ca * ca)
    return float(out) if np.ndim(out) == 0 else out


def load_transfer_coeffs(vp: VehicleParams):
    """(K_zz_f, K_zz_r, K_zx, K_zy) in kg."""
    L = vp.L_f + vp.L_r
    return (vp.M * vp.L_r / L, vp.M * vp.L_f / L, vp.M * (vp.h + vp.R) / L, vp.M * (vp.h + vp.R) / vp.e)


def _controls(u):
    u = np.asarray(u, dtype=np.float64)
    return u[..., 0], u[..., 1]


# ------------------------------------------------------------------------ EST

def est_kinematics(s, terrain: Heightmap):
    """Local-plane attitude, body-to-world rotation and body gravity for EST states."""
    s = np.asarray(s, dtype=np.float64)
    n = normal_at(terrain, s[..., EST_X], s[..., EST_Y])
    phi, theta = local_plane_attitude(n)
    R = rot_123(phi, theta, s[..., EST_PSI])
    return phi, theta, R


def _gravity_body(R, g):
    # g_B = R^T (0, 0, -g): the negated last row of R
    return -g * R[..., 2, 0], -g * R[..., 2, 1], -g * R[..., 2, 2]


def _est_forces(s, u, R, vp, tp):
    v_by = s[..., EST_VBY]
    w = s[..., EST_WBZ]
    delta = s[..., EST_DELTA]
    v_bx = s[..., EST_VBX]
    vdot_x = _controls(u)[1]
    g_bx, g_by, g_bz = _gravity_body(R, vp.g)
    K_zzf, K_zzr, K_zx, _ = load_transfer_coeffs(vp)
    a_bx = vdot_x - w * v_by
    vx = np.maximum(v_bx, V_BX_FLOOR)
    alpha_f = np.arctan((v_by + w * vp.L_f) / vx) - delta
    alpha_r = np.arctan((v_by - w * vp.L_r) / vx)
    F_zf = np.maximum(-K_zzf * g_bz - K_zx * a_bx, 0.0)
    F_zr = np.maximum(-K_zzr * g_bz + K_zx * a_bx, 0.0)
    F_yf = tire_lateral_force(alpha_f, F_zf, tp)
    F_yr = tire_lateral_force(alpha_r, F_zr, tp)
    return dict(g_b=(g_bx, g_by, g_bz), a_bx=a_bx, alpha=(alpha_f, alpha_r),
                F_z=(F_zf, F_zr), F_y=(F_yf, F_yr))


def est_derivative(s, u, terrain: Heightmap, vp: VehicleParams, tp: TireParams, return_aux=False):
    """Time derivative of the EST state.

    With ``return_aux`` also returns the lateral specific force
    ``a_by - g_by`` used by the lateral-acceleration constraint.
    """
    s = np.asarray(s, dtype=np.float64)
    _, _, R = est_kinematics(s, terrain)
    f = _est_forces(s, u, R, vp, tp)
    v_by = s[..., EST_VBY]
    w = s[..., EST_WBZ]
    delta = s[..., EST_DELTA]
    v_bx = s[..., EST_VBX]
    F_yf, F_yr = f["F_y"]
    g_by = f["g_b"][1]
    delta_rate, vdot_x = _controls(u)

    ds = np.empty(np.broadcast_shapes(s.shape, np.shape(delta_rate) + (EST_DIM,)))
    # world velocity from body velocity (v_bx, v_by, 0)
    ds[..., EST_X] = R[..., 0, 0] * v_bx + R[..., 0, 1] * v_by
    ds[..., EST_Y] = R[..., 1, 0] * v_bx + R[..., 1, 1] * v_by
    ds[..., EST_PSI] = w
    ds[..., EST_VBY] = (F_yf + F_yr) / vp.M + g_by - w * v_bx
    ds[..., EST_WBZ] = (F_yf * vp.L_f * np.cos(delta) - F_yr * vp.L_r) / vp.J_zz
    ds[..., EST_DELTA] = delta_rate
    ds[..., EST_VBX] = vdot_x
    if return_aux:
        return ds, (F_yf + F_yr) / vp.M
    return ds


def est_accelerations(s, u, terrain, vp, tp):
    """Body-frame CoM accelerations (a_bx, a_by) and gravity (g_bx, g_by, g_bz)."""
    ds = est_derivative(s, u, terrain, vp, tp)
    _, _, R = est_kinematics(s, terrain)
    s = np.asarray(s, dtype=np.float64)
    a_bx = _controls(u)[1] - s[..., EST_WBZ] * s[..., EST_VBY]
    a_by = ds[..., EST_VBY] + s[..., EST_WBZ] * s[..., EST_VBX]
    return a_bx, a_by, _gravity_body(R, vp.g)


def wheel_normal_forces(a_bx, a_by, g_bz, vp: VehicleParams):
    """Physical-tire normal forces (fl, fr, rl, rr) from load transfer."""
    K_zzf, K_zzr, K_zx, K_zy = load_transfer_coeffs(vp)
    lat = K_zy * a_by / (-vp.M * g_bz)
    front = -K_zzf * g_bz - K_zx * a_bx
    rear = -K_zzr * g_bz + K_zx * a_bx
    return np.stack([front * (0.5 - lat), front * (0.5 + lat),
                     rear * (0.5 - lat), rear * (0.5 + lat)], axis=-1)


def est_tire_normals(s, u, terrain, vp: VehicleParams, tp: TireParams) -> TireOutputs:
    """Four physical-tire normal forces plus virtual-tire lateral forces.

    Normal forces are left unclamped: a negative value is the liftoff signal.
    """
    a_bx, a_by, (_, _, g_bz) = est_accelerations(s, u, terrain, vp, tp)
    _, _, R = est_kinematics(s, terrain)
    f = _est_forces(np.asarray(s, dtype=np.float64), u, R, vp, tp)
    return TireOutputs(F_z=wheel_normal_forces(a_bx, a_by, g_bz, vp),
                       F_y=np.stack(f["F_y"], axis=-1), slip=np.stack(f["alpha"], axis=-1))


def liftoff_normal_forces(lateral_specific_force, g_bz, vp: VehicleParams):
    """Normal forces under negligible longitudinal acceleration.

    Uses the gravity-corrected lateral acceleration ``a_by - g_by`` so that
    in-plane gravity on a side slope is not counted as load transfer.
    """
    K_zzf, K_zzr, _, K_zy = load_transfer_coeffs(vp)
    half = -vp.M * g_bz / 2
    shift = K_zy * lateral_specific_force
    return np.stack([K_zzf / vp.M * (half - shift), K_zzf / vp.M * (half + shift),
                     K_zzr / vp.M * (half - shift), K_zzr / vp.M * (half + shift)], axis=-1)


# ------------------------------------------------------------------------ SRB

def wheel_offsets(vp: VehicleParams) -> np.ndarray:
    """Body-frame CoM-to-contact-patch vectors, rows fl, fr, rl, rr."""
    hz = -(vp.h + vp.R)
    return np.array([[vp.L_f, vp.e / 2, hz], [vp.L_f, -vp.e / 2, hz],
                     [-vp.L_r, vp.e / 2, hz], [-vp.L_r, -vp.e / 2, hz]])


def _srb_terms(s, u, terrain, vp, tp):
    s = np.asarray(s, dtype=np.float64)
    theta = s[..., SRB_THETA]
    if np.any(np.abs(theta) >= math.pi / 2 - GIMBAL_MARGIN):
        raise DomainError("SRB pitch too close to gimbal lock")
    R = rot_321(s[..., SRB_PSI], theta, s[..., SRB_PHI])
    pos = s[..., SRB_X:SRB_Z + 1]
    v = s[..., SRB_VBX:SRB_VBZ + 1]
    w = s[..., SRB_WBX:SRB_WBZ + 1]
    delta = s[..., SRB_DELTA]
    rho = wheel_offsets(vp)                                         # (4, 3)
    K_zzf, K_zzr, _, _ = load_transfer_coeffs(vp)
    F_s = 0.5 * vp.g * np.array([K_zzf, K_zzf, K_zzr, K_zzr])
    k = np.array([vp.k_f, vp.k_f, vp.k_r, vp.k_r])
    b = np.array([vp.b_f, vp.b_f, vp.b_r, vp.b_r])

    rho_w = np.einsum("...ij,kj->...ki", R, rho)                    # (..., 4, 3)
    P = pos[..., None, :] + rho_w
    v_i = v[..., None, :] + np.cross(w[..., None, :], rho)          # body frame
    fx, fy = gradient_at(terrain, P[..., 0], P[..., 1])
    f = height_at(terrain, P[..., 0], P[..., 1])
    tau_w = np.stack([-fx, -fy, np.ones_like(fx)], axis=-1)         # unnormalized, z = 1
    tau_b = np.einsum("...ji,...kj->...ki", R, tau_w)               # R^T tau
    chi = (P[..., 2] - f) / tau_b[..., 2]
    w_cross_bz = np.stack([w[..., 1], -w[..., 0], np.zeros_like(w[..., 0])], axis=-1)
    chi_rate = np.einsum("...ki,...ki->...k", tau_b, v_i - chi[..., None] * w_cross_bz[..., None, :]) \
        / tau_b[..., 2]
    F_k = np.maximum(F_s - k * chi, 0.0)
    F_b = np.where(F_k > 0, np.maximum(-b * chi_rate, -F_k), 0.0)
    F_z = F_k + F_b
    steer = np.stack([delta, delta, np.zeros_like(delta), np.zeros_like(delta)], axis=-1)
    vx = np.maximum(v_i[..., 0], V_BX_FLOOR)
    alpha = np.arctan(v_i[..., 1] / vx) - steer
    F_y = tire_lateral_force(alpha, F_z, tp)
    return dict(R=R, v=v, w=w, rho=rho, chi=chi, chi_rate=chi_rate, F_z=F_z, F_y=F_y,
                alpha=alpha, steer=steer)


def srb_derivative(s, u, terrain: Heightmap, vp: VehicleParams, tp: TireParams, return_aux=False):
    """Time derivative of the SRB state; ``return_aux`` adds ``F_y / M``."""
    s = np.asarray(s, dtype=np.float64)
    t = _srb_terms(s, u, terrain, vp, tp)
    R, v, w, rho = t["R"], t["v"], t["w"], t["rho"]
    delta_rate, vdot_x = _controls(u)
    g_bx, g_by, g_bz = _gravity_body(R, vp.g)
    F_y_i = t["F_y"] * np.cos(t["steer"])
    F_y = F_y_i.sum(axis=-1)
    F_z = t["F_z"].sum(axis=-1)
    F_x_rear = 0.5 * vp.M * (vdot_x - g_bx + w[..., 1] * v[..., 2] - w[..., 2] * v[..., 1])
    zero = np.zeros_like(F_x_rear)
    F_x_i = np.stack([zero, zero, F_x_rear, F_x_rear], axis=-1)
    forces = np.stack([F_x_i, F_y_i, t["F_z"]], axis=-1)            # (..., 4, 3)
    moments = np.cross(np.broadcast_to(rho, forces.shape), forces).sum(axis=-2)

    ds = np.empty(np.broadcast_shapes(s.shape, np.shape(delta_rate) + (SRB_DIM,)))
    ds[..., SRB_X:SRB_Z + 1] = np.einsum("...ij,...j->...i", R, v)
    ds[..., SRB_PSI:SRB_PHI + 1] = euler_rates_321(w, s[..., SRB_THETA], s[..., SRB_PHI])
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    ds[..., SRB_VBX] = vdot_x
    ds[..., SRB_VBY] = F_y / vp.M + g_by + wx * vz - wz * vx
    ds[..., SRB_VBZ] = F_z / vp.M + g_bz - wx * vy + wy * vx
    ds[..., SRB_WBX] = (moments[..., 0] + (vp.J_yy - vp.J_zz) * wy * wz) / vp.J_xx
    ds[..., SRB_WBY] = (moments[..., 1] - (vp.J_xx - vp.J_zz) * wx * wz) / vp.J_yy
    ds[..., SRB_WBZ] = (moments[..., 2] + (vp.J_xx - vp.J_yy) * wx * wy) / vp.J_zz
    ds[..., SRB_DELTA] = delta_rate
    if return_aux:
        return ds, F_y / vp.M
    return ds


def srb_tire_outputs(s, u, terrain, vp, tp) -> TireOutputs:
    t = _srb_terms(s, u, terrain, vp, tp)
    return TireOutputs(F_z=t["F_z"], F_y=t["F_y"], slip=t["alpha"], chi=t["chi"], chi_rate=t["chi_rate"])


def static_loads(vp: VehicleParams) -> np.ndarray:
    """Nominal per-wheel spring preload (fl, fr, rl, rr); sums to M g."""
    K_zzf, K_zzr, _, _ = load_transfer_coeffs(vp)
    return 0.5 * vp.g * np.array([K_zzf, K_zzf, K_zzr, K_zzr])


def srb_rest_state(terrain, x, y, psi, v_bx, vp: VehicleParams) -> np.ndarray:
    """SRB state resting on the local terrain plane with zero mean extension."""
    n = normal_at(terrain, x, y)
    # in the yaw-aligned frame body z is (cos(phi) sin(theta), -sin(phi), cos(phi) cos(theta))
    c, s_ = math.cos(psi), math.sin(psi)
    n_fwd = c * n[0] + s_ * n[1]
    n_left = -s_ * n[0] + c * n[1]
    theta = math.atan2(n_fwd, n[2])
    phi = math.asin(max(-1.0, min(1.0, -n_left)))
    state = np.zeros(SRB_DIM)
    state[[SRB_X, SRB_Y, SRB_PSI, SRB_THETA, SRB_PHI, SRB_VBX]] = x, y, psi, theta, phi, v_bx
    R = rot_321(psi, theta, phi)
    rho_w = (R @ wheel_offsets(vp).T).T
    fx, fy = gradient_at(terrain, x + rho_w[:, 0], y + rho_w[:, 1])
    f = height_at(terrain, x + rho_w[:, 0], y + rho_w[:, 1])
    tau_bz = (R.T @ np.stack([-fx, -fy, np.ones(4)]))[2]
    inv = 1.0 / tau_bz
    state[SRB_Z] = float(np.sum((f - rho_w[:, 2]) * inv) / np.sum(inv))
    return state


def derivative(model, s, u, terrain, vp, tp, return_aux=False):
    if model == "est":
        return est_derivative(s, u, terrain, vp, tp, return_aux)
    if model == "srb":
        return srb_derivative(s, u, terrain, vp, tp, return_aux)
    state_dim(model)


# ---------------------------------------------------------------- integration

def steps_per_segment(dt_zoh: float, dt_int: float) -> int:
    ratio = dt_zoh / dt_int
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigError("integration step invalid",
                          [f"dt_int={dt_int!r} must divide the hold period dt_zoh={dt_zoh!r}"])
    return n


def _clamp_steering(s, model, vp):
    idx = EST_DELTA if model == "est" else SRB_DELTA
    np.clip(s[..., idx], -vp.delta_max, vp.delta_max, out=s[..., idx])


def integrate_numpy(model, s0, controls, terrain, vp, tp, dt_zoh, dt_int, scheme="euler",
                    return_aux=False):
    """Reference integrator; ``s0`` may carry a leading batch axis.

    ``controls`` has shape ``(n_t, 2)`` or ``(..., n_t, 2)``. Returns states
    at every integration step, shape ``(..., n_t * k + 1, dim)`` with the
    step axis second to last.
    """
    dim = state_dim(model)
    s = np.array(s0, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    if s.shape[-1] != dim:
        raise ConfigError("state invalid", [f"{model} state must have {dim} entries, got {s.shape[-1]}"])
    k = steps_per_segment(dt_zoh, dt_int)
    n_t = controls.shape[-2]
    out = np.empty(s.shape[:-1] + (n_t * k + 1, dim))
    aux = np.empty(s.shape[:-1] + (n_t * k + 1,))
    out[..., 0, :] = s
    f = lambda st, uu: derivative(model, st, uu, terrain, vp, tp, return_aux=True)  # noqa: E731
    step = 0
    for seg in range(n_t):
        u = controls[..., seg, :]
        for _ in range(k):
            d1, a = f(s, u)
            aux[..., step] = a
            if scheme == "euler":
                s = s + dt_int * d1
            elif scheme == "rk4":
                d2, _ = f(s + 0.5 * dt_int * d1, u)
                d3, _ = f(s + 0.5 * dt_int * d2, u)
                d4, _ = f(s + dt_int * d3, u)
                s = s + dt_int / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4)
            else:
                raise ConfigError("integration scheme invalid", [f"scheme={scheme!r} must be euler or rk4"])
            _clamp_steering(s, model, vp)
            step += 1
            if not np.all(np.isfinite(s)):
                raise IntegrationDiverged(step)
            out[..., step, :] = s
    aux[..., step] = f(s, controls[..., n_t - 1, :])[1]
    if return_aux:
        return out, aux
    return out


def integrate(model, s0, controls, terrain, vp, tp, dt_int=0.005, dt_zoh=0.25, scheme="euler",
              return_aux=False, backend=None):
    """Integrate one rollout under zero-order-hold controls.

    Uses the compiled kernel when available (see :mod:`tmpc.backend`).
    """
    from . import backend as _backend

    impl = _backend.get(backend)
    return impl.integrate(model, s0, controls, terrain, vp, tp, dt_zoh=dt_zoh, dt_int=dt_int,
                          scheme=scheme, return_aux=return_aux)
