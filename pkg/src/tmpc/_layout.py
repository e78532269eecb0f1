"""Flat float64 layouts handed to the rollout backends.

The compiled kernel reads these arrays by position; both backends unpack
them through the names below so the two can never disagree on ordering.
"""
import numpy as np

from .constraints import esm_geometry, rollover_soft_params
from .dynamics import load_transfer_coeffs

VEHICLE_FIELDS = ("M", "J_xx", "J_yy", "J_zz", "L_f", "L_r", "e", "h", "R", "k_f", "k_r",
                  "b_f", "b_r", "delta_max", "g", "C", "mu", "K_zzf", "K_zzr", "K_zx", "K_zy")

COST_FIELDS = ("w_t", "w_c", "w_g", "x_g", "y_g", "r_g", "sigma", "eps_dist", "a_by_bar",
               "eps_roll", "enable_dist", "enable_roll", "R_bar", "phi_bar")

BREAKDOWN_FIELDS = ("time", "control", "terminal", "distance", "rollover")


def pack_vehicle(vp, tp):
    K = load_transfer_coeffs(vp)
    values = dict(M=vp.M, J_xx=vp.J_xx, J_yy=vp.J_yy, J_zz=vp.J_zz, L_f=vp.L_f, L_r=vp.L_r,
                  e=vp.e, h=vp.h, R=vp.R, k_f=vp.k_f, k_r=vp.k_r, b_f=vp.b_f, b_r=vp.b_r,
                  delta_max=vp.delta_max, g=vp.g, C=tp.C, mu=tp.mu,
                  K_zzf=K[0], K_zzr=K[1], K_zx=K[2], K_zy=K[3])
    return np.array([values[k] for k in VEHICLE_FIELDS], dtype=np.float64)


def pack_cost(model, weights, goal, cfg, vp):
    R_bar, phi_bar = esm_geometry(vp)
    values = dict(w_t=weights.w_t, w_c=weights.w_c, w_g=weights.w_g,
                  x_g=goal.x_g, y_g=goal.y_g, r_g=goal.r_g,
                  sigma=cfg.sigma, eps_dist=cfg.eps_dist, a_by_bar=cfg.a_by_bar,
                  eps_roll=rollover_soft_params(model, cfg, vp).epsilon,
                  enable_dist=float(cfg.enable_distance), enable_roll=float(cfg.enable_rollover),
                  R_bar=R_bar, phi_bar=phi_bar)
    return np.array([values[k] for k in COST_FIELDS], dtype=np.float64)


def unpack(fields, arr):
    return dict(zip(fields, (float(v) for v in arr)))
