# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout kernels.

Mirrors tmpc.dynamics / tmpc._fallback exactly; the positional layouts of
the vehicle and cost vectors are checked against tmpc._layout at import.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport sin, cos, atan, atan2, sqrt, floor, fabs, isfinite, INFINITY, NAN, M_PI

from tmpc._layout import VEHICLE_FIELDS, COST_FIELDS

_VEHICLE_ORDER = ("M", "J_xx", "J_yy", "J_zz", "L_f", "L_r", "e", "h", "R", "k_f", "k_r",
                  "b_f", "b_r", "delta_max", "g", "C", "mu", "K_zzf", "K_zzr", "K_zx", "K_zy")
_COST_ORDER = ("w_t", "w_c", "w_g", "x_g", "y_g", "r_g", "sigma", "eps_dist", "a_by_bar",
               "eps_roll", "enable_dist", "enable_roll", "R_bar", "phi_bar")
if tuple(VEHICLE_FIELDS) != _VEHICLE_ORDER or tuple(COST_FIELDS) != _COST_ORDER:
    raise ImportError("tmpc._kernels is stale relative to tmpc._layout; rebuild the extension")

DEF EST = 0
DEF SRB = 1
DEF MAXDIM = 13
DEF V_FLOOR = 0.1
DEF GIMBAL_MARGIN = 1e-3

name = "cython"


cdef struct Grid:
    const double* data
    int nx
    int ny
    double ox
    double oy
    double res


cdef struct Veh:
    double M, Jxx, Jyy, Jzz, Lf, Lr, e, h, R, kf, kr, bf, br, dmax, g, C, mu
    double Kzzf, Kzzr, Kzx, Kzy


cdef struct Cost:
    double wt, wc, wg, xg, yg, rg, sigma, eps_dist, abar, eps_roll
    int use_dist, use_roll
    double Rbar, phibar


cdef inline double bilinear(const Grid* g, double x, double y) noexcept nogil:
    cdef double gx = (x - g.ox) / g.res
    cdef double gy = (y - g.oy) / g.res
    if gx < 0.0:
        gx = 0.0
    elif gx > g.nx - 1:
        gx = g.nx - 1
    if gy < 0.0:
        gy = 0.0
    elif gy > g.ny - 1:
        gy = g.ny - 1
    cdef int i0 = <int>floor(gx)
    cdef int j0 = <int>floor(gy)
    if i0 > g.nx - 2:
        i0 = g.nx - 2
    if j0 > g.ny - 2:
        j0 = g.ny - 2
    cdef double tx = gx - i0
    cdef double ty = gy - j0
    cdef const double* r0 = g.data + j0 * g.nx + i0
    cdef const double* r1 = r0 + g.nx
    return (r0[0] * (1.0 - tx) + r0[1] * tx) * (1.0 - ty) + (r1[0] * (1.0 - tx) + r1[1] * tx) * ty


cdef inline void slope(const Grid* g, double x, double y, double* fx, double* fy) noexcept nogil:
    cdef double r = g.res
    fx[0] = (bilinear(g, x + r, y) - bilinear(g, x - r, y)) / (2.0 * r)
    fy[0] = (bilinear(g, x, y + r) - bilinear(g, x, y - r)) / (2.0 * r)


cdef inline double tire(double alpha, double Fz, const Veh* p) noexcept nogil:
    cdef double ca = p.C * alpha
    return Fz * (-ca * p.mu) / sqrt(p.mu * p.mu + ca * ca)


cdef int est_deriv(const double* s, double ddelta, double dvx, const Grid* t, const Veh* p,
                   double* ds, double* aux) noexcept nogil:
    cdef double x = s[0], y = s[1], psi = s[2], vby = s[3], w = s[4], delta = s[5], vbx = s[6]
    cdef double fx, fy
    slope(t, x, y, &fx, &fy)
    cdef double inv = 1.0 / sqrt(1.0 + fx * fx + fy * fy)
    cdef double nx_ = -fx * inv, ny_ = -fy * inv, nz_ = inv
    # local-plane attitude, 1-2-3: body z = (st, -ct sf, cf ct)
    cdef double st = nx_
    cdef double ct = sqrt(ny_ * ny_ + nz_ * nz_)
    cdef double sf = -ny_ / ct, cf = nz_ / ct
    cdef double sp = sin(psi), cp = cos(psi)
    cdef double R00 = ct * cp, R01 = -ct * sp
    cdef double R10 = cf * sp + cp * sf * st, R11 = cf * cp - sf * st * sp
    cdef double R20 = sf * sp - cf * cp * st, R21 = cp * sf + cf * st * sp, R22 = cf * ct
    cdef double gby = -p.g * R21, gbz = -p.g * R22
    cdef double abx = dvx - w * vby
    cdef double vx = vbx if vbx > V_FLOOR else V_FLOOR
    cdef double af = atan((vby + w * p.Lf) / vx) - delta
    cdef double ar = atan((vby - w * p.Lr) / vx)
    cdef double Fzf = -p.Kzzf * gbz - p.Kzx * abx
    cdef double Fzr = -p.Kzzr * gbz + p.Kzx * abx
    if Fzf < 0.0:
        Fzf = 0.0
    if Fzr < 0.0:
        Fzr = 0.0
    cdef double Fyf = tire(af, Fzf, p), Fyr = tire(ar, Fzr, p)
    ds[0] = R00 * vbx + R01 * vby
    ds[1] = R10 * vbx + R11 * vby
    ds[2] = w
    ds[3] = (Fyf + Fyr) / p.M + gby - w * vbx
    ds[4] = (Fyf * p.Lf * cos(delta) - Fyr * p.Lr) / p.Jzz
    ds[5] = ddelta
    ds[6] = dvx
    aux[0] = (Fyf + Fyr) / p.M
    return 0


cdef int srb_deriv(const double* s, double ddelta, double dvx, const Grid* t, const Veh* p,
                   double* ds, double* aux) noexcept nogil:
    cdef double x = s[0], y = s[1], z = s[2], psi = s[3], theta = s[4], phi = s[5]
    cdef double vx = s[6], vy = s[7], vz = s[8], wx = s[9], wy = s[10], wz = s[11], delta = s[12]
    if not fabs(theta) < M_PI / 2 - GIMBAL_MARGIN:
        return 1
    cdef double cf = cos(phi), sf = sin(phi), ct = cos(theta), st = sin(theta)
    cdef double cp = cos(psi), sp = sin(psi)
    cdef double R00 = cp * ct, R01 = cp * sf * st - cf * sp, R02 = sf * sp + cf * cp * st
    cdef double R10 = ct * sp, R11 = cf * cp + sf * sp * st, R12 = cf * sp * st - cp * sf
    cdef double R20 = -st, R21 = ct * sf, R22 = cf * ct
    cdef double gbx = -p.g * R20, gby = -p.g * R21, gbz = -p.g * R22
    cdef double Fxr = 0.5 * p.M * (dvx - gbx + wy * vz - wz * vy)
    cdef double hz = -(p.h + p.R)
    cdef double sumFy = 0.0, sumFz = 0.0, Mx = 0.0, My = 0.0, Mz = 0.0
    cdef double cdel = cos(delta)
    cdef double rx, ry, Fs, k, b, steer, csteer, Fx
    cdef double Px, Py, Pz, vix, viy, viz, f, fx, fy, tbx, tby, tbz, chi, chid, Fk, Fb, Fz, Fy, vxf
    cdef int i
    for i in range(4):
        if i < 2:
            rx = p.Lf
            Fs = 0.5 * p.g * p.Kzzf
            k = p.kf
            b = p.bf
            steer = delta
            csteer = cdel
            Fx = 0.0
        else:
            rx = -p.Lr
            Fs = 0.5 * p.g * p.Kzzr
            k = p.kr
            b = p.br
            steer = 0.0
            csteer = 1.0
            Fx = Fxr
        ry = 0.5 * p.e if i % 2 == 0 else -0.5 * p.e
        Px = x + R00 * rx + R01 * ry + R02 * hz
        Py = y + R10 * rx + R11 * ry + R12 * hz
        Pz = z + R20 * rx + R21 * ry + R22 * hz
        vix = vx + wy * hz - wz * ry
        viy = vy + wz * rx - wx * hz
        viz = vz + wx * ry - wy * rx
        f = bilinear(t, Px, Py)
        slope(t, Px, Py, &fx, &fy)
        # tau_B = R^T (-fx, -fy, 1)
        tbx = -R00 * fx - R10 * fy + R20
        tby = -R01 * fx - R11 * fy + R21
        tbz = -R02 * fx - R12 * fy + R22
        chi = (Pz - f) / tbz
        chid = (tbx * (vix - chi * wy) + tby * (viy + chi * wx) + tbz * viz) / tbz
        Fk = Fs - k * chi
        if Fk > 0.0:
            Fb = -b * chid
            if Fb < -Fk:
                Fb = -Fk
        else:
            Fk = 0.0
            Fb = 0.0
        Fz = Fk + Fb
        vxf = vix if vix > V_FLOOR else V_FLOOR
        Fy = tire(atan(viy / vxf) - steer, Fz, p) * csteer
        sumFy += Fy
        sumFz += Fz
        Mx += ry * Fz - hz * Fy
        My += hz * Fx - rx * Fz
        Mz += rx * Fy - ry * Fx
    ds[0] = R00 * vx + R01 * vy + R02 * vz
    ds[1] = R10 * vx + R11 * vy + R12 * vz
    ds[2] = R20 * vx + R21 * vy + R22 * vz
    ds[3] = (sf * wy + cf * wz) / ct
    ds[4] = cf * wy - sf * wz
    ds[5] = wx + (sf * st * wy + cf * st * wz) / ct
    ds[6] = dvx
    ds[7] = sumFy / p.M + gby + wx * vz - wz * vx
    ds[8] = sumFz / p.M + gbz - wx * vy + wy * vx
    ds[9] = (Mx + (p.Jyy - p.Jzz) * wy * wz) / p.Jxx
    ds[10] = (My - (p.Jxx - p.Jzz) * wx * wz) / p.Jyy
    ds[11] = (Mz + (p.Jxx - p.Jyy) * wx * wy) / p.Jzz
    ds[12] = ddelta
    aux[0] = sumFy / p.M
    return 0


cdef inline int deriv(int model, const double* s, double ddelta, double dvx, const Grid* t,
                      const Veh* p, double* ds, double* aux) noexcept nogil:
    if model == EST:
        return est_deriv(s, ddelta, dvx, t, p, ds, aux)
    return srb_deriv(s, ddelta, dvx, t, p, ds, aux)


cdef inline double soft(double pi, double eps, double sigma) noexcept nogil:
    cdef double a = 1.0 + pi / eps
    if a <= 0.0:
        return 0.0
    return sigma * a * a


cdef double rollout_one(int model, int dim, const double* x0, const double* ctrl, int n_t, int k,
                        double dt, const Grid* t, const Grid* sd, const Veh* p, const Cost* c,
                        double* parts, double* goal_time) noexcept nogil:
    cdef double s[MAXDIM]
    cdef double ds[MAXDIM]
    cdef double aux = 0.0
    cdef int i, seg, sub, w, step = 0
    cdef int ipsi = 2 if model == EST else 3
    cdef int idelta = 5 if model == EST else 12
    cdef double ddelta, dvx, dgx, dgy, rt = 0.0, rc = 0.0, rd = 0.0, rr = 0.0
    cdef double cps, sps, wxp, wyp, rxw, ryw, pi, dh, phi, U
    cdef bint done = False
    for i in range(dim):
        s[i] = x0[i]
    goal_time[0] = NAN
    for seg in range(n_t):
        ddelta = ctrl[2 * seg]
        dvx = ctrl[2 * seg + 1]
        for sub in range(k):
            dgx = s[0] - c.xg
            dgy = s[1] - c.yg
            if sqrt(dgx * dgx + dgy * dgy) <= c.rg:
                goal_time[0] = step * dt
                done = True
                break
            if deriv(model, s, ddelta, dvx, t, p, ds, &aux) != 0:
                parts[0] = INFINITY
                return INFINITY
            rt += c.wt * dt
            rc += c.wc * ddelta * ddelta * dt
            if c.use_dist:
                cps = cos(s[ipsi])
                sps = sin(s[ipsi])
                for w in range(4):
                    rxw = p.Lf if w < 2 else -p.Lr
                    ryw = 0.5 * p.e if w % 2 == 0 else -0.5 * p.e
                    wxp = s[0] + cps * rxw - sps * ryw
                    wyp = s[1] + sps * rxw + cps * ryw
                    rd += soft(-bilinear(sd, wxp, wyp), c.eps_dist, c.sigma) * dt
            if c.use_roll:
                if model == EST:
                    pi = fabs(aux) - c.abar
                else:
                    phi = fabs(s[5])
                    dh = c.Rbar * (1.0 - sin(phi + c.phibar)) * cos(s[4])
                    U = p.M * p.g * dh
                    if phi + c.phibar > M_PI / 2:
                        U = -U
                    pi = -U
                rr += soft(pi, c.eps_roll, c.sigma) * dt
            for i in range(dim):
                s[i] += dt * ds[i]
                if not isfinite(s[i]):
                    parts[0] = INFINITY
                    return INFINITY
            if s[idelta] > p.dmax:
                s[idelta] = p.dmax
            elif s[idelta] < -p.dmax:
                s[idelta] = -p.dmax
            step += 1
        if done:
            break
    dgx = s[0] - c.xg
    dgy = s[1] - c.yg
    cdef double dist = sqrt(dgx * dgx + dgy * dgy)
    if not done and dist <= c.rg:
        goal_time[0] = step * dt
    parts[0] = rt
    parts[1] = rc
    parts[2] = c.wg * dist
    parts[3] = rd
    parts[4] = rr
    return rt + rc + parts[2] + rd + rr


cdef Grid make_grid(const double[:, ::1] data, double ox, double oy, double res):
    cdef Grid g
    g.data = &data[0, 0]
    g.ny = data.shape[0]
    g.nx = data.shape[1]
    g.ox = ox
    g.oy = oy
    g.res = res
    return g


cdef Veh make_veh(const double[::1] v):
    cdef Veh p
    p.M, p.Jxx, p.Jyy, p.Jzz, p.Lf, p.Lr, p.e, p.h, p.R = v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]
    p.kf, p.kr, p.bf, p.br, p.dmax, p.g, p.C, p.mu = v[9], v[10], v[11], v[12], v[13], v[14], v[15], v[16]
    p.Kzzf, p.Kzzr, p.Kzx, p.Kzy = v[17], v[18], v[19], v[20]
    return p


cdef Cost make_cost(const double[::1] v, bint has_sd):
    cdef Cost c
    c.wt, c.wc, c.wg, c.xg, c.yg, c.rg, c.sigma = v[0], v[1], v[2], v[3], v[4], v[5], v[6]
    c.eps_dist, c.abar, c.eps_roll = v[7], v[8], v[9]
    c.use_dist = 1 if (v[10] > 0 and has_sd) else 0
    c.use_roll = 1 if v[11] > 0 else 0
    c.Rbar, c.phibar = v[12], v[13]
    return c


def _model_code(model):
    if model == "est":
        return EST, 7
    if model == "srb":
        return SRB, 13
    raise ValueError(f"unknown model {model!r}")


def rollout_costs_raw(str model, const double[::1] x0, const double[:, :, ::1] controls,
                      const double[:, ::1] heights, double ox, double oy, double res,
                      const double[:, ::1] sdist, double sox, double soy, double sres, bint has_sd,
                      const double[::1] veh, const double[::1] cost, int k, double dt, int workers):
    """Costs (N,), breakdown (N, 5) and goal times (N,) for N control sequences."""
    cdef int code, dim
    code, dim = _model_code(model)
    if x0.shape[0] != dim:
        raise ValueError(f"{model} state must have {dim} entries")
    cdef Py_ssize_t n = controls.shape[0]
    cdef int n_t = controls.shape[1]
    cdef Grid tg = make_grid(heights, ox, oy, res)
    cdef Grid sg = make_grid(sdist, sox, soy, sres)
    cdef Veh p = make_veh(veh)
    cdef Cost c = make_cost(cost, has_sd)
    out = np.empty(n, dtype=np.float64)
    parts = np.zeros((n, 5), dtype=np.float64)
    goal = np.empty(n, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef double[:, ::1] parts_v = parts
    cdef double[::1] goal_v = goal
    cdef Py_ssize_t i
    if workers < 1:
        workers = 1
    for i in prange(n, nogil=True, num_threads=workers, schedule="dynamic", chunksize=8):
        out_v[i] = rollout_one(code, dim, &x0[0], &controls[i, 0, 0], n_t, k, dt, &tg, &sg, &p, &c,
                               &parts_v[i, 0], &goal_v[i])
    inf_rows = ~np.isfinite(out)
    parts[inf_rows] = np.inf
    return out, parts, goal


def integrate_raw(str model, const double[::1] x0, const double[:, ::1] controls,
                  const double[:, ::1] heights, double ox, double oy, double res,
                  const double[::1] veh, int k, double dt, int rk4):
    """States (n_t*k + 1, dim) and lateral specific force per state.

    Returns (states, aux, status, step): status 0 ok, 1 domain error
    (gimbal lock), 2 non-finite state; ``step`` is the failing step index.
    """
    cdef int code, dim
    code, dim = _model_code(model)
    if x0.shape[0] != dim:
        raise ValueError(f"{model} state must have {dim} entries")
    cdef int n_t = controls.shape[0]
    cdef int n_steps = n_t * k
    cdef Grid tg = make_grid(heights, ox, oy, res)
    cdef Veh p = make_veh(veh)
    states = np.empty((n_steps + 1, dim), dtype=np.float64)
    auxs = np.empty(n_steps + 1, dtype=np.float64)
    cdef double[:, ::1] sv = states
    cdef double[::1] av = auxs
    cdef double s[MAXDIM]
    cdef double tmp[MAXDIM]
    cdef double k1[MAXDIM]
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double aux, dummy, dd, dv
    cdef int i, seg, sub, step = 0, status = 0
    cdef int idelta = 5 if code == EST else 12
    for i in range(dim):
        s[i] = x0[i]
        sv[0, i] = s[i]
    with nogil:
        for seg in range(n_t):
            dd = controls[seg, 0]
            dv = controls[seg, 1]
            for sub in range(k):
                if deriv(code, s, dd, dv, &tg, &p, k1, &aux) != 0:
                    status = 1
                    break
                av[step] = aux
                if rk4:
                    for i in range(dim):
                        tmp[i] = s[i] + 0.5 * dt * k1[i]
                    if deriv(code, tmp, dd, dv, &tg, &p, k2, &dummy) != 0:
                        status = 1
                        break
                    for i in range(dim):
                        tmp[i] = s[i] + 0.5 * dt * k2[i]
                    if deriv(code, tmp, dd, dv, &tg, &p, k3, &dummy) != 0:
                        status = 1
                        break
                    for i in range(dim):
                        tmp[i] = s[i] + dt * k3[i]
                    if deriv(code, tmp, dd, dv, &tg, &p, k4, &dummy) != 0:
                        status = 1
                        break
                    for i in range(dim):
                        s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                else:
                    for i in range(dim):
                        s[i] += dt * k1[i]
                if s[idelta] > p.dmax:
                    s[idelta] = p.dmax
                elif s[idelta] < -p.dmax:
                    s[idelta] = -p.dmax
                step += 1
                for i in range(dim):
                    sv[step, i] = s[i]
                    if not isfinite(s[i]):
                        status = 2
                if status:
                    break
            if status:
                break
        if status == 0:
            if deriv(code, s, controls[n_t - 1, 0], controls[n_t - 1, 1], &tg, &p, k1, &aux) != 0:
                av[step] = NAN
            else:
                av[step] = aux
    return states, auxs, status, step


def derivative_raw(str model, const double[::1] s, double ddelta, double dvx,
                   const double[:, ::1] heights, double ox, double oy, double res,
                   const double[::1] veh):
    cdef int code, dim
    code, dim = _model_code(model)
    cdef Grid tg = make_grid(heights, ox, oy, res)
    cdef Veh p = make_veh(veh)
    ds = np.empty(dim, dtype=np.float64)
    cdef double[::1] dv = ds
    cdef double aux = 0.0
    if deriv(code, &s[0], ddelta, dvx, &tg, &p, &dv[0], &aux) != 0:
        raise ArithmeticError("state too close to gimbal lock")
    return ds, aux
