"""Right-hand side and RK4 step of the joint state/sensitivity system.

Everything that changes continuously between events lives in one flat
vector so a single fixed-step RK4 update advances positions, state of
charge, the sensitivity matrices x', y', q', the running objective J and
its gradient together.  Applying RK4 to the augmented system yields the
exact derivative of the discrete RK4 map, so sensitivities and finite
differences of the integrator agree to round-off.

Layout for N agents::

    pos (2N) | q (N) | x' (N*N) | y' (N*N) | q' (N*N) | J (1) | dJ (N)

``par`` packs the scalars (v_max, alpha, beta, width, height, smoothing).

Coverage-mode velocity is v g / sqrt(|g|² + ε²) with ε = smoothing, a
smooth stand-in for v g/|g| that settles at a maximum of H instead of
chattering around it.  ε = 0 gives the unit-heading law.
"""

import math

import numpy as np
from numba import njit

from ._quadrature import field

COVERAGE = 1
TO_CHARGING = 2
IN_CHARGING = 3

EPS_GRAD = 1e-9


@njit(cache=True)
def state_size(n):
    return 4 * n + 3 * n * n + 1


@njit(cache=True)
def offsets(n):
    o_q = 2 * n
    o_xp = 3 * n
    o_yp = o_xp + n * n
    o_qp = o_yp + n * n
    o_j = o_qp + n * n
    return o_q, o_xp, o_yp, o_qp, o_j, o_j + 1


@njit(cache=True)
def rhs(y, n, mode, speed, heading, home, home_p, speed_p, par, delta,
        mode23_sensing, exact, want_sens, ang_t, ang_w, rad_t, rad_w, reward,
        out_heading):
    """Time derivative of the flat state.

    Writes the Mode-1 headings in effect at this state into ``out_heading``.
    """
    v_max = par[0]
    alpha = par[1]
    beta = par[2]
    width = par[3]
    height = par[4]
    eps = par[5]
    o_q, o_xp, o_yp, o_qp, o_j, o_dj = offsets(n)
    dy = np.zeros_like(y)
    pos = np.empty((n, 2))
    active = np.empty(n, dtype=np.bool_)
    any_m1 = False
    for i in range(n):
        pos[i, 0] = y[2 * i]
        pos[i, 1] = y[2 * i + 1]
        active[i] = mode[i] == COVERAGE or mode23_sensing
        if mode[i] == COVERAGE:
            any_m1 = True
    h, grad, hess = field(pos, delta, active, width, height, reward,
                          ang_t, ang_w, rad_t, rad_w, want_sens and any_m1)
    dy[o_j] = h
    for i in range(n):
        m = mode[i]
        if m == COVERAGE:
            gx = grad[i, 0]
            gy = grad[i, 1]
            norm = math.hypot(gx, gy)
            if norm >= EPS_GRAD:
                out_heading[i, 0] = gx / norm
                out_heading[i, 1] = gy / norm
            else:
                out_heading[i, 0] = heading[i, 0]
                out_heading[i, 1] = heading[i, 1]
            if eps > 0.0:
                den = math.sqrt(norm * norm + eps * eps)
                vx = v_max * gx / den
                vy = v_max * gy / den
            else:
                den = norm
                vx = v_max * out_heading[i, 0]
                vy = v_max * out_heading[i, 1]
            slide_x = (pos[i, 0] <= 0.0 and vx < 0.0) or (pos[i, 0] >= width and vx > 0.0)
            slide_y = (pos[i, 1] <= 0.0 and vy < 0.0) or (pos[i, 1] >= height and vy > 0.0)
            if slide_x:
                vx = 0.0
            if slide_y:
                vy = 0.0
            dy[2 * i] = vx
            dy[2 * i + 1] = vy
            dy[o_q + i] = -alpha * v_max * v_max
            if want_sens and den >= EPS_GRAD:
                # d(velocity)/ds_j = v (I/den - g g^T/den^3) Hess_ij; for eps = 0
                # this is v (I - u u^T) Hess_ij / |g|
                d3 = den * den * den
                p00 = 1.0 / den - gx * gx / d3
                p01 = -gx * gy / d3
                p11 = 1.0 / den - gy * gy / d3
                for j in range(n):
                    h00 = hess[i, 0, j, 0]
                    h01 = hess[i, 0, j, 1]
                    h10 = hess[i, 1, j, 0]
                    h11 = hess[i, 1, j, 1]
                    if h00 == 0.0 and h01 == 0.0 and h10 == 0.0 and h11 == 0.0:
                        continue
                    a00 = v_max * (p00 * h00 + p01 * h10)
                    a01 = v_max * (p00 * h01 + p01 * h11)
                    a10 = v_max * (p01 * h00 + p11 * h10)
                    a11 = v_max * (p01 * h01 + p11 * h11)
                    for k in range(n):
                        xj = y[o_xp + j * n + k]
                        yj = y[o_yp + j * n + k]
                        if not slide_x:
                            dy[o_xp + i * n + k] += a00 * xj + a01 * yj
                        if not slide_y:
                            dy[o_yp + i * n + k] += a10 * xj + a11 * yj
        elif m == TO_CHARGING:
            v = speed[i]
            dy[2 * i] = -v * home[i, 0]
            dy[2 * i + 1] = -v * home[i, 1]
            dy[o_q + i] = -alpha * v * v
            if want_sens and exact:
                for k in range(n):
                    vp = speed_p[i, k]
                    dy[o_xp + i * n + k] = -(vp * home[i, 0] + v * home_p[i, 0, k])
                    dy[o_yp + i * n + k] = -(vp * home[i, 1] + v * home_p[i, 1, k])
                    dy[o_qp + i * n + k] = -2.0 * alpha * v * vp
        else:
            dy[o_q + i] = beta
    if want_sens:
        for i in range(n):
            gx = grad[i, 0]
            gy = grad[i, 1]
            if gx == 0.0 and gy == 0.0:
                continue
            for k in range(n):
                dy[o_dj + k] += gx * y[o_xp + i * n + k] + gy * y[o_yp + i * n + k]
    return dy


@njit(cache=True)
def rk4_step(y, h, n, mode, speed, heading, home, home_p, speed_p, par, delta,
             mode23_sensing, exact, want_sens, ang_t, ang_w, rad_t, rad_w, reward):
    """One classical RK4 step of length h.

    ``heading`` is updated in place to the Mode-1 headings at the start of
    the step, which become the fallback for later zero-gradient states.
    """
    start_heading = heading.copy()
    scratch = heading.copy()
    k1 = rhs(y, n, mode, speed, start_heading, home, home_p, speed_p, par, delta,
             mode23_sensing, exact, want_sens, ang_t, ang_w, rad_t, rad_w, reward,
             heading)
    # later stages fall back to the heading in force at the start of the step
    for i in range(n):
        start_heading[i, 0] = heading[i, 0]
        start_heading[i, 1] = heading[i, 1]
    k2 = rhs(y + 0.5 * h * k1, n, mode, speed, start_heading, home, home_p, speed_p,
             par, delta, mode23_sensing, exact, want_sens, ang_t, ang_w, rad_t,
             rad_w, reward, scratch)
    k3 = rhs(y + 0.5 * h * k2, n, mode, speed, start_heading, home, home_p, speed_p,
             par, delta, mode23_sensing, exact, want_sens, ang_t, ang_w, rad_t,
             rad_w, reward, scratch)
    k4 = rhs(y + h * k3, n, mode, speed, start_heading, home, home_p, speed_p,
             par, delta, mode23_sensing, exact, want_sens, ang_t, ang_w, rad_t,
             rad_w, reward, scratch)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def field_at(y, n, mode, delta, par, mode23_sensing, ang_t, ang_w, rad_t, rad_w,
             reward, want_hess):
    """H, gradient and Hessian blocks at the positions stored in ``y``."""
    pos = np.empty((n, 2))
    active = np.empty(n, dtype=np.bool_)
    for i in range(n):
        pos[i, 0] = y[2 * i]
        pos[i, 1] = y[2 * i + 1]
        active[i] = mode[i] == COVERAGE or mode23_sensing
    return field(pos, delta, active, par[3], par[4], reward, ang_t, ang_w,
                 rad_t, rad_w, want_hess)
