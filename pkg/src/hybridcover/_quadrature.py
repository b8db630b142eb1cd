"""Numba kernels for integrals over sensing discs clipped to a rectangle.

Every integral is taken over D_i = disc(s_i, delta_i) ∩ [0, W] x [0, H] in
polar coordinates centred on agent i.  The angular range is cut at every
direction where the integrand changes analytic form (rectangle corners,
circle/edge crossings, neighbour circle crossings and tangents), and each
ray is cut radially where it enters or leaves a neighbour disc.  With a
constant reward the radial integrand is then a polynomial on every piece,
so Gauss-Legendre in r is exact and only the angular rule carries error.
"""

import math

import numpy as np
from numba import njit

# upper bound on angular breakpoints per agent: 4 corners, 8 own circle/edge
# crossings, and per neighbour 2 circle crossings + 2 tangents + 8 edge points
_BASE_BREAKS = 12
_PER_NEIGHBOUR_BREAKS = 12
_TWO_PI = 2.0 * math.pi
_MAX_SPAN = math.pi / 6.0


@njit(cache=True)
def _exit_distance(x0, y0, c, s, width, height):
    """Distance along (c, s) from (x0, y0) to the rectangle boundary."""
    d = np.inf
    if c > 1e-15:
        d = min(d, (width - x0) / c)
    elif c < -1e-15:
        d = min(d, -x0 / c)
    if s > 1e-15:
        d = min(d, (height - y0) / s)
    elif s < -1e-15:
        d = min(d, -y0 / s)
    return max(d, 0.0)


@njit(cache=True)
def _limiting_edge(x0, y0, radius, c, s, width, height):
    """Outward normal angle of the edge the ray hits inside ``radius``, else -1."""
    best = radius
    normal = -1.0
    if c > 1e-15 and (width - x0) / c < best:
        best = (width - x0) / c
        normal = 0.0
    elif c < -1e-15 and -x0 / c < best:
        best = -x0 / c
        normal = math.pi
    if s > 1e-15 and (height - y0) / s < best:
        best = (height - y0) / s
        normal = 0.5 * math.pi
    elif s < -1e-15 and -y0 / s < best:
        best = -y0 / s
        normal = 1.5 * math.pi
    return normal


@njit(cache=True)
def _reward_at(x, y, reward, width, height):
    """Bilinear lookup in a node-centred reward table; constant 1 when empty."""
    nx = reward.shape[0]
    if nx == 0:
        return 1.0
    ny = reward.shape[1]
    fx = min(max(x / width * (nx - 1), 0.0), nx - 1.000000001)
    fy = min(max(y / height * (ny - 1), 0.0), ny - 1.000000001)
    ix = int(fx)
    iy = int(fy)
    ax = fx - ix
    ay = fy - iy
    return ((1 - ax) * (1 - ay) * reward[ix, iy] + ax * (1 - ay) * reward[ix + 1, iy]
            + (1 - ax) * ay * reward[ix, iy + 1] + ax * ay * reward[ix + 1, iy + 1])


@njit(cache=True)
def _wrap(a):
    a = a % _TWO_PI
    if a >= _TWO_PI:
        a -= _TWO_PI
    return a


@njit(cache=True)
def _angular_breaks(i, pos, delta, active, width, height):
    n = pos.shape[0]
    out = np.empty(_BASE_BREAKS + _PER_NEIGHBOUR_BREAKS * n + 2)
    m = 0
    xi = pos[i, 0]
    yi = pos[i, 1]
    di = delta[i]
    # rectangle corners
    for cx in (0.0, width):
        for cy in (0.0, height):
            if (cx - xi) ** 2 + (cy - yi) ** 2 < di * di and (cx != xi or cy != yi):
                out[m] = _wrap(math.atan2(cy - yi, cx - xi))
                m += 1
    # own circle against the four edge lines
    for k in range(2):
        ex = 0.0 if k == 0 else width
        c = (ex - xi) / di
        if abs(c) <= 1.0:
            a = math.acos(c)
            out[m] = _wrap(a)
            out[m + 1] = _wrap(-a)
            m += 2
        ey = 0.0 if k == 0 else height
        s = (ey - yi) / di
        if abs(s) <= 1.0:
            a = math.asin(s)
            out[m] = _wrap(a)
            out[m + 1] = _wrap(math.pi - a)
            m += 2
    for j in range(n):
        if j == i or not active[j]:
            continue
        dx = pos[j, 0] - xi
        dy = pos[j, 1] - yi
        dij = math.sqrt(dx * dx + dy * dy)
        dj = delta[j]
        if dij >= di + dj:
            continue
        phi_c = math.atan2(dy, dx)
        if dij > 0.0:
            cg = (di * di + dij * dij - dj * dj) / (2.0 * di * dij)
            if abs(cg) <= 1.0:
                g = math.acos(cg)
                out[m] = _wrap(phi_c + g)
                out[m + 1] = _wrap(phi_c - g)
                m += 2
            if dij > dj and dij * dij - dj * dj < di * di:
                g = math.asin(dj / dij)
                out[m] = _wrap(phi_c + g)
                out[m + 1] = _wrap(phi_c - g)
                m += 2
        # neighbour circle against the edges, seen from agent i
        xj = pos[j, 0]
        yj = pos[j, 1]
        for k in range(2):
            ex = 0.0 if k == 0 else width
            h2 = dj * dj - (ex - xj) ** 2
            if h2 >= 0.0:
                h = math.sqrt(h2)
                for sg in (-1.0, 1.0):
                    ey = yj + sg * h
                    if (0.0 <= ey <= height and (ex - xi) ** 2 + (ey - yi) ** 2 < di * di
                            and (ex != xi or ey != yi)):
                        out[m] = _wrap(math.atan2(ey - yi, ex - xi))
                        m += 1
            ey = 0.0 if k == 0 else height
            h2 = dj * dj - (ey - yj) ** 2
            if h2 >= 0.0:
                h = math.sqrt(h2)
                for sg in (-1.0, 1.0):
                    ex2 = xj + sg * h
                    if (0.0 <= ex2 <= width and (ex2 - xi) ** 2 + (ey - yi) ** 2 < di * di
                            and (ex2 != xi or ey != yi)):
                        out[m] = _wrap(math.atan2(ey - yi, ex2 - xi))
                        m += 1
    out[m] = 0.0
    out[m + 1] = _TWO_PI
    m += 2
    return np.sort(out[:m])


@njit(cache=True)
def _insertion_sort(buf, count):
    for a in range(1, count):
        v = buf[a]
        b = a - 1
        while b >= 0 and buf[b] > v:
            buf[b + 1] = buf[b]
            b -= 1
        buf[b + 1] = v


@njit(cache=True)
def _split_pieces(breaks):
    """Angular pieces between breakpoints, none wider than _MAX_SPAN."""
    count = 0
    for b in range(breaks.shape[0] - 1):
        gap = breaks[b + 1] - breaks[b]
        if gap > 1e-15:
            count += int(math.ceil(gap / _MAX_SPAN))
    starts = np.empty(count)
    spans = np.empty(count)
    m = 0
    for b in range(breaks.shape[0] - 1):
        gap = breaks[b + 1] - breaks[b]
        if gap <= 1e-15:
            continue
        n_sub = int(math.ceil(gap / _MAX_SPAN))
        for q in range(n_sub):
            starts[m] = breaks[b] + q * gap / n_sub
            spans[m] = gap / n_sub
            m += 1
    return starts, spans


@njit(cache=True)
def disc_integrals(i, pos, delta, active, width, height, reward,
                   ang_t, ang_w, rad_t, rad_w, grad, hess, want_hess):
    """Integrate agent i's disc; returns its share of H.

    Fills grad[i] with (dH/dx_i, dH/dy_i) and, when ``want_hess`` is set,
    row block i of ``hess`` (shape (N, 2, N, 2)).  The own block combines
    the area term with the moving-arc term from differentiating the clipped
    domain; cross blocks are plain area integrals of the neighbour's
    sensing-function derivative.
    """
    n = pos.shape[0]
    xi = pos[i, 0]
    yi = pos[i, 1]
    di = delta[i]
    inv_d2 = 1.0 / (di * di)
    breaks = _angular_breaks(i, pos, delta, active, width, height)
    n_ang = ang_t.shape[0]
    n_rad = rad_t.shape[0]

    h_share = 0.0
    gx = 0.0
    gy = 0.0
    area_m = 0.0
    arc_xx = 0.0
    arc_xy = 0.0
    arc_yy = 0.0
    cross = np.zeros((n, 2, 2))
    pj = np.zeros(n)
    rbreaks = np.empty(2 * n + 2)

    starts, spans = _split_pieces(breaks)
    for b in range(starts.shape[0]):
        a0 = starts[b]
        span = spans[b]
        # rays of this piece that stop on an edge are parametrised by the
        # position along that edge, which keeps the integrand smooth
        amid = a0 + 0.5 * span
        normal = _limiting_edge(xi, yi, di, math.cos(amid), math.sin(amid),
                                width, height)
        if normal >= 0.0:
            xa = math.tan(a0 - normal)
            xb = math.tan(a0 + span - normal)
        for k in range(n_ang):
            # smoothstep substitution flattens sqrt-type endpoint behaviour
            t = ang_t[k]
            u = t * t * (3.0 - 2.0 * t)
            du = ang_w[k] * 6.0 * t * (1.0 - t)
            if normal >= 0.0:
                xs = xa + (xb - xa) * u
                phi = normal + math.atan(xs)
                wphi = du * (xb - xa) / (1.0 + xs * xs)
            else:
                phi = a0 + span * u
                wphi = du * span
            c = math.cos(phi)
            s = math.sin(phi)
            rexit = _exit_distance(xi, yi, c, s, width, height)
            rlim = min(di, rexit)

            if want_hess and rexit >= di:
                ax = xi + di * c
                ay = yi + di * s
                marc = 1.0
                for j in range(n):
                    if j == i or not active[j]:
                        continue
                    ddx = ax - pos[j, 0]
                    ddy = ay - pos[j, 1]
                    r2 = ddx * ddx + ddy * ddy
                    dj2 = delta[j] * delta[j]
                    if r2 < dj2:
                        marc *= r2 / dj2
                wa = 2.0 * wphi * marc * _reward_at(ax, ay, reward, width, height)
                arc_xx += wa * c * c
                arc_xy += wa * c * s
                arc_yy += wa * s * s

            if rlim <= 0.0:
                continue
            # radial cuts where the ray crosses neighbour circles
            nb = 0
            rbreaks[nb] = 0.0
            nb += 1
            for j in range(n):
                if j == i or not active[j]:
                    continue
                ox = xi - pos[j, 0]
                oy = yi - pos[j, 1]
                bb = c * ox + s * oy
                cc = ox * ox + oy * oy - delta[j] * delta[j]
                disc = bb * bb - cc
                if disc > 0.0:
                    sq = math.sqrt(disc)
                    r1 = -bb - sq
                    r2 = -bb + sq
                    if 0.0 < r1 < rlim:
                        rbreaks[nb] = r1
                        nb += 1
                    if 0.0 < r2 < rlim:
                        rbreaks[nb] = r2
                        nb += 1
            rbreaks[nb] = rlim
            nb += 1
            _insertion_sort(rbreaks, nb)
            rb = rbreaks

            for seg in range(nb - 1):
                r0 = rb[seg]
                rspan = rb[seg + 1] - r0
                if rspan <= 1e-15:
                    continue
                for m in range(n_rad):
                    r = r0 + rspan * rad_t[m]
                    w = wphi * rad_w[m] * rspan * r
                    x = xi + r * c
                    y = yi + r * s
                    if reward.shape[0] > 0:
                        w *= _reward_at(x, y, reward, width, height)
                    miss = 1.0
                    miss_before = 1.0
                    for j in range(n):
                        pj[j] = 0.0
                        if j == i or not active[j]:
                            continue
                        ddx = x - pos[j, 0]
                        ddy = y - pos[j, 1]
                        r2 = ddx * ddx + ddy * ddy
                        dj2 = delta[j] * delta[j]
                        if r2 < dj2:
                            pj[j] = 1.0 - r2 / dj2
                            miss *= r2 / dj2
                            if j < i:
                                miss_before *= r2 / dj2
                    rr = r * r * inv_d2
                    h_share += w * (1.0 - rr) * miss_before
                    ux = 2.0 * (x - xi) * inv_d2
                    uy = 2.0 * (y - yi) * inv_d2
                    gx += w * ux * miss
                    gy += w * uy * miss
                    if want_hess:
                        area_m += w * miss
                        for j in range(n):
                            if pj[j] <= 0.0:
                                continue
                            if pj[j] < 0.5:
                                mij = miss / (1.0 - pj[j])
                            else:
                                mij = 1.0
                                for k2 in range(n):
                                    if k2 != j and pj[k2] > 0.0:
                                        mij *= 1.0 - pj[k2]
                            dj2 = delta[j] * delta[j]
                            vx = 2.0 * (x - pos[j, 0]) / dj2
                            vy = 2.0 * (y - pos[j, 1]) / dj2
                            cross[j, 0, 0] -= w * ux * vx * mij
                            cross[j, 0, 1] -= w * ux * vy * mij
                            cross[j, 1, 0] -= w * uy * vx * mij
                            cross[j, 1, 1] -= w * uy * vy * mij

    grad[i, 0] = gx
    grad[i, 1] = gy
    if want_hess:
        for j in range(n):
            for a in range(2):
                for b2 in range(2):
                    hess[i, a, j, b2] = cross[j, a, b2]
        hess[i, 0, i, 0] = -2.0 * inv_d2 * area_m + arc_xx
        hess[i, 0, i, 1] = arc_xy
        hess[i, 1, i, 0] = arc_xy
        hess[i, 1, i, 1] = -2.0 * inv_d2 * area_m + arc_yy
    return h_share


@njit(cache=True)
def field(pos, delta, active, width, height, reward,
          ang_t, ang_w, rad_t, rad_w, want_hess):
    """H, its gradient (N, 2) and Hessian (N, 2, N, 2) for all agents."""
    n = pos.shape[0]
    grad = np.zeros((n, 2))
    hess = np.zeros((n, 2, n, 2))
    total = 0.0
    for i in range(n):
        if active[i]:
            total += disc_integrals(i, pos, delta, active, width, height, reward,
                                    ang_t, ang_w, rad_t, rad_w, grad, hess, want_hess)
    return total, grad, hess


@njit(cache=True)
def grid_coverage(pos, delta, active, width, height, nx, ny, reward):
    """Midpoint-rule H on a uniform nx-by-ny cell grid (independent route)."""
    hx = width / nx
    hy = height / ny
    miss = np.ones((nx, ny))
    for j in range(pos.shape[0]):
        if not active[j]:
            continue
        dj = delta[j]
        dj2 = dj * dj
        i0 = max(int((pos[j, 0] - dj) / hx), 0)
        i1 = min(int((pos[j, 0] + dj) / hx) + 1, nx)
        k0 = max(int((pos[j, 1] - dj) / hy), 0)
        k1 = min(int((pos[j, 1] + dj) / hy) + 1, ny)
        for a in range(i0, i1):
            x = (a + 0.5) * hx
            for b in range(k0, k1):
                y = (b + 0.5) * hy
                r2 = (x - pos[j, 0]) ** 2 + (y - pos[j, 1]) ** 2
                if r2 < dj2:
                    miss[a, b] *= r2 / dj2
    total = 0.0
    for a in range(nx):
        x = (a + 0.5) * hx
        for b in range(ny):
            if miss[a, b] < 1.0:
                y = (b + 0.5) * hy
                total += (1.0 - miss[a, b]) * _reward_at(x, y, reward, width, height)
    return total * hx * hy
