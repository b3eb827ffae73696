"""Compiled inner loops: multilinear interpolation and characteristic recursions.

A sampled field is a flat C-ordered table described by per-axis sizes
``(n0, n1, n2)`` (unused axes are 1) and the coordinate of index 0 along each
axis ``(lo0, lo1, lo2)``; all axes share the spacing ``dx``.  Periodic tables
wrap; other tables are clamped to the node hull (constant extension).

Drift tables have shape (K, d, S): K == 1 for autonomous drifts, otherwise
slice j is the drift at mesh time t_j.  Component c has its own sizes and
origins in rows ``shape[c]`` / ``lo[c]`` so staggered (face) layouts work with
the same code.

The recursions sweep all starting points once per time step (point loop
innermost): consecutive steps of one characteristic depend on each other,
independent points do not.  ``prange`` runs over paths and each path's output
depends only on its own increments, so results do not depend on the number
of threads.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _lerp(a, b, t):
    # a + t(b - a) keeps constants exact; the clamp keeps the result in [a, b]
    r = a + t * (b - a)
    if a <= b:
        if r < a:
            r = a
        elif r > b:
            r = b
    else:
        if r < b:
            r = b
        elif r > a:
            r = a
    return r


@njit(cache=True, inline="always")
def _mix(a, b, t):
    return a + t * (b - a)


@njit(cache=True, inline="always")
def _locate(s, n, periodic):
    if periodic:
        if s < 0.0 or s >= n:
            s = s - n * np.floor(s / n)
        i0 = int(s)
        if i0 >= n:
            i0 = n - 1
        i1 = i0 + 1
        if i1 == n:
            i1 = 0
        return i0, i1, s - i0
    if n == 1:
        return 0, 0, 0.0
    if s <= 0.0:
        return 0, 1, 0.0
    if s >= n - 1:
        return n - 2, n - 1, 1.0
    i0 = int(s)
    return i0, i0 + 1, s - i0


@njit(cache=True, inline="always")
def _interp(tab, base, n0, n1, n2, lo0, lo1, lo2, inv_dx, periodic, d, x0, x1, x2):
    """Multilinear value of the flat table ``tab[base:base + n0*n1*n2]``."""
    a0, b0, t0 = _locate((x0 - lo0) * inv_dx, n0, periodic)
    if d == 1:
        return _lerp(tab[base + a0], tab[base + b0], t0)
    a1, b1, t1 = _locate((x1 - lo1) * inv_dx, n1, periodic)
    if d == 2:
        r0 = base + a0 * n1
        r1 = base + b0 * n1
        v0 = _lerp(tab[r0 + a1], tab[r1 + a1], t0)
        v1 = _lerp(tab[r0 + b1], tab[r1 + b1], t0)
        return _lerp(v0, v1, t1)
    a2, b2, t2 = _locate((x2 - lo2) * inv_dx, n2, periodic)
    s0 = n1 * n2
    r0 = base + a0 * s0
    r1 = base + b0 * s0
    v00 = _lerp(tab[r0 + a1 * n2 + a2], tab[r1 + a1 * n2 + a2], t0)
    v10 = _lerp(tab[r0 + b1 * n2 + a2], tab[r1 + b1 * n2 + a2], t0)
    v01 = _lerp(tab[r0 + a1 * n2 + b2], tab[r1 + a1 * n2 + b2], t0)
    v11 = _lerp(tab[r0 + b1 * n2 + b2], tab[r1 + b1 * n2 + b2], t0)
    return _lerp(_lerp(v00, v10, t1), _lerp(v01, v11, t1), t2)


@njit(cache=True, inline="always")
def _locate_w(s, n, periodic):
    # periodic coordinates already wrapped into [-L, L): s lies in [0, n]
    if periodic:
        i0 = int(s)
        if i0 >= n:
            i0 -= n
            s -= n
        i1 = i0 + 1
        if i1 == n:
            i1 = 0
        return i0, i1, s - i0
    return _locate(s, n, periodic)


@njit(cache=True, inline="always")
def _interp3(tab, base, S, n0, n1, n2, lo0, lo1, lo2, inv_dx, periodic, d, x0, x1, x2):
    """All d components of a colocated vector table (component stride S).

    Unclamped blending: drift samples do not need the range guarantee, and
    sharing the cell lookup between components halves the index work.
    """
    a0, b0, t0 = _locate_w((x0 - lo0) * inv_dx, n0, periodic)
    if d == 1:
        return _mix(tab[base + a0], tab[base + b0], t0), 0.0, 0.0
    a1, b1, t1 = _locate_w((x1 - lo1) * inv_dx, n1, periodic)
    if d == 2:
        i00 = base + a0 * n1 + a1
        i10 = base + b0 * n1 + a1
        i01 = base + a0 * n1 + b1
        i11 = base + b0 * n1 + b1
        u = _mix(_mix(tab[i00], tab[i10], t0), _mix(tab[i01], tab[i11], t0), t1)
        v = _mix(_mix(tab[i00 + S], tab[i10 + S], t0), _mix(tab[i01 + S], tab[i11 + S], t0), t1)
        return u, v, 0.0
    a2, b2, t2 = _locate_w((x2 - lo2) * inv_dx, n2, periodic)
    s0 = n1 * n2
    out0 = 0.0
    out1 = 0.0
    out2 = 0.0
    for c in range(3):
        r0 = base + c * S + a0 * s0
        r1 = base + c * S + b0 * s0
        v00 = _mix(tab[r0 + a1 * n2 + a2], tab[r1 + a1 * n2 + a2], t0)
        v10 = _mix(tab[r0 + b1 * n2 + a2], tab[r1 + b1 * n2 + a2], t0)
        v01 = _mix(tab[r0 + a1 * n2 + b2], tab[r1 + a1 * n2 + b2], t0)
        v11 = _mix(tab[r0 + b1 * n2 + b2], tab[r1 + b1 * n2 + b2], t0)
        r = _mix(_mix(v00, v10, t1), _mix(v01, v11, t1), t2)
        if c == 0:
            out0 = r
        elif c == 1:
            out1 = r
        else:
            out2 = r
    return out0, out1, out2


@njit(cache=True, inline="always")
def _reflect(y, half_width):
    while y > half_width or y < -half_width:
        if y > half_width:
            y = 2.0 * half_width - y
        else:
            y = -2.0 * half_width - y
    return y


@njit(cache=True, inline="always")
def _advance(y, laps, step, half_width, periodic, reflect):
    """Apply one displacement.

    Periodic coordinates stay in [-L, L) and ``laps`` counts windings, so the
    unwrapped position is y + 2L * laps.  A non-finite step, or one that
    would carry a point beyond 10L, fails.
    """
    if not (abs(step) <= 9.0 * half_width):
        return y, laps, False
    y = y + step
    if periodic:
        if y >= half_width:
            y -= 2.0 * half_width
            laps += 1
        elif y < -half_width:
            y += 2.0 * half_width
            laps -= 1
        return y, laps, True
    if abs(y) > 10.0 * half_width:
        return y, laps, False
    if reflect:
        y = _reflect(y, half_width)
    return y, laps, True


@njit(cache=True, inline="always")
def _start(y, half_width, periodic):
    if not periodic:
        return y, 0
    period = 2.0 * half_width
    laps = int(np.floor((y + half_width) / period))
    y = y - period * laps
    if y >= half_width:
        y -= period
        laps += 1
    elif y < -half_width:
        y += period
        laps -= 1
    return y, laps


@njit(cache=True)
def _flow_path(cflat, K, S, cshape, clo, inv_dx, periodic, incr_p, dt, k_end, sigma,
               starts, half_width, reflect, backward, dflat, Kd, Sd, dshape, dlo,
               pos, logj):
    """Run one path from every starting point; returns False on failure.

    ``pos`` (M, d) receives unwrapped end positions and ``logj`` (M,) the
    left-point sum of the divergence table (used in the forward direction).
    """
    M = starts.shape[0]
    d = starts.shape[1]
    laps = np.zeros((3, M), dtype=np.int64)
    y = np.zeros((3, M))
    for m in range(M):
        for c in range(d):
            y[c, m], laps[c, m] = _start(starts[m, c], half_width, periodic)
        logj[m] = 0.0
    c00 = cshape[0, 0]
    c01 = cshape[0, 1]
    c02 = cshape[0, 2]
    o00 = clo[0, 0]
    o01 = clo[0, 1]
    o02 = clo[0, 2]
    c10 = cshape[1 % d, 0]
    c11 = cshape[1 % d, 1]
    c12 = cshape[1 % d, 2]
    o10 = clo[1 % d, 0]
    o11 = clo[1 % d, 1]
    o12 = clo[1 % d, 2]
    c20 = cshape[2 % d, 0]
    c21 = cshape[2 % d, 1]
    c22 = cshape[2 % d, 2]
    o20 = clo[2 % d, 0]
    o21 = clo[2 % d, 1]
    o22 = clo[2 % d, 2]
    colocated = True
    for c in range(1, d):
        for a in range(3):
            if cshape[c, a] != cshape[0, a] or clo[c, a] != clo[0, a]:
                colocated = False
    ok = True
    for j in range(k_end):
        if backward:
            k = k_end - 1 - j
            kk = k + 1
            sgn = -1.0
        else:
            k = j
            kk = k
            sgn = 1.0
        if kk >= K:
            kk = K - 1
        kd = k if k < Kd else Kd - 1
        n0 = incr_p[k, 0] * sigma
        n1 = incr_p[k, 1] * sigma if d > 1 else 0.0
        n2 = incr_p[k, 2] * sigma if d > 2 else 0.0
        base = kk * d * S
        for m in range(M):
            y0 = y[0, m]
            y1 = y[1, m]
            y2 = y[2, m]
            if Sd > 0:
                logj[m] += _interp(dflat, kd * Sd, dshape[0], dshape[1], dshape[2],
                                   dlo[0], dlo[1], dlo[2], inv_dx, periodic, d,
                                   y0, y1, y2) * dt
            if colocated:
                b0, b1, b2 = _interp3(cflat, base, S, c00, c01, c02, o00, o01, o02, inv_dx,
                                      periodic, d, y0, y1, y2)
            else:
                b0 = _interp(cflat, base, c00, c01, c02, o00, o01, o02, inv_dx, periodic, d,
                             y0, y1, y2)
                b1 = 0.0
                b2 = 0.0
            if d > 1 and not colocated:
                b1 = _interp(cflat, base + S, c10, c11, c12, o10, o11, o12, inv_dx,
                             periodic, d, y0, y1, y2)
            if d > 2 and not colocated:
                b2 = _interp(cflat, base + 2 * S, c20, c21, c22, o20, o21, o22, inv_dx,
                             periodic, d, y0, y1, y2)
            y0, l, f = _advance(y0, laps[0, m], sgn * (b0 * dt + n0), half_width,
                                periodic, reflect)
            laps[0, m] = l
            ok = ok and f
            if d > 1:
                y1, l, f = _advance(y1, laps[1, m], sgn * (b1 * dt + n1), half_width,
                                    periodic, reflect)
                laps[1, m] = l
                ok = ok and f
            if d > 2:
                y2, l, f = _advance(y2, laps[2, m], sgn * (b2 * dt + n2), half_width,
                                    periodic, reflect)
                laps[2, m] = l
                ok = ok and f
            y[0, m] = y0
            y[1, m] = y1
            y[2, m] = y2
        if not ok:
            for m in range(M):
                for c in range(d):
                    pos[m, c] = np.nan
            return False
    period = 2.0 * half_width
    for m in range(M):
        for c in range(d):
            pos[m, c] = y[c, m] + period * laps[c, m]
    return ok


@njit(cache=True)
def _flow_path_p2(v0, v1, n0, n1, lo0, lo1, inv_dx, incr_p, dt, k_end, sigma, starts,
                  half_width, backward, dflat, Kd, Sd, pos, logj):
    """Specialization of ``_flow_path`` for periodic, colocated 2-d tables.

    Same arithmetic as the general path (identical results), with the cell
    lookup shared between components and no per-point dimension branches.
    """
    M = starts.shape[0]
    L = half_width
    P2 = 2.0 * L
    y0 = np.empty(M)
    y1 = np.empty(M)
    l0 = np.zeros(M, dtype=np.int64)
    l1 = np.zeros(M, dtype=np.int64)
    for m in range(M):
        y0[m], l0[m] = _start(starts[m, 0], L, True)
        y1[m], l1[m] = _start(starts[m, 1], L, True)
        logj[m] = 0.0
    lim = 9.0 * L
    sgn = -1.0 if backward else 1.0
    S = n0 * n1
    K = v0.shape[0] // S
    for j in range(k_end):
        if backward:
            k = k_end - 1 - j
            kk = k + 1
        else:
            k = j
            kk = k
        if kk >= K:
            kk = K - 1
        kd = k if k < Kd else Kd - 1
        base = kk * S
        e0 = incr_p[k, 0] * sigma
        e1 = incr_p[k, 1] * sigma
        for m in range(M):
            a0, b0, t0 = _locate_w((y0[m] - lo0) * inv_dx, n0, True)
            a1, b1, t1 = _locate_w((y1[m] - lo1) * inv_dx, n1, True)
            r0 = a0 * n1
            r1 = b0 * n1
            if Sd > 0:
                db = kd * Sd
                logj[m] += _mix(_mix(dflat[db + r0 + a1], dflat[db + r1 + a1], t0),
                                _mix(dflat[db + r0 + b1], dflat[db + r1 + b1], t0), t1) * dt
            r0 += base
            r1 += base
            u = _mix(_mix(v0[r0 + a1], v0[r1 + a1], t0), _mix(v0[r0 + b1], v0[r1 + b1], t0), t1)
            v = _mix(_mix(v1[r0 + a1], v1[r1 + a1], t0), _mix(v1[r0 + b1], v1[r1 + b1], t0), t1)
            st0 = sgn * (u * dt + e0)
            st1 = sgn * (v * dt + e1)
            if not (abs(st0) <= lim and abs(st1) <= lim):
                for q in range(M):
                    pos[q, 0] = np.nan
                    pos[q, 1] = np.nan
                return False
            z0 = y0[m] + st0
            z1 = y1[m] + st1
            if z0 >= L:
                z0 -= P2
                l0[m] += 1
            elif z0 < -L:
                z0 += P2
                l0[m] -= 1
            if z1 >= L:
                z1 -= P2
                l1[m] += 1
            elif z1 < -L:
                z1 += P2
                l1[m] -= 1
            y0[m] = z0
            y1[m] = z1
    for m in range(M):
        pos[m, 0] = y0[m] + P2 * l0[m]
        pos[m, 1] = y1[m] + P2 * l1[m]
    return True


@njit(cache=True)
def _fast2(cshape, clo, periodic, reflect, d):
    if d != 2 or not periodic or reflect:
        return False
    for a in range(3):
        if cshape[1, a] != cshape[0, a] or clo[1, a] != clo[0, a]:
            return False
    return True


@njit(parallel=True, cache=True)
def inverse_flow_batch(cvals, cshape, clo, dx, periodic, incr, dt, k_end, sigma,
                       starts, half_width, reflect):
    """Backward recursion Y_k = Y_{k+1} - b(t_{k+1}, Y_{k+1}) dt - sigma dB_k.

    Returns departure points (P, M, d), unwrapped for periodic grids, and a
    per-path failure flag.
    """
    P = incr.shape[0]
    M = starts.shape[0]
    d = starts.shape[1]
    K = cvals.shape[0]
    S = cvals.shape[2]
    cflat = np.ascontiguousarray(cvals).ravel()
    dummy = np.zeros(1)
    dshape = np.ones(3, dtype=np.int64)
    dlo = np.zeros(3)
    out = np.empty((P, M, d))
    bad = np.zeros(P, dtype=np.bool_)
    fast = _fast2(cshape, clo, periodic, reflect, d)
    v0 = np.ascontiguousarray(cvals[:, 0, :]).ravel()
    v1 = np.ascontiguousarray(cvals[:, d - 1, :]).ravel()
    for p in prange(P):
        logj = np.empty(M)
        if fast:
            ok = _flow_path_p2(v0, v1, cshape[0, 0], cshape[0, 1], clo[0, 0], clo[0, 1], 1.0 / dx,
                               incr[p], dt, k_end, sigma, starts, half_width, True, dummy, 1, 0,
                               out[p], logj)
        else:
            ok = _flow_path(cflat, K, S, cshape, clo, 1.0 / dx, periodic, incr[p], dt, k_end,
                            sigma, starts, half_width, reflect, True, dummy, 1, 0, dshape, dlo,
                            out[p], logj)
        bad[p] = not ok
    return out, bad


@njit(parallel=True, cache=True)
def forward_flow_batch(cvals, cshape, clo, dvals, dshape, dlo, dx, periodic, incr, dt,
                       k_end, sigma, starts, half_width, reflect):
    """Euler-Maruyama X_{k+1} = X_k + b(t_k, X_k) dt + sigma dB_k with log-Jacobian.

    The log-Jacobian accumulates div b(t_k, X_k) dt (left endpoint); ``dvals``
    is a (Kd, S) table of divergence samples with the same time convention.
    """
    P = incr.shape[0]
    M = starts.shape[0]
    d = starts.shape[1]
    K = cvals.shape[0]
    S = cvals.shape[2]
    cflat = np.ascontiguousarray(cvals).ravel()
    dflat = np.ascontiguousarray(dvals).ravel()
    out = np.empty((P, M, d))
    logj = np.zeros((P, M))
    bad = np.zeros(P, dtype=np.bool_)
    fast = _fast2(cshape, clo, periodic, reflect, d)
    v0 = np.ascontiguousarray(cvals[:, 0, :]).ravel()
    v1 = np.ascontiguousarray(cvals[:, d - 1, :]).ravel()
    for p in prange(P):
        if fast:
            ok = _flow_path_p2(v0, v1, cshape[0, 0], cshape[0, 1], clo[0, 0], clo[0, 1], 1.0 / dx,
                               incr[p], dt, k_end, sigma, starts, half_width, False, dflat,
                               dvals.shape[0], dvals.shape[1], out[p], logj[p])
        else:
            ok = _flow_path(cflat, K, S, cshape, clo, 1.0 / dx, periodic, incr[p], dt, k_end,
                            sigma, starts, half_width, reflect, False, dflat, dvals.shape[0],
                            dvals.shape[1], dshape, dlo, out[p], logj[p])
        bad[p] = not ok
    return out, logj, bad


@njit(parallel=True, cache=True)
def sample_batch(vals, shape, lo, dx, periodic, points):
    """Interpolate one flat scalar table at points of shape (P, M, d)."""
    P = points.shape[0]
    M = points.shape[1]
    d = points.shape[2]
    inv_dx = 1.0 / dx
    out = np.empty((P, M))
    for p in prange(P):
        for m in range(M):
            x1 = points[p, m, 1] if d > 1 else 0.0
            x2 = points[p, m, 2] if d > 2 else 0.0
            out[p, m] = _interp(vals, 0, shape[0], shape[1], shape[2], lo[0], lo[1], lo[2],
                                inv_dx, periodic, d, points[p, m, 0], x1, x2)
    return out


@njit(cache=True)
def sample_points(vals, shape, lo, dx, periodic, points):
    """Interpolate one flat scalar table at points of shape (M, d)."""
    M = points.shape[0]
    d = points.shape[1]
    inv_dx = 1.0 / dx
    out = np.empty(M)
    for m in range(M):
        x1 = points[m, 1] if d > 1 else 0.0
        x2 = points[m, 2] if d > 2 else 0.0
        out[m] = _interp(vals, 0, shape[0], shape[1], shape[2], lo[0], lo[1], lo[2],
                         inv_dx, periodic, d, points[m, 0], x1, x2)
    return out


@njit(cache=True)
def parabolic_step(V, b0, b1, b2, h0, h1, h2, dx, dt, out):
    """One explicit upwind + diffusion step on a periodic (n0, n1, n2) array.

    Unused axes have length 1 and are skipped.
    """
    n0, n1, n2 = V.shape
    inv = 1.0 / dx
    for i in range(n0):
        ip = i + 1 if i + 1 < n0 else 0
        im = i - 1 if i > 0 else n0 - 1
        for j in range(n1):
            jp = j + 1 if j + 1 < n1 else 0
            jm = j - 1 if j > 0 else n1 - 1
            for k in range(n2):
                kp = k + 1 if k + 1 < n2 else 0
                km = k - 1 if k > 0 else n2 - 1
                v = V[i, j, k]
                upd = 0.0
                if n0 > 1:
                    a = b0[i, j, k] + h0
                    back = (v - V[im, j, k]) * inv
                    fwd = (V[ip, j, k] - v) * inv
                    upd -= (a if a > 0.0 else 0.0) * back + (a if a < 0.0 else 0.0) * fwd
                    upd += 0.5 * (fwd - back) * inv
                if n1 > 1:
                    a = b1[i, j, k] + h1
                    back = (v - V[i, jm, k]) * inv
                    fwd = (V[i, jp, k] - v) * inv
                    upd -= (a if a > 0.0 else 0.0) * back + (a if a < 0.0 else 0.0) * fwd
                    upd += 0.5 * (fwd - back) * inv
                if n2 > 1:
                    a = b2[i, j, k] + h2
                    back = (v - V[i, j, km]) * inv
                    fwd = (V[i, j, kp] - v) * inv
                    upd -= (a if a > 0.0 else 0.0) * back + (a if a < 0.0 else 0.0) * fwd
                    upd += 0.5 * (fwd - back) * inv
                out[i, j, k] = v + dt * upd


@njit(cache=True)
def energy_terms(V, div, dx):
    """(sum V^2, sum |D+ V|^2, sum div V^2) on a periodic (n0, n1, n2) array."""
    n0, n1, n2 = V.shape
    inv = 1.0 / dx
    e = 0.0
    g = 0.0
    s = 0.0
    for i in range(n0):
        ip = i + 1 if i + 1 < n0 else 0
        for j in range(n1):
            jp = j + 1 if j + 1 < n1 else 0
            for k in range(n2):
                kp = k + 1 if k + 1 < n2 else 0
                v = V[i, j, k]
                e += v * v
                s += div[i, j, k] * v * v
                if n0 > 1:
                    q = (V[ip, j, k] - v) * inv
                    g += q * q
                if n1 > 1:
                    q = (V[i, jp, k] - v) * inv
                    g += q * q
                if n2 > 1:
                    q = (V[i, j, kp] - v) * inv
                    g += q * q
    return e, g, s
