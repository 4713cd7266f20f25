"""Numba pair loops for the interacting-particle steppers and gradient assembly.

All O(N^2) accumulations use a fixed partition of particle rows into CHUNKS
contiguous blocks with per-block private accumulators merged in block order,
so results are bitwise reproducible regardless of thread count or scheduling.
Pair terms are evaluated once per unordered pair and applied with opposite
signs (the kernels are odd, their Jacobians even), halving the work.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

CHUNKS = 16

KIND_EXP_POLY = 1   # w(r) = r exp(-|r|/2) P(|r|)         (1D)
KIND_GAUSS_SUM = 2  # w(r) = r sum_m k_m exp(-|r|^2/(2 t_m^2))


def chunk_bounds(n: int, c: int = CHUNKS):
    """Row partition balancing the triangular pair count sum_i (n-1-i)."""
    starts = np.zeros(c, dtype=np.int64)
    ends = np.zeros(c, dtype=np.int64)
    total = n * (n - 1) / 2.0
    row = 0
    acc = 0.0
    for b in range(c):
        starts[b] = row
        want = (b + 1) * total / c
        while row < n and acc < want:
            acc += n - 1 - row
            row += 1
        ends[b] = row
    ends[c - 1] = n
    return starts, ends


@njit(cache=True, inline="always")
def _poly(coef, x):
    p = 0.0
    for m in range(coef.shape[0] - 1, -1, -1):
        p = p * x + coef[m]
    return p


@njit(cache=True, inline="always")
def _w1(d, kind, params, poly):
    if kind == KIND_EXP_POLY:
        a = abs(d)
        return d * math.exp(-0.5 * a) * _poly(poly, a)
    s = 0.0
    q = d * d
    for m in range(params.shape[0] // 2):
        amp = params[2 * m]
        th = params[2 * m + 1]
        s += amp * math.exp(-q / (2.0 * th * th))
    return d * s


@njit(cache=True, inline="always")
def _dw1(d, kind, params, poly):
    # w'(r), even in r
    if kind == KIND_EXP_POLY:
        a = abs(d)
        e = math.exp(-0.5 * a)
        p = _poly(poly, a)
        dp = 0.0
        for m in range(poly.shape[0] - 1, 0, -1):
            dp = dp * a + m * poly[m]
        return e * (p * (1.0 - 0.5 * a) + a * dp)
    s = 0.0
    sq = 0.0
    q = d * d
    for m in range(params.shape[0] // 2):
        amp = params[2 * m]
        th = params[2 * m + 1]
        e = amp * math.exp(-q / (2.0 * th * th))
        s += e
        sq += -e / (2.0 * th * th)
    return s + 2.0 * sq * q


# ---------------------------------------------------------------------------
# forward / adjoint steppers
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def forward_1d(x0, n_steps, dt, kind, params, poly, cs, ce):
    n = x0.shape[0]
    nc = cs.shape[0]
    states = np.empty((n_steps + 1, n))
    states[0] = x0
    buf = np.empty((nc, n))
    for k in range(n_steps):
        xk = states[k]
        for c in prange(nc):
            for i in range(n):
                buf[c, i] = 0.0
            for i in range(cs[c], ce[c]):
                xi = xk[i]
                for j in range(i + 1, n):
                    f = _w1(xi - xk[j], kind, params, poly)
                    buf[c, i] += f
                    buf[c, j] -= f
        bad = False
        for i in range(n):
            acc = 0.0
            for c in range(nc):
                acc += buf[c, i]
            xn = xk[i] + dt * acc / n
            states[k + 1, i] = xn
            if not np.isfinite(xn):
                bad = True
        if bad:
            return states, k + 1
    return states, -1


@njit(cache=True, parallel=True)
def forward_2d(x0, n_steps, dt, kind, params, poly, cs, ce):
    n = x0.shape[0]
    nc = cs.shape[0]
    states = np.empty((n_steps + 1, n, 2))
    states[0] = x0
    buf = np.empty((nc, n, 2))
    for k in range(n_steps):
        xk = states[k]
        for c in prange(nc):
            for i in range(n):
                buf[c, i, 0] = 0.0
                buf[c, i, 1] = 0.0
            for i in range(cs[c], ce[c]):
                xi0 = xk[i, 0]
                xi1 = xk[i, 1]
                for j in range(i + 1, n):
                    d0 = xi0 - xk[j, 0]
                    d1 = xi1 - xk[j, 1]
                    q = d0 * d0 + d1 * d1
                    s = 0.0
                    for m in range(params.shape[0] // 2):
                        amp = params[2 * m]
                        th = params[2 * m + 1]
                        s += amp * math.exp(-q / (2.0 * th * th))
                    f0 = d0 * s
                    f1 = d1 * s
                    buf[c, i, 0] += f0
                    buf[c, i, 1] += f1
                    buf[c, j, 0] -= f0
                    buf[c, j, 1] -= f1
        bad = False
        for i in range(n):
            a0 = 0.0
            a1 = 0.0
            for c in range(nc):
                a0 += buf[c, i, 0]
                a1 += buf[c, i, 1]
            xn0 = xk[i, 0] + dt * a0 / n
            xn1 = xk[i, 1] + dt * a1 / n
            states[k + 1, i, 0] = xn0
            states[k + 1, i, 1] = xn1
            if not (np.isfinite(xn0) and np.isfinite(xn1)):
                bad = True
        if bad:
            return states, k + 1
    return states, -1


@njit(cache=True, parallel=True)
def adjoint_1d(states, y_term, dt, kind, params, poly, cs, ce):
    n_steps = states.shape[0] - 1
    n = states.shape[1]
    nc = cs.shape[0]
    ys = np.empty((n_steps + 1, n))
    ys[n_steps] = y_term
    buf = np.empty((nc, n))
    for k in range(n_steps - 1, -1, -1):
        xk = states[k]
        yk1 = ys[k + 1]
        for c in prange(nc):
            for i in range(n):
                buf[c, i] = 0.0
            for i in range(cs[c], ce[c]):
                xi = xk[i]
                yi = yk1[i]
                for j in range(i + 1, n):
                    v = _dw1(xi - xk[j], kind, params, poly) * (yi - yk1[j])
                    buf[c, i] += v
                    buf[c, j] -= v
        for i in range(n):
            acc = 0.0
            for c in range(nc):
                acc += buf[c, i]
            ys[k, i] = yk1[i] + dt * acc / n
    return ys


@njit(cache=True, parallel=True)
def adjoint_2d(states, y_term, dt, kind, params, poly, cs, ce):
    n_steps = states.shape[0] - 1
    n = states.shape[1]
    nc = cs.shape[0]
    ys = np.empty((n_steps + 1, n, 2))
    ys[n_steps] = y_term
    buf = np.empty((nc, n, 2))
    for k in range(n_steps - 1, -1, -1):
        xk = states[k]
        yk1 = ys[k + 1]
        for c in prange(nc):
            for i in range(n):
                buf[c, i, 0] = 0.0
                buf[c, i, 1] = 0.0
            for i in range(cs[c], ce[c]):
                xi0 = xk[i, 0]
                xi1 = xk[i, 1]
                yi0 = yk1[i, 0]
                yi1 = yk1[i, 1]
                for j in range(i + 1, n):
                    d0 = xi0 - xk[j, 0]
                    d1 = xi1 - xk[j, 1]
                    q = d0 * d0 + d1 * d1
                    s = 0.0
                    sq = 0.0
                    for m in range(params.shape[0] // 2):
                        amp = params[2 * m]
                        th = params[2 * m + 1]
                        e = amp * math.exp(-q / (2.0 * th * th))
                        s += e
                        sq += -e / (2.0 * th * th)
                    dy0 = yi0 - yk1[j, 0]
                    dy1 = yi1 - yk1[j, 1]
                    # J(d) dy with J = s I + 2 s_q d d^T (symmetric, even in d)
                    dot = d0 * dy0 + d1 * dy1
                    v0 = s * dy0 + 2.0 * sq * dot * d0
                    v1 = s * dy1 + 2.0 * sq * dot * d1
                    buf[c, i, 0] += v0
                    buf[c, i, 1] += v1
                    buf[c, j, 0] -= v0
                    buf[c, j, 1] -= v1
        for i in range(n):
            a0 = 0.0
            a1 = 0.0
            for c in range(nc):
                a0 += buf[c, i, 0]
                a1 += buf[c, i, 1]
            ys[k, i, 0] = yk1[i, 0] + dt * a0 / n
            ys[k, i, 1] = yk1[i, 1] + dt * a1 / n
    return ys


# ---------------------------------------------------------------------------
# basis-projected gradient (pairwise, mollifier-free)
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def project_laguerre_1d(states, ys, dt, bpolys, cs, ce):
    n_steps = states.shape[0] - 1
    n = states.shape[1]
    nl = bpolys.shape[0]
    nc = cs.shape[0]
    grad = np.zeros(nl)
    buf = np.empty((nc, nl))
    for k in range(n_steps):
        xk = states[k]
        yk = ys[k]
        for c in prange(nc):
            for l in range(nl):
                buf[c, l] = 0.0
            for i in range(cs[c], ce[c]):
                xi = xk[i]
                yi = yk[i]
                for j in range(i + 1, n):
                    d = xi - xk[j]
                    a = abs(d)
                    e = d * math.exp(-0.5 * a)
                    dy = yi - yk[j]
                    for l in range(nl):
                        buf[c, l] += dy * e * _poly(bpolys[l], a)
        for l in range(nl):
            acc = 0.0
            for c in range(nc):
                acc += buf[c, l]
            grad[l] += acc
    return grad * dt / (n * n)


@njit(cache=True, parallel=True)
def project_gauss_2d(states, ys, dt, bparams, cs, ce):
    n_steps = states.shape[0] - 1
    n = states.shape[1]
    nl = bparams.shape[0]
    nc = cs.shape[0]
    grad = np.zeros(nl)
    buf = np.empty((nc, nl))
    for k in range(n_steps):
        xk = states[k]
        yk = ys[k]
        for c in prange(nc):
            for l in range(nl):
                buf[c, l] = 0.0
            for i in range(cs[c], ce[c]):
                xi0 = xk[i, 0]
                xi1 = xk[i, 1]
                yi0 = yk[i, 0]
                yi1 = yk[i, 1]
                for j in range(i + 1, n):
                    d0 = xi0 - xk[j, 0]
                    d1 = xi1 - xk[j, 1]
                    q = d0 * d0 + d1 * d1
                    dy0 = yi0 - yk[j, 0]
                    dy1 = yi1 - yk[j, 1]
                    dot = d0 * dy0 + d1 * dy1
                    for l in range(nl):
                        amp = bparams[l, 0]
                        th = bparams[l, 1]
                        buf[c, l] += dot * amp * math.exp(-q / (2.0 * th * th))
        for l in range(nl):
            acc = 0.0
            for c in range(nc):
                acc += buf[c, l]
            grad[l] += acc
    return grad * dt / (n * n)


def pair_base(n: int) -> np.ndarray:
    """Prefix offsets of the packed upper-triangle pair index (i < j)."""
    base = np.zeros(n, dtype=np.int64)
    acc = 0
    for i in range(n):
        base[i] = acc
        acc += n - 1 - i
    return base


@njit(cache=True, parallel=True)
def adjoint_project_poly_1d(states, y_term, dt, kind, params, kpoly, bpolys,
                            cs, ce, base):
    """Backward adjoint sweep fused with the basis projection at each step.

    The per-pair exponential exp(-|d|/2) is cached between the coupling pass
    and the projection pass of each step.  Returns (adjoint states, gradient).
    """
    n_steps = states.shape[0] - 1
    n = states.shape[1]
    nl = bpolys.shape[0]
    nc = cs.shape[0]
    npairs = n * (n - 1) // 2
    ecache = np.empty(npairs)
    ys = np.empty((n_steps + 1, n))
    ys[n_steps] = y_term
    buf = np.empty((nc, n))
    gbuf = np.empty((nc, nl))
    grad = np.zeros(nl)
    for k in range(n_steps - 1, -1, -1):
        xk = states[k]
        yk1 = ys[k + 1]
        for c in prange(nc):
            for i in range(n):
                buf[c, i] = 0.0
            for i in range(cs[c], ce[c]):
                xi = xk[i]
                yi = yk1[i]
                pidx = base[i]
                for j in range(i + 1, n):
                    d = xi - xk[j]
                    a = abs(d)
                    e = math.exp(-0.5 * a)
                    ecache[pidx + j - i - 1] = e
                    p = 0.0
                    dp = 0.0
                    for m in range(kpoly.shape[0] - 1, 0, -1):
                        p = p * a + kpoly[m]
                        dp = dp * a + m * kpoly[m]
                    p = p * a + kpoly[0]
                    dw = e * (p * (1.0 - 0.5 * a) + a * dp)
                    v = dw * (yi - yk1[j])
                    buf[c, i] += v
                    buf[c, j] -= v
        for i in range(n):
            acc = 0.0
            for c in range(nc):
                acc += buf[c, i]
            ys[k, i] = yk1[i] + dt * acc / n
        yk = ys[k]
        for c in prange(nc):
            for l in range(nl):
                gbuf[c, l] = 0.0
            for i in range(cs[c], ce[c]):
                xi = xk[i]
                yi = yk[i]
                pidx = base[i]
                for j in range(i + 1, n):
                    d = xi - xk[j]
                    a = abs(d)
                    de = d * ecache[pidx + j - i - 1]
                    dy = yi - yk[j]
                    for l in range(nl):
                        gbuf[c, l] += dy * de * _poly(bpolys[l], a)
        for l in range(nl):
            acc = 0.0
            for c in range(nc):
                acc += gbuf[c, l]
            grad[l] += acc
    return ys, grad * dt / (n * n)


@njit(cache=True, parallel=True)
def adjoint_project_gauss_2d(states, y_term, dt, kamps, bparams, cs, ce, base):
    """2D fused adjoint/projection for Gaussian-sum kernels sharing the basis
    widths: kernel amplitude of member m is kamps[m], basis member m is
    bparams[m] = (unit amplitude, theta).
    """
    n_steps = states.shape[0] - 1
    n = states.shape[1]
    nl = bparams.shape[0]
    nc = cs.shape[0]
    npairs = n * (n - 1) // 2
    ecache = np.empty((npairs, nl))
    ys = np.empty((n_steps + 1, n, 2))
    ys[n_steps] = y_term
    buf = np.empty((nc, n, 2))
    gbuf = np.empty((nc, nl))
    grad = np.zeros(nl)
    for k in range(n_steps - 1, -1, -1):
        xk = states[k]
        yk1 = ys[k + 1]
        for c in prange(nc):
            for i in range(n):
                buf[c, i, 0] = 0.0
                buf[c, i, 1] = 0.0
            for i in range(cs[c], ce[c]):
                xi0 = xk[i, 0]
                xi1 = xk[i, 1]
                yi0 = yk1[i, 0]
                yi1 = yk1[i, 1]
                pidx = base[i]
                for j in range(i + 1, n):
                    d0 = xi0 - xk[j, 0]
                    d1 = xi1 - xk[j, 1]
                    q = d0 * d0 + d1 * d1
                    s = 0.0
                    sq = 0.0
                    for m in range(nl):
                        th = bparams[m, 1]
                        e = bparams[m, 0] * math.exp(-q / (2.0 * th * th))
                        ecache[pidx + j - i - 1, m] = e
                        ke = kamps[m] * e
                        s += ke
                        sq += -ke / (2.0 * th * th)
                    dy0 = yi0 - yk1[j, 0]
                    dy1 = yi1 - yk1[j, 1]
                    dot = d0 * dy0 + d1 * dy1
                    v0 = s * dy0 + 2.0 * sq * dot * d0
                    v1 = s * dy1 + 2.0 * sq * dot * d1
                    buf[c, i, 0] += v0
                    buf[c, i, 1] += v1
                    buf[c, j, 0] -= v0
                    buf[c, j, 1] -= v1
        for i in range(n):
            a0 = 0.0
            a1 = 0.0
            for c in range(nc):
                a0 += buf[c, i, 0]
                a1 += buf[c, i, 1]
            ys[k, i, 0] = yk1[i, 0] + dt * a0 / n
            ys[k, i, 1] = yk1[i, 1] + dt * a1 / n
        yk = ys[k]
        for c in prange(nc):
            for l in range(nl):
                gbuf[c, l] = 0.0
            for i in range(cs[c], ce[c]):
                xi0 = xk[i, 0]
                xi1 = xk[i, 1]
                yi0 = yk[i, 0]
                yi1 = yk[i, 1]
                pidx = base[i]
                for j in range(i + 1, n):
                    d0 = xi0 - xk[j, 0]
                    d1 = xi1 - xk[j, 1]
                    dy0 = yi0 - yk[j, 0]
                    dy1 = yi1 - yk[j, 1]
                    dot = d0 * dy0 + d1 * dy1
                    for l in range(nl):
                        gbuf[c, l] += dot * ecache[pidx + j - i - 1, l]
        for l in range(nl):
            acc = 0.0
            for c in range(nc):
                acc += gbuf[c, l]
            grad[l] += acc
    return ys, grad * dt / (n * n)


# ---------------------------------------------------------------------------
# mollified scatter of pair (and single-particle) contributions onto grids
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _fill_window(vals, d0, h, kmax, a, inv_e2, cvals):
    """vals[kmax+o] = exp(-(d0+o h)^2/(2 eps^2))*a for o in [-kmax, kmax].

    Uses exp(-(d0+oh)^2/(2e^2)) = exp(-d0^2/(2e^2)) * B^o * cvals[|o|] with
    B = exp(-d0 h / e^2): two exps per pair instead of one per offset.
    """
    b = math.exp(-d0 * h * inv_e2)
    binv = 1.0 / b
    vals[kmax] = a
    bp = 1.0
    for o in range(1, kmax + 1):
        bp *= b
        vals[kmax + o] = a * bp * cvals[o]
    bn = 1.0
    for o in range(1, kmax + 1):
        bn *= binv
        vals[kmax - o] = a * bn * cvals[o]


@njit(cache=True, parallel=True)
def scatter_pairs_1d(states, ys, k_lo, k_hi, dt, r0, h, nnodes, eps, kmax, bufs):
    """Accumulate dt*Y_i(t_k)*phi_eps(r - (X_i-X_j)(t_k))/N^2 onto r nodes.

    The r grid must be symmetric about the origin: the (j, i) contribution of
    each unordered pair reuses the (i, j) window at mirrored node indices.
    Steps k in [k_lo, k_hi) write into bufs[k - k_lo]; the caller merges the
    per-step buffers in step order.
    """
    n = states.shape[1]
    norm = 1.0 / (eps * math.sqrt(2.0 * math.pi))
    inv2e2 = 1.0 / (2.0 * eps * eps)
    inv_e2 = 1.0 / (eps * eps)
    trunc = 8.0 * eps
    nw = 2 * kmax + 1
    cvals = np.empty(kmax + 1)
    for o in range(kmax + 1):
        cvals[o] = math.exp(-(o * h) * (o * h) * inv2e2)
    for k in prange(k_lo, k_hi):
        vals = np.empty(nw)
        buf = bufs[k - k_lo]
        xk = states[k]
        yk = ys[k]
        scale = dt / (n * n)
        for i in range(n):
            xi = xk[i]
            wi = scale * yk[i]
            for j in range(i + 1, n):
                d = xi - xk[j]
                t = (d - r0) / h
                i0 = int(math.floor(t + 0.5))
                if i0 < -kmax or i0 > nnodes - 1 + kmax:
                    continue
                wj = scale * yk[j]
                mir = nnodes - 1 - i0  # node nearest to -d on a symmetric grid
                d0 = (r0 + i0 * h) - d
                a = norm * math.exp(-d0 * d0 * inv2e2)
                _fill_window(vals, d0, h, kmax, a, inv_e2, cvals)
                for o in range(-kmax, kmax + 1):
                    if abs(d0 + o * h) > trunc:
                        continue
                    v = vals[kmax + o]
                    idx = i0 + o
                    if 0 <= idx < nnodes:
                        buf[idx] += wi * v
                    idx = mir - o
                    if 0 <= idx < nnodes:
                        buf[idx] += wj * v


@njit(cache=True, parallel=True)
def scatter_pairs_2d(states, ys, k_lo, k_hi, dt, r0, h, n1, n2, eps, kmax, bufs):
    n = states.shape[1]
    norm = 1.0 / (2.0 * math.pi * eps * eps)
    inv2e2 = 1.0 / (2.0 * eps * eps)
    inv_e2 = 1.0 / (eps * eps)
    trunc2 = 64.0 * eps * eps
    nw = 2 * kmax + 1
    cvals = np.empty(kmax + 1)
    for o in range(kmax + 1):
        cvals[o] = math.exp(-(o * h) * (o * h) * inv2e2)
    for k in prange(k_lo, k_hi):
        vals0 = np.empty(nw)
        vals1 = np.empty(nw)
        buf = bufs[k - k_lo]
        xk = states[k]
        yk = ys[k]
        scale = dt / (n * n)
        for i in range(n):
            for j in range(i + 1, n):
                d0 = xk[i, 0] - xk[j, 0]
                d1 = xk[i, 1] - xk[j, 1]
                i0 = int(math.floor((d0 - r0) / h + 0.5))
                i1 = int(math.floor((d1 - r0) / h + 0.5))
                if i0 < -kmax or i0 > n1 - 1 + kmax or i1 < -kmax or i1 > n2 - 1 + kmax:
                    continue
                e0 = (r0 + i0 * h) - d0
                e1 = (r0 + i1 * h) - d1
                a0 = math.exp(-e0 * e0 * inv2e2)
                a1 = norm * math.exp(-e1 * e1 * inv2e2)
                _fill_window(vals0, e0, h, kmax, a0, inv_e2, cvals)
                _fill_window(vals1, e1, h, kmax, a1, inv_e2, cvals)
                mir0 = n1 - 1 - i0
                mir1 = n2 - 1 - i1
                for o0 in range(-kmax, kmax + 1):
                    z0 = e0 + o0 * h
                    v0 = vals0[kmax + o0]
                    ia = i0 + o0
                    ma = mir0 - o0
                    for o1 in range(-kmax, kmax + 1):
                        z1 = e1 + o1 * h
                        if z0 * z0 + z1 * z1 > trunc2:
                            continue
                        val = v0 * vals1[kmax + o1]
                        ib = i1 + o1
                        if 0 <= ia < n1 and 0 <= ib < n2:
                            buf[ia, ib, 0] += scale * yk[i, 0] * val
                            buf[ia, ib, 1] += scale * yk[i, 1] * val
                        mb = mir1 - o1
                        if 0 <= ma < n1 and 0 <= mb < n2:
                            buf[ma, mb, 0] += scale * yk[j, 0] * val
                            buf[ma, mb, 1] += scale * yk[j, 1] * val


@njit(cache=True, parallel=True)
def scatter_points_1d(states, ys, k_lo, k_hi, dt, x0, h, nnodes, eps, kmax, bufs):
    """Accumulate dt*Y_i(t_k)*phi_eps(x - X_i(t_k))/N onto x nodes."""
    n = states.shape[1]
    norm = 1.0 / (eps * math.sqrt(2.0 * math.pi))
    inv2e2 = 1.0 / (2.0 * eps * eps)
    inv_e2 = 1.0 / (eps * eps)
    trunc = 8.0 * eps
    nw = 2 * kmax + 1
    cvals = np.empty(kmax + 1)
    for o in range(kmax + 1):
        cvals[o] = math.exp(-(o * h) * (o * h) * inv2e2)
    for k in prange(k_lo, k_hi):
        vals = np.empty(nw)
        buf = bufs[k - k_lo]
        xk = states[k]
        yk = ys[k]
        scale = dt / n
        for i in range(n):
            xi = xk[i]
            i0 = int(math.floor((xi - x0) / h + 0.5))
            if i0 < -kmax or i0 > nnodes - 1 + kmax:
                continue
            wi = scale * yk[i]
            d0 = (x0 + i0 * h) - xi
            a = norm * math.exp(-d0 * d0 * inv2e2)
            _fill_window(vals, d0, h, kmax, a, inv_e2, cvals)
            for o in range(-kmax, kmax + 1):
                idx = i0 + o
                if idx < 0 or idx >= nnodes:
                    continue
                if abs(d0 + o * h) > trunc:
                    continue
                buf[idx] += wi * vals[kmax + o]


@njit(cache=True, parallel=True)
def scatter_points_2d(states, ys, k_lo, k_hi, dt, x0, h, n1, n2, eps, kmax, bufs):
    n = states.shape[1]
    norm = 1.0 / (2.0 * math.pi * eps * eps)
    inv2e2 = 1.0 / (2.0 * eps * eps)
    inv_e2 = 1.0 / (eps * eps)
    trunc2 = 64.0 * eps * eps
    nw = 2 * kmax + 1
    cvals = np.empty(kmax + 1)
    for o in range(kmax + 1):
        cvals[o] = math.exp(-(o * h) * (o * h) * inv2e2)
    for k in prange(k_lo, k_hi):
        vals0 = np.empty(nw)
        vals1 = np.empty(nw)
        buf = bufs[k - k_lo]
        xk = states[k]
        yk = ys[k]
        scale = dt / n
        for i in range(n):
            i0 = int(math.floor((xk[i, 0] - x0) / h + 0.5))
            i1 = int(math.floor((xk[i, 1] - x0) / h + 0.5))
            if i0 < -kmax or i0 > n1 - 1 + kmax or i1 < -kmax or i1 > n2 - 1 + kmax:
                continue
            e0 = (x0 + i0 * h) - xk[i, 0]
            e1 = (x0 + i1 * h) - xk[i, 1]
            w0 = scale * yk[i, 0]
            w1 = scale * yk[i, 1]
            a0 = math.exp(-e0 * e0 * inv2e2)
            a1 = norm * math.exp(-e1 * e1 * inv2e2)
            _fill_window(vals0, e0, h, kmax, a0, inv_e2, cvals)
            _fill_window(vals1, e1, h, kmax, a1, inv_e2, cvals)
            for o0 in range(-kmax, kmax + 1):
                idx0 = i0 + o0
                if idx0 < 0 or idx0 >= n1:
                    continue
                z0 = e0 + o0 * h
                v0 = vals0[kmax + o0]
                for o1 in range(-kmax, kmax + 1):
                    idx1 = i1 + o1
                    if idx1 < 0 or idx1 >= n2:
                        continue
                    z1 = e1 + o1 * h
                    if z0 * z0 + z1 * z1 > trunc2:
                        continue
                    val = v0 * vals1[kmax + o1]
                    buf[idx0, idx1, 0] += w0 * val
                    buf[idx0, idx1, 1] += w1 * val
