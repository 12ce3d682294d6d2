"""Numba kernels for the exploration process and its local-time field.

The field lives on nodes ``y_j = j * dy``. Node ``j`` owns the cell
``[y_j - dy/2, y_j + dy/2]`` clipped to ``[0, K]``, so node 0 (and the node at
``K``) own half cells. Occupation of one step is spread as a box of width
``eps`` centred at the left-point position, folded back at the reflecting
boundaries, and each node stores mass / cell length. With this convention
``sum_j ell[j] * cell_len[j]`` equals the elapsed time exactly.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .sde_core import LOCAL_TIME_PER_PUSH, reflect_clamp

OK = 0
NOT_REACHED = 1
GRID_SANITY = 2


@numba.njit(cache=True)
def interp_uniform(vals, step, u):
    """Piecewise-linear interpolation of samples ``vals`` at spacing ``step``; 0 outside."""
    n = vals.shape[0]
    if n == 0 or u < 0.0:
        return 0.0
    q = u / step
    j = int(q)
    if j >= n - 1:
        return vals[n - 1] if (j == n - 1 and q == j) else 0.0
    f = q - j
    return vals[j] + f * (vals[j + 1] - vals[j])


@numba.njit(cache=True)
def deposit_interval(ell, lo, hi, w, dy, K):
    """Add density ``w`` (mass per unit level) over ``[lo, hi]`` onto node cells."""
    if hi <= lo:
        return
    j0 = int((lo + 0.5 * dy) / dy)
    j1 = int((hi + 0.5 * dy) / dy)
    if j1 > ell.shape[0] - 1:
        j1 = ell.shape[0] - 1
    for j in range(j0, j1 + 1):
        c_lo = (j - 0.5) * dy
        if c_lo < 0.0:
            c_lo = 0.0
        c_hi = (j + 0.5) * dy
        if c_hi > K:
            c_hi = K
        a = lo if lo > c_lo else c_lo
        b = hi if hi < c_hi else c_hi
        if b > a:
            ell[j] += w * (b - a) / (c_hi - c_lo)


@numba.njit(cache=True)
def deposit_box(ell, h, mass, eps, dy, K):
    """Spread ``mass`` of occupation as a box of width ``eps`` centred at ``h``."""
    w = mass / eps
    a = h - 0.5 * eps
    b = h + 0.5 * eps
    lo = a if a > 0.0 else 0.0
    hi = b if b < K else K
    deposit_interval(ell, lo, hi, w, dy, K)
    if a < 0.0:
        deposit_interval(ell, 0.0, -a, w, dy, K)
    if b > K:
        deposit_interval(ell, 2.0 * K - b, K, w, dy, K)


@numba.njit(cache=True)
def local_time_at(ell, h, dy, b0):
    """Linear interpolation of the field at ``h``; node 0 takes the exact boundary value."""
    q = h / dy
    j = int(q)
    f = q - j
    v0 = b0 if j == 0 else ell[j]
    v1 = ell[j + 1] if j + 1 < ell.shape[0] else 0.0
    return v0 + f * (v1 - v0)


@numba.njit(cache=True)
def no_drift(level, lt):
    return 0.0


@numba.njit(cache=True)
def _grow(a, n):
    out = np.zeros(n, a.dtype)
    out[: a.shape[0]] = a
    return out


@numba.njit(cache=True)
def _grow2(a, n):
    out = np.zeros((a.shape[0], n), a.dtype)
    out[:, : a.shape[1]] = a
    return out


# state vector slots for explore
_H, _S, _NSTEPS, _SKIPPED, _B0, _PLO, _PUP, _MAXH, _K, _STATUS, _NREC = range(11)
_DONE, _GROW_FIELD, _GROW_REC = 0, 1, 2


@numba.njit(cache=True)
def _advance(rng, theta, gamma, zvals, z_step, use_g, g, xs, K, dt, dy, eps,
             s_max, skip_level, record, ell, snaps, S, Smax, rec_t, rec_h, rec_dB,
             rec_lo, rec_up, st):
    # Hot loop on fixed-size buffers; returns when done or a buffer must grow.
    sq = math.sqrt(dt)
    n_x = xs.shape[0]
    h = st[_H]
    s = st[_S]
    n_steps = int(st[_NSTEPS])
    skipped = st[_SKIPPED]
    b0 = st[_B0]
    push_lo = st[_PLO]
    push_up = st[_PUP]
    max_h = st[_MAXH]
    k = int(st[_K])
    n_rec = int(st[_NREC])
    status = OK
    reason = _DONE
    n_field = ell.shape[0]
    cap = rec_t.shape[0]
    while k < n_x or n_x == 0:
        if s >= s_max * (1.0 - 1e-12):
            if n_x > 0:
                status = NOT_REACHED
            break
        if K == math.inf and int((h + 0.5 * eps) / dy) + 3 > n_field:
            reason = _GROW_FIELD
            break
        if record and n_rec + 3 > cap:
            reason = _GROW_REC
            break
        lt = local_time_at(ell, h, dy, b0)
        if use_g:
            drift = g(h, lt)
        else:
            drift = 0.5 * theta - gamma * (interp_uniform(zvals, z_step, h) + lt)
        dB = sq * rng.standard_normal()
        pos, lo, up, ok = reflect_clamp(h + drift * dt + dB, K)
        if not ok:
            status = GRID_SANITY
            break
        nb0 = b0 + LOCAL_TIME_PER_PUSH * lo
        done = 0.0
        while k < n_x and nb0 > xs[k]:
            frac = (xs[k] - b0) / (nb0 - b0)
            if frac > done:
                deposit_box(ell, h, (frac - done) * dt, eps, dy, K)
                done = frac
            snaps[k, :] = ell
            S[k] = s + frac * dt
            Smax[k] = max_h
            k += 1
        if done < 1.0:
            deposit_box(ell, h, (1.0 - done) * dt, eps, dy, K)
        if record:
            rec_t[n_rec] = s
            rec_h[n_rec] = h
            rec_dB[n_rec] = dB
            rec_lo[n_rec] = lo
            rec_up[n_rec] = up
            n_rec += 1
        b0 = nb0
        push_lo += lo
        push_up += up
        n_steps += 1
        s = n_steps * dt + skipped
        h = pos
        if h > max_h:
            max_h = h
        if h > skip_level:
            # driftless excursion above skip_level: exact first-passage duration
            zz = rng.standard_normal()
            d = h - skip_level
            if record:
                rec_t[n_rec] = s
                rec_h[n_rec] = h
                rec_dB[n_rec] = np.nan
                rec_lo[n_rec] = 0.0
                rec_up[n_rec] = 0.0
                n_rec += 1
            skipped += d * d / (zz * zz)
            s = n_steps * dt + skipped
            h = skip_level
    st[_H] = h
    st[_S] = s
    st[_NSTEPS] = n_steps
    st[_SKIPPED] = skipped
    st[_B0] = b0
    st[_PLO] = push_lo
    st[_PUP] = push_up
    st[_MAXH] = max_h
    st[_K] = k
    st[_STATUS] = status
    st[_NREC] = n_rec
    return reason


@numba.njit(cache=True)
def explore(rng, theta, gamma, zvals, z_step, use_g, g, xs, K, dt, dy, eps,
            s_max, skip_level, record, n_nodes0):
    """Simulate H until ``L(0)`` passes every target in ``xs`` (sorted).

    With ``xs`` empty the run stops at ``s_max`` with status OK (fixed-horizon
    mode). Returns a tuple, see :func:`rayknight.exploration._unpack`.
    """
    n_x = xs.shape[0]
    if K < math.inf:
        n_nodes = int(round(K / dy)) + 1
    else:
        n_nodes = n_nodes0
    ell = np.zeros(n_nodes)
    snaps = np.zeros((n_x, n_nodes))
    S = np.full(n_x, np.nan)
    Smax = np.zeros(n_x)
    cap = 4096 if record else 0
    rec_t = np.zeros(cap)
    rec_h = np.zeros(cap)
    rec_dB = np.zeros(cap)
    rec_lo = np.zeros(cap)
    rec_up = np.zeros(cap)
    st = np.zeros(11)
    while True:
        reason = _advance(rng, theta, gamma, zvals, z_step, use_g, g, xs, K, dt, dy,
                          eps, s_max, skip_level, record, ell, snaps, S, Smax, rec_t, rec_h,
                          rec_dB, rec_lo, rec_up, st)
        if reason == _GROW_FIELD:
            m = 2 * ell.shape[0]
            ell = _grow(ell, m)
            snaps = _grow2(snaps, m)
        elif reason == _GROW_REC:
            m = 2 * rec_t.shape[0]
            rec_t = _grow(rec_t, m)
            rec_h = _grow(rec_h, m)
            rec_dB = _grow(rec_dB, m)
            rec_lo = _grow(rec_lo, m)
            rec_up = _grow(rec_up, m)
        else:
            break
    n_rec = int(st[_NREC])
    if record:
        rec_t[n_rec] = st[_S]
        rec_h[n_rec] = st[_H]
        rec_t = rec_t[: n_rec + 1]
        rec_h = rec_h[: n_rec + 1]
    return (int(st[_STATUS]), st[_H], st[_S], st[_PLO], st[_PUP], st[_MAXH], ell,
            snaps, S, Smax, rec_t, rec_h, rec_dB[:n_rec], rec_lo[:n_rec], rec_up[:n_rec])


@numba.njit(cache=True)
def replay_integrand(rec_h, rec_t, rec_lo, dt_steps, theta, gamma, zvals, z_step,
                     use_g, g, K, dy, eps, n_nodes0):
    """Rebuild the field along a recorded path; return the drift seen at every step."""
    n = dt_steps.shape[0]
    if K < math.inf:
        n_nodes = int(round(K / dy)) + 1
    else:
        n_nodes = n_nodes0
    ell = np.zeros(n_nodes)
    out = np.zeros(n)
    b0 = 0.0
    for i in range(n):
        h = rec_h[i]
        if K == math.inf:
            need = int((h + 0.5 * eps) / dy) + 3
            if need > ell.shape[0]:
                m = ell.shape[0]
                while m < need:
                    m *= 2
                ell = _grow(ell, m)
        lt = local_time_at(ell, h, dy, b0)
        if use_g:
            out[i] = g(h, lt)
        else:
            out[i] = 0.5 * theta - gamma * (interp_uniform(zvals, z_step, h) + lt)
        deposit_box(ell, h, dt_steps[i], eps, dy, K)
        b0 += LOCAL_TIME_PER_PUSH * rec_lo[i]
    return out


@numba.njit(cache=True)
def _girsanov_advance(rng, theta, gamma, zvals, z_step, use_g, g, n_steps, dt, dy, eps,
                      ell, st):
    sq = math.sqrt(dt)
    K = math.inf
    h, b0, M, br, max_h = st[0], st[1], st[2], st[3], st[5]
    i = int(st[4])
    reason = _DONE
    while i < n_steps:
        if int((h + 0.5 * eps) / dy) + 3 > ell.shape[0]:
            reason = _GROW_FIELD
            break
        lt = local_time_at(ell, h, dy, b0)
        if use_g:
            a = g(h, lt)
        else:
            a = 0.5 * theta - gamma * (interp_uniform(zvals, z_step, h) + lt)
        dB = sq * rng.standard_normal()
        M += a * dB
        br += a * a * dt
        pos, lo, up, ok = reflect_clamp(h + dB, K)
        deposit_box(ell, h, dt, eps, dy, K)
        b0 += LOCAL_TIME_PER_PUSH * lo
        h = pos
        if h > max_h:
            max_h = h
        i += 1
    st[0], st[1], st[2], st[3], st[4], st[5] = h, b0, M, br, i, max_h
    return reason


@numba.njit(cache=True)
def girsanov_run(rng, theta, gamma, zvals, z_step, use_g, g, s_horizon, dt, dy, eps,
                 n_nodes0, probe_levels):
    """Driftless reflected BM on ``[0, s_horizon]`` with its log Girsanov weight.

    The integrand is the drift the exploration process would feel along the
    same path. Returns ``(M, bracket, field at probe_levels, local time at H_s)``;
    probes above the running maximum read 0.
    """
    ell = np.zeros(n_nodes0)
    st = np.zeros(6)
    n_steps = int(round(s_horizon / dt))
    while _girsanov_advance(rng, theta, gamma, zvals, z_step, use_g, g, n_steps, dt, dy,
                            eps, ell, st) == _GROW_FIELD:
        ell = _grow(ell, 2 * ell.shape[0])
    h, b0, M, br, max_h = st[0], st[1], st[2], st[3], st[5]
    probes = np.zeros(probe_levels.shape[0])
    for i in range(probe_levels.shape[0]):
        j = int(round(probe_levels[i] / dy))
        if j == 0:
            probes[i] = b0
        elif probe_levels[i] <= max_h and j < ell.shape[0]:
            probes[i] = ell[j]
    return M, br, probes, local_time_at(ell, h, dy, b0)


@numba.njit(cache=True)
def bridge_local_time(rng, y, n_steps, eps):
    """Local times at ``y`` and ``-y`` of a Brownian bridge from 0 to ``y`` on [0, 1]."""
    dt = 1.0 / n_steps
    sq = math.sqrt(dt)
    w = np.zeros(n_steps + 1)
    for i in range(n_steps):
        w[i + 1] = w[i] + sq * rng.standard_normal()
    w1 = w[n_steps]
    occ_p = 0.0
    occ_m = 0.0
    half = 0.5 * eps
    for i in range(n_steps + 1):
        b = w[i] - (i * dt) * (w1 - y)
        # trapezoid weights in time
        wt = 0.5 * dt if (i == 0 or i == n_steps) else dt
        if abs(b - y) < half:
            occ_p += wt
        if abs(b + y) < half:
            occ_m += wt
    return occ_p / eps, occ_m / eps


@numba.njit(cache=True)
def feller_run(rng, x, theta, gamma, zvals, z_step, dt, n_steps, probe_idx, record):
    """Full-truncation Euler for ``dZ = Z(theta - gamma (Z + 2 z(t))) dt + 2 sqrt(Z) dW``.

    Returns ``(extinction_step or -1, total mass, probes, path)``.
    """
    sq = math.sqrt(dt)
    probes = np.zeros(probe_idx.shape[0])
    path = np.zeros(n_steps + 1 if record else 1)
    z = x
    total = 0.0
    ext = -1
    p = 0
    while p < probe_idx.shape[0] and probe_idx[p] == 0:
        probes[p] = z
        p += 1
    if record:
        path[0] = z
    for k in range(n_steps):
        if z == 0.0:
            ext = k
            break
        ze = interp_uniform(zvals, z_step, k * dt)
        drift = theta * z - gamma * z * z - 2.0 * gamma * ze * z
        dW = sq * rng.standard_normal()
        zn = z + drift * dt + 2.0 * math.sqrt(z) * dW
        if zn < 0.0:
            zn = 0.0
        total += 0.5 * (z + zn) * dt
        z = zn
        while p < probe_idx.shape[0] and probe_idx[p] == k + 1:
            probes[p] = z
            p += 1
        if record:
            path[k + 1] = z
    if ext < 0 and z == 0.0:
        ext = n_steps
    return ext, total, probes, path


@numba.njit(cache=True)
def feller_general_run(rng, x, f, dt, n_steps, probe_idx, record):
    """Full-truncation Euler for ``dZ = f(t, Z) dt + 2 sqrt(Z) dW``."""
    sq = math.sqrt(dt)
    probes = np.zeros(probe_idx.shape[0])
    path = np.zeros(n_steps + 1 if record else 1)
    z = x
    total = 0.0
    ext = -1
    p = 0
    while p < probe_idx.shape[0] and probe_idx[p] == 0:
        probes[p] = z
        p += 1
    if record:
        path[0] = z
    for k in range(n_steps):
        t = k * dt
        drift = f(t, z)
        if z == 0.0 and drift == 0.0:
            ext = k
            break
        dW = sq * rng.standard_normal()
        zn = z + drift * dt + 2.0 * math.sqrt(z) * dW
        if zn < 0.0:
            zn = 0.0
        total += 0.5 * (z + zn) * dt
        z = zn
        while p < probe_idx.shape[0] and probe_idx[p] == k + 1:
            probes[p] = z
            p += 1
        if record:
            path[k + 1] = z
    if ext < 0 and z == 0.0 and f(n_steps * dt, 0.0) == 0.0:
        ext = n_steps
    return ext, total, probes, path
