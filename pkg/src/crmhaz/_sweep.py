"""Compiled inner loops of the marginal Gibbs chain.

Everything here mirrors the pure-Python state operations and weight
formulas exactly (same compaction rules, same trapezoid grids); the test
suite replays recorded sweep choices through the Python operations and
asserts bit-identical states.  All randomness enters through pre-drawn
arrays so the caller's generator owns the stream.

Kernel kinds: 0 = step, 1 = window, 2 = exponential decay.  Parameter
packing: p1 = gamma (kinds 0, 1) or the decay rate (kind 2); p2 = window
bandwidth (kind 1 only).
"""

import numpy as np
from numba import njit

# effective support of e^(-rate * s) used by the decay-kernel fallback
_DECAY_WINDOW = 45.0


@njit(cache=True)
def _keval(kind, p1, p2, t, x):
    d = t - x
    if d < 0.0:
        return 0.0
    if kind == 0:
        return p1
    if kind == 1:
        return p1 if d <= p2 else 0.0
    return np.sqrt(2.0 * p1) * np.exp(-p1 * d)


@njit(cache=True)
def _psi(sigma, beta, u):
    if sigma == 0.0:
        return np.log1p(u / beta)
    return ((beta + u) ** sigma - beta**sigma) / sigma


@njit(cache=True)
def _exposure(kind, p1, p2, ts, cs, s0, s1, ou_suf, use_suf, x):
    i = np.searchsorted(ts, x)
    if kind == 0:
        v = p1 * (s1[i] - x * s0[i])
    elif kind == 1:
        j = np.searchsorted(ts, x + p2)
        v = p1 * ((s1[i] - s1[j]) - x * (s0[i] - s0[j]) + p2 * s0[j])
    else:
        if use_suf:
            v = np.sqrt(2.0 / p1) * (s0[i] - np.exp(p1 * x) * ou_suf[i])
        else:
            acc = 0.0
            for q in range(i, ts.size):
                acc += cs[q] * -np.expm1(-p1 * (ts[q] - x))
            v = np.sqrt(2.0 / p1) * acc
    return v if v > 0.0 else 0.0


@njit(cache=True)
def _remove(i, obs_cluster, obs_table, clu_loc, clu_n, clu_r, clu_nd, clu_rd,
            tab_cluster, tab_cause, tab_q, km, kclu):
    j = obs_cluster[i]
    t = obs_table[i]
    d = tab_cause[t]
    tab_q[t] -= 1
    clu_n[j] -= 1
    clu_nd[j, d] -= 1
    obs_cluster[i] = -1
    obs_table[i] = -1
    if tab_q[t] == 0:
        clu_r[j] -= 1
        clu_rd[j, d] -= 1
        m = km[1]
        for s in range(t, m - 1):
            tab_cluster[s] = tab_cluster[s + 1]
            tab_cause[s] = tab_cause[s + 1]
            tab_q[s] = tab_q[s + 1]
        km[1] = m - 1
        for o in range(obs_table.size):
            if obs_table[o] > t:
                obs_table[o] -= 1
    if clu_n[j] == 0:
        k = km[0]
        for s in range(j, k - 1):
            clu_loc[s] = clu_loc[s + 1]
            clu_n[s] = clu_n[s + 1]
            clu_r[s] = clu_r[s + 1]
            kclu[s] = kclu[s + 1]
            for d2 in range(clu_nd.shape[1]):
                clu_nd[s, d2] = clu_nd[s + 1, d2]
                clu_rd[s, d2] = clu_rd[s + 1, d2]
        km[0] = k - 1
        for o in range(obs_cluster.size):
            if obs_cluster[o] > j:
                obs_cluster[o] -= 1
        for s in range(km[1]):
            if tab_cluster[s] > j:
                tab_cluster[s] -= 1


@njit(cache=True)
def _append_table(j, d, tab_cluster, tab_cause, tab_q, km):
    t = km[1]
    tab_cluster[t] = j
    tab_cause[t] = d
    tab_q[t] = 1
    km[1] = t + 1
    return t


@njit(cache=True)
def _case3_log_mass(kind, p1, iT, ilo, T, xg, gv, g3cum, ou_fallback):
    """Log of the new-cluster integral, without theta and the Cox weight."""
    if kind <= 1:
        mass = g3cum[iT] - g3cum[ilo]
        if mass <= 0.0:
            return -np.inf
        return np.log(p1 * mass)
    if not ou_fallback:
        mass = g3cum[iT]
        if mass <= 0.0:
            return -np.inf
        return 0.5 * np.log(2.0 * p1) - p1 * T + np.log(mass)
    start = np.searchsorted(xg, T - _DECAY_WINDOW / p1)
    if start < 1:
        start = 1
    acc = 0.0
    for q in range(start, iT + 1):
        f0 = np.exp(-p1 * (T - xg[q - 1])) * gv[q - 1]
        f1 = np.exp(-p1 * (T - xg[q])) * gv[q]
        acc += 0.5 * (f0 + f1) * (xg[q] - xg[q - 1])
    if acc <= 0.0:
        return -np.inf
    return 0.5 * np.log(2.0 * p1) + np.log(acc)


@njit(cache=True)
def _draw_location(kind, p1, u, iT, ilo, T, xg, gv, g3cum, ou_fallback):
    """Inverse-CDF draw from the new-cluster location law on the grid."""
    if kind <= 1 or not ou_fallback:
        lo_idx = ilo if kind <= 1 else 0
        base = g3cum[lo_idx]
        target = base + u * (g3cum[iT] - base)
        # first grid index with cumulative >= target
        idx = np.searchsorted(g3cum[lo_idx : iT + 1], target) + lo_idx
        if idx < lo_idx + 1:
            idx = lo_idx + 1
        if idx > iT:
            idx = iT
        c0 = g3cum[idx - 1]
        c1 = g3cum[idx]
        frac = 0.0 if c1 <= c0 else (target - c0) / (c1 - c0)
        x = xg[idx - 1] + frac * (xg[idx] - xg[idx - 1])
    else:
        start = np.searchsorted(xg, T - _DECAY_WINDOW / p1)
        if start < 1:
            start = 1
        total = 0.0
        for q in range(start, iT + 1):
            f0 = np.exp(-p1 * (T - xg[q - 1])) * gv[q - 1]
            f1 = np.exp(-p1 * (T - xg[q])) * gv[q]
            total += 0.5 * (f0 + f1) * (xg[q] - xg[q - 1])
        target = u * total
        acc = 0.0
        x = xg[iT]
        for q in range(start, iT + 1):
            f0 = np.exp(-p1 * (T - xg[q - 1])) * gv[q - 1]
            f1 = np.exp(-p1 * (T - xg[q])) * gv[q]
            step = 0.5 * (f0 + f1) * (xg[q] - xg[q - 1])
            if acc + step >= target and step > 0.0:
                frac = (target - acc) / step
                x = xg[q - 1] + frac * (xg[q] - xg[q - 1])
                break
            acc += step
    if x <= 0.0:
        x = 0.5 * xg[1]
    if x > T:
        x = T
    return x


@njit(cache=True)
def sweep(ev_ids, ev_T, ev_d, ev_cox,
          obs_cluster, obs_table,
          clu_loc, clu_n, clu_r, clu_nd, clu_rd,
          tab_cluster, tab_cause, tab_q,
          km, kclu,
          kind, p1, p2, sigma, beta, sigma0, beta0, theta, D, independent,
          xg, gv, g3cum, idxT, idxTlo, ou_fallback,
          ts, cs, s0, s1, ou_suf, use_suf,
          u_choice, u_loc,
          rec_kind, rec_idx, rec_loc,
          wbuf, ckind, cid):
    """One full reallocation pass over the event observations.

    Also performs the sequential-allocation initialization: observations
    whose current assignment is -1 are inserted without a removal first.
    Records every decision in rec_* for replay-based equivalence tests.
    """
    for e in range(ev_ids.size):
        i = ev_ids[e]
        T = ev_T[e]
        d = ev_d[e]
        cxw = ev_cox[e]
        if obs_cluster[i] >= 0:
            _remove(i, obs_cluster, obs_table, clu_loc, clu_n, clu_r, clu_nd,
                    clu_rd, tab_cluster, tab_cause, tab_q, km, kclu)
        k = km[0]
        m = km[1]
        nc = 0
        # existing tables of the observation's cause
        for t in range(m):
            if tab_cause[t] == d:
                j = tab_cluster[t]
                kv = _keval(kind, p1, p2, T, clu_loc[j])
                if kv > 0.0:
                    wbuf[nc] = (np.log(cxw * kv) + np.log(tab_q[t] - sigma)
                                - np.log(beta + kclu[j]))
                    ckind[nc] = 0
                    cid[nc] = t
                    nc += 1
        # new table in an existing cluster (hierarchical only)
        if independent == 0:
            for j in range(k):
                kv = _keval(kind, p1, p2, T, clu_loc[j])
                if kv > 0.0:
                    wbuf[nc] = (np.log(cxw * kv)
                                + (sigma - 1.0) * np.log(beta + kclu[j])
                                + np.log(clu_r[j] - sigma0)
                                - np.log(beta0 + D * _psi(sigma, beta, kclu[j])))
                    ckind[nc] = 1
                    cid[nc] = j
                    nc += 1
        # new cluster at a fresh location
        w3 = _case3_log_mass(kind, p1, idxT[e], idxTlo[e], T, xg, gv, g3cum,
                             ou_fallback)
        wbuf[nc] = np.log(theta * cxw) + w3
        ckind[nc] = 2
        cid[nc] = -1
        nc += 1

        wmax = wbuf[0]
        for c in range(1, nc):
            if wbuf[c] > wmax:
                wmax = wbuf[c]
        tot = 0.0
        for c in range(nc):
            wbuf[c] = np.exp(wbuf[c] - wmax)
            tot += wbuf[c]
        r = u_choice[e] * tot
        acc = 0.0
        sel = nc - 1
        for c in range(nc):
            acc += wbuf[c]
            if acc >= r:
                sel = c
                break

        if ckind[sel] == 0:
            t = cid[sel]
            j = tab_cluster[t]
            tab_q[t] += 1
            rec_kind[e] = 0
            rec_idx[e] = t
            rec_loc[e] = np.nan
        elif ckind[sel] == 1:
            j = cid[sel]
            t = _append_table(j, d, tab_cluster, tab_cause, tab_q, km)
            clu_r[j] += 1
            clu_rd[j, d] += 1
            rec_kind[e] = 1
            rec_idx[e] = j
            rec_loc[e] = np.nan
        else:
            x = _draw_location(kind, p1, u_loc[e], idxT[e], idxTlo[e], T, xg,
                               gv, g3cum, ou_fallback)
            j = km[0]
            clu_loc[j] = x
            clu_n[j] = 0
            clu_r[j] = 1
            for d2 in range(D):
                clu_nd[j, d2] = 0
                clu_rd[j, d2] = 0
            clu_rd[j, d] = 1
            km[0] = j + 1
            t = _append_table(j, d, tab_cluster, tab_cause, tab_q, km)
            kclu[j] = _exposure(kind, p1, p2, ts, cs, s0, s1, ou_suf, use_suf, x)
            rec_kind[e] = 2
            rec_idx[e] = j
            rec_loc[e] = x
        clu_n[j] += 1
        clu_nd[j, d] += 1
        obs_cluster[i] = j
        obs_table[i] = t


@njit(cache=True)
def accelerate(ev_ids, ev_T, obs_cluster,
               clu_loc, clu_n, clu_r,
               km, kclu,
               kind, p1, p2, sigma, beta, sigma0, beta0, D, independent,
               ts, cs, s0, s1, ou_suf, use_suf,
               z, u, scale):
    """Reflected random-walk refresh of every cluster location.

    Returns the number of accepted moves.  The target is the location full
    conditional; for the flat kernels its data term reduces to the support
    constraint, for the decay kernel it adds a linear tilt.
    """
    k = km[0]
    min_t = np.full(k, np.inf)
    max_t = np.zeros(k)
    for e in range(ev_ids.size):
        j = obs_cluster[ev_ids[e]]
        t = ev_T[e]
        if t < min_t[j]:
            min_t[j] = t
        if t > max_t[j]:
            max_t[j] = t
    accepted = 0
    for j in range(k):
        hi = min_t[j]
        lo = 0.0
        if kind == 1:
            lo = max_t[j] - p2
            if lo < 0.0:
                lo = 0.0
        width = hi - lo
        if width <= 0.0:
            continue
        x = clu_loc[j]
        prop = x + z[j] * scale * width
        y = (prop - lo) % (2.0 * width)
        if y < 0.0:
            y += 2.0 * width
        if y > width:
            y = 2.0 * width - y
        prop = lo + y
        if prop <= 0.0:
            continue
        kp = _exposure(kind, p1, p2, ts, cs, s0, s1, ou_suf, use_suf, prop)
        kx = kclu[j]
        delta = (clu_r[j] * sigma - clu_n[j]) * (np.log(beta + kp) - np.log(beta + kx))
        if independent == 0:
            delta += (sigma0 - clu_r[j]) * (
                np.log(beta0 + D * _psi(sigma, beta, kp))
                - np.log(beta0 + D * _psi(sigma, beta, kx))
            )
        if kind == 2:
            delta += p1 * clu_n[j] * (prop - x)
        if np.log(u[j]) < delta:
            clu_loc[j] = prop
            kclu[j] = kp
            accepted += 1
    return accepted
