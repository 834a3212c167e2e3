"""Compiled per-shard kernels.

Every kernel loops over the groups of one shard and releases the GIL, so the
engine's thread pool can run shards concurrently.  ``masks``/``caps`` are the
local constraints in topological order (see ``LocalConstraintSet.masks``).
"""

import numpy as np
from numba import njit

DEDUP_TOL = 1e-12


@njit(cache=True, nogil=True)
def _greedy_row(z, masks, caps, order, x):
    # x[j] = z[j] > 0, then prune each constraint to its top-cap members.
    m = z.shape[0]
    cnt = 0
    for j in range(m):
        if z[j] > 0.0:
            x[j] = True
            # insertion by descending z; equal values keep index order
            pos = cnt
            while pos > 0 and z[order[pos - 1]] < z[j]:
                order[pos] = order[pos - 1]
                pos -= 1
            order[pos] = j
            cnt += 1
        else:
            x[j] = False
    for l in range(caps.shape[0]):
        seen = 0
        cap = caps[l]
        for p in range(cnt):
            j = order[p]
            if x[j] and masks[l, j]:
                seen += 1
                if seen > cap:
                    x[j] = False


@njit(cache=True, nogil=True)
def greedy_rows(z, masks, caps, x):
    """Greedy subproblem solution for every row of adjusted profits ``z``."""
    order = np.empty(z.shape[1], dtype=np.int64)
    for r in range(z.shape[0]):
        _greedy_row(z[r], masks, caps, order, x[r])


@njit(cache=True, nogil=True)
def adjusted_dense(p, b, lam):
    n, m, kk = b.shape
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(kk):
                s += lam[k] * b[i, j, k]
            out[i, j] = p[i, j] - s
    return out


@njit(cache=True, nogil=True)
def solve_shard_dense(p, b, lam, masks, caps):
    """Greedy at ``lam`` for a dense-cost shard: (x, per-group usage, group dual value)."""
    n, m, kk = b.shape
    z = adjusted_dense(p, b, lam)
    x = np.empty((n, m), dtype=np.bool_)
    greedy_rows(z, masks, caps, x)
    use = np.zeros((n, kk))
    val = np.zeros(n)
    for i in range(n):
        v = 0.0
        for j in range(m):
            if x[i, j]:
                v += z[i, j]
                for k in range(kk):
                    use[i, k] += b[i, j, k]
        val[i] = v
    return x, use, val


@njit(cache=True, nogil=True)
def solve_shard_diag(p, d, lam, masks, caps):
    n, m = d.shape
    z = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            z[i, j] = p[i, j] - lam[j] * d[i, j]
    x = np.empty((n, m), dtype=np.bool_)
    greedy_rows(z, masks, caps, x)
    use = np.zeros((n, m))
    val = np.zeros(n)
    for i in range(n):
        v = 0.0
        for j in range(m):
            if x[i, j]:
                v += z[i, j]
                use[i, j] = d[i, j]
        val[i] = v
    return x, use, val


@njit(cache=True, nogil=True)
def _line_candidates(pk, bk, cand, prune):
    # Zero crossings and pairwise intersections of z_j(l) = pk[j] - l * bk[j],
    # plus 0; returns the count written to ``cand`` (unsorted).  With ``prune``
    # a crossing below the axis is skipped: both items are unselected there.
    m = pk.shape[0]
    c = 0
    cand[c] = 0.0
    c += 1
    for j in range(m):
        if bk[j] != 0.0:
            r = pk[j] / bk[j]
            if r >= 0.0:
                cand[c] = r
                c += 1
    for j in range(m):
        for jj in range(j + 1, m):
            db = bk[j] - bk[jj]
            if db != 0.0:
                r = (pk[j] - pk[jj]) / db
                if r >= 0.0:
                    if prune and pk[j] - r * bk[j] < -DEDUP_TOL:
                        continue
                    cand[c] = r
                    c += 1
    return c


@njit(cache=True, nogil=True)
def _sorted_unique_desc(vals, n, out):
    s = np.sort(vals[:n])
    u = 0
    for i in range(n - 1, -1, -1):
        v = s[i]
        if u == 0 or out[u - 1] - v > DEDUP_TOL:
            out[u] = v
            u += 1
    return u


@njit(cache=True, nogil=True)
def scd_map_dense(p, b, lam, masks, caps, ek, ev1, ev2, eg, g0):
    """Candidate emissions for every group and coordinate of a dense shard.

    For a candidate ``c`` the group is re-solved on the open interval just
    below ``c`` (midpoint to the next lower candidate); the emission records
    the resource unlocked by moving ``lambda_k`` below ``c``.  Emissions are
    written group-major, then by ``k``, then by decreasing ``c``.  Returns the
    number written, or ``-needed`` when the output buffers are too small.
    """
    n, m, kk = b.shape
    ncand = 1 + m + m * (m - 1) // 2
    cand = np.empty(ncand)
    uniq = np.empty(ncand)
    pk = np.empty(m)
    bk = np.empty(m)
    z = np.empty(m)
    x = np.empty(m, dtype=np.bool_)
    order = np.empty(m, dtype=np.int64)
    cap = ek.shape[0]
    out = 0
    for i in range(n):
        for k in range(kk):
            for j in range(m):
                s = 0.0
                for k2 in range(kk):
                    if k2 != k:
                        s += lam[k2] * b[i, j, k2]
                pk[j] = p[i, j] - s
                bk[j] = b[i, j, k]
            c = _line_candidates(pk, bk, cand, True)
            u = _sorted_unique_desc(cand, c, uniq)
            prev = 0.0
            for q in range(u):
                e = 0.5 * (uniq[q] + uniq[q + 1]) if q + 1 < u else uniq[q]
                for j in range(m):
                    z[j] = pk[j] - e * bk[j]
                _greedy_row(z, masks, caps, order, x)
                cur = 0.0
                for j in range(m):
                    if x[j]:
                        cur += bk[j]
                if cur > prev:
                    if out < cap:
                        ek[out] = k
                        ev1[out] = uniq[q]
                        ev2[out] = cur - prev
                        eg[out] = g0 + i
                    out += 1
                    prev = cur
    if out > cap:
        return -out
    return out
