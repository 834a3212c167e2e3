"""Candidate values of one multiplier and the resource emissions SCD reduces over.

An emission ``(k, v1, v2)`` from a group means: once ``lambda_k`` drops below
``v1`` (others held fixed) the group consumes ``v2`` more of resource ``k``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .model import DIAG, GroupBlock, Instance, LocalConstraintSet
from .subproblem import as_lambda, solve_group_greedy

DEDUP_TOL = _kernels.DEDUP_TOL
GENERAL_MAX_ITEMS = 512


@dataclass(frozen=True)
class CandidateEmission:
    k: int
    v1: float
    v2: float


class Emissions(NamedTuple):
    """Column form of a shard's emissions, in group-major emission order."""

    k: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    group: np.ndarray

    @classmethod
    def empty(cls) -> Emissions:
        return cls(np.empty(0, np.int64), np.empty(0), np.empty(0), np.empty(0, np.int64))

    @classmethod
    def concat(cls, parts) -> Emissions:
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate(cols) for cols in zip(*parts)))

    def as_list(self) -> list[CandidateEmission]:
        return [CandidateEmission(int(k), float(a), float(b)) for k, a, b in zip(self.k, self.v1, self.v2)]


def _lines(g: GroupBlock, lam, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Intercepts and slopes of z_j(l) = p'_j - l * b_{j,k} with other multipliers fixed."""
    lam = as_lambda(lam)
    b = g.dense_costs()
    others = lam.copy()
    others[k] = 0.0
    return g.profits - b @ others, b[:, k].copy()


def _dedup_sorted(values: np.ndarray) -> np.ndarray:
    if values.size == 0:
        return values
    keep = np.ones(values.size, dtype=bool)
    last = values[0]
    for i in range(1, values.size):
        if values[i] - last <= DEDUP_TOL:
            keep[i] = False
        else:
            last = values[i]
    return values[keep]


def intersection_candidates(g: GroupBlock, lam, k: int) -> np.ndarray:
    """Non-negative zero crossings and pairwise intersections of the item lines, ascending."""
    pk, bk = _lines(g, lam, k)
    out = []
    nz = bk != 0
    roots = pk[nz] / bk[nz]
    out.append(roots[roots >= 0])
    if pk.size > 1:
        j, jj = np.triu_indices(pk.size, 1)
        db = bk[j] - bk[jj]
        ok = db != 0
        cross = (pk[j][ok] - pk[jj][ok]) / db[ok]
        out.append(cross[cross >= 0])
    return _dedup_sorted(np.sort(np.concatenate(out)))


def scd_map_general(g: GroupBlock, lam, k: int, lcs: LocalConstraintSet) -> list[CandidateEmission]:
    lam = as_lambda(lam)
    cand = np.concatenate(([0.0], intersection_candidates(g, lam, k)))
    cand = _dedup_sorted(np.sort(cand))[::-1]
    bk = g.dense_costs()[:, k]
    trial = lam.copy()
    prev = 0.0
    out = []
    for q, c in enumerate(cand):
        # usage on the open interval just below c
        trial[k] = 0.5 * (c + cand[q + 1]) if q + 1 < cand.size else c
        x = solve_group_greedy(g, trial, lcs)
        cur = float(bk[x].sum())
        if cur > prev:
            out.append(CandidateEmission(k, float(c), cur - prev))
            prev = cur
    return out


def quick_select(values, n: int) -> float:
    """n-th largest element (1-based, duplicates counted); 0 when ``n > len(values)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    arr = list(values)
    if not arr:
        raise ValueError("values must be non-empty")
    if n > len(arr):
        return 0.0
    target = n - 1  # index in descending order
    while True:
        pivot = arr[random.randrange(len(arr))]
        above = [v for v in arr if v > pivot]
        if target < len(above):
            arr = above
            continue
        same = sum(1 for v in arr if v == pivot)
        if target < len(above) + same:
            return pivot
        target -= len(above) + same
        arr = [v for v in arr if v < pivot]


def scd_map_sparse(g: GroupBlock, lam, q: int, stats: dict | None = None) -> list[CandidateEmission]:
    """Linear-time emissions for diag costs and a single ``sum_j x_j <= q`` constraint."""
    lam = as_lambda(lam)
    p, d = g.profits, g.costs if g.mode == DIAG else np.diag(g.costs)
    adjusted = np.maximum(p - lam * d, 0.0)
    qth = quick_select(adjusted, q)
    q1th = quick_select(adjusted, q + 1)
    out = []
    for k in range(p.size):
        pbar = q1th if adjusted[k] >= qth else qth
        if p[k] > pbar:
            if d[k] == 0:
                if stats is not None:
                    stats["zero_cost_skips"] = stats.get("zero_cost_skips", 0) + 1
                continue
            out.append(CandidateEmission(k, float((p[k] - pbar) / d[k]), float(d[k])))
    return out


# -- shard-level batch versions ----------------------------------------------


def sparse_capacity(inst: Instance) -> int | None:
    """``Q`` when the linear-time map applies, else None."""
    lcs = inst.local
    if inst.mode != DIAG or len(lcs) != 1:
        return None
    if len(lcs.sets[0]) != inst.num_items:
        return None
    return lcs.caps[0]


def emissions_sparse(inst: Instance, lo: int, hi: int, lam, q: int) -> tuple[Emissions, int]:
    """Batch form of ``scd_map_sparse``; also returns the zero-cost skip count."""
    lam = as_lambda(lam)
    p, d = inst.profits[lo:hi], inst.costs[lo:hi]
    kk = p.shape[1]
    adjusted = np.maximum(p - lam * d, 0.0)
    n = p.shape[0]
    if q < kk:
        part = -np.partition(-adjusted, (q - 1, q), axis=1)
        qth, q1th = part[:, q - 1], part[:, q]
    elif q == kk:
        qth, q1th = adjusted.min(axis=1), np.zeros(n)
    else:
        qth = q1th = np.zeros(n)
    pbar = np.where(adjusted >= qth[:, None], q1th[:, None], qth[:, None])
    hit = p > pbar
    skipped = int(np.count_nonzero(hit & (d == 0)))
    rows, ks = np.nonzero(hit & (d != 0))
    v2 = d[rows, ks]
    v1 = (p[rows, ks] - pbar[rows, ks]) / v2
    return Emissions(ks.astype(np.int64), v1, v2, rows.astype(np.int64) + lo), skipped


def emissions_general(inst: Instance, lo: int, hi: int, lam) -> Emissions:
    m, kk = inst.num_items, inst.num_global
    if m > GENERAL_MAX_ITEMS:
        raise ValueError(f"general candidate path supports M <= {GENERAL_MAX_ITEMS}, got {m}")
    lam = as_lambda(lam)
    masks, caps = inst.local.masks(m)
    b = inst.group_costs(lo, hi)
    p = inst.profits[lo:hi]
    n = hi - lo
    size = max(n * kk * (m + 1), 16)
    while True:
        ek = np.empty(size, np.int64)
        ev1 = np.empty(size)
        ev2 = np.empty(size)
        eg = np.empty(size, np.int64)
        got = _kernels.scd_map_dense(p, b, lam, masks, caps, ek, ev1, ev2, eg, lo)
        if got >= 0:
            return Emissions(ek[:got].copy(), ev1[:got].copy(), ev2[:got].copy(), eg[:got].copy())
        size = -got
