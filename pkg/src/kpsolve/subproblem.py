"""Per-group subproblem: maximise sum_j (p_j - lambda . b_j) x_j under local caps."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import DIAG, GroupBlock, Instance, LocalConstraintSet


class OracleTooLarge(ValueError):
    pass


EXHAUSTIVE_MAX_ITEMS = 20


def as_lambda(lam) -> np.ndarray:
    """Accept a ``Multipliers`` or any array-like of non-negative reals."""
    lam = getattr(lam, "lam", lam)
    return np.asarray(lam, dtype=np.float64)


@dataclass(frozen=True)
class AdjustedProfits:
    ptilde: np.ndarray
    order: np.ndarray  # item indices, ptilde non-increasing, ties by index


def adjusted_profits(g: GroupBlock, lam) -> AdjustedProfits:
    lam = as_lambda(lam)
    if g.mode == DIAG:
        ptilde = g.profits - lam * g.costs
    else:
        ptilde = g.profits - g.costs @ lam
    order = np.argsort(-ptilde, kind="stable")
    return AdjustedProfits(ptilde, order)


def greedy_from_ptilde(ptilde, order, lcs: LocalConstraintSet) -> np.ndarray:
    x = np.asarray(ptilde) > 0
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    for items, cap in lcs.ordered():
        items = np.asarray(items)
        chosen = items[x[items]]
        if chosen.size > cap:
            chosen = chosen[np.argsort(rank[chosen])]
            x[chosen[cap:]] = False
    return x


def solve_group_greedy(g: GroupBlock, lam, lcs: LocalConstraintSet) -> np.ndarray:
    """Optimal selection for hierarchical ``lcs``.

    Start from every item with positive adjusted profit, then walk the
    constraints children-first and keep only the ``cap`` best survivors of
    each set.
    """
    a = adjusted_profits(g, lam)
    return greedy_from_ptilde(a.ptilde, a.order, lcs)


def solve_group_exhaustive(g: GroupBlock, lam, lcs: LocalConstraintSet) -> np.ndarray:
    """Brute-force maximiser over all 2^M selections; ties go to the lexicographically smallest x."""
    m = g.num_items
    if m > EXHAUSTIVE_MAX_ITEMS:
        raise OracleTooLarge(f"exhaustive subproblem needs M <= {EXHAUSTIVE_MAX_ITEMS}, got {m}")
    ptilde = adjusted_profits(g, lam).ptilde
    best_val, best = None, None
    # itertools.product over (0, 1) walks x in lexicographic order
    for bits in itertools.product((0, 1), repeat=m):
        x = np.array(bits, dtype=bool)
        if not lcs.is_satisfied(x):
            continue
        val = float(ptilde[x].sum())
        if best_val is None or val > best_val:
            best_val, best = val, x
    return best


def subproblem_objective(g: GroupBlock, lam, x) -> float:
    return float(adjusted_profits(g, lam).ptilde[np.asarray(x, dtype=bool)].sum())


def group_dual_value(g: GroupBlock, lam, x) -> float:
    x = np.asarray(x, dtype=bool)
    lam = as_lambda(lam)
    usage = g.dense_costs()[x].sum(axis=0)
    return float(g.profits[x].sum() - lam @ usage)


def solve_shard(inst: Instance, lo: int, hi: int, lam):
    """Greedy over groups ``lo:hi``: ``(x, usage (n, K), group dual values)``."""
    lam = as_lambda(lam)
    masks, caps = inst.local.masks(inst.num_items)
    if inst.mode == DIAG:
        return _kernels.solve_shard_diag(inst.profits[lo:hi], inst.costs[lo:hi], lam, masks, caps)
    return _kernels.solve_shard_dense(inst.profits[lo:hi], inst.costs[lo:hi], lam, masks, caps)


def greedy_batch(ptilde, lcs: LocalConstraintSet) -> np.ndarray:
    """Greedy selections for a stack of adjusted-profit rows."""
    ptilde = np.ascontiguousarray(ptilde, dtype=np.float64)
    masks, caps = lcs.masks(ptilde.shape[1])
    x = np.empty(ptilde.shape, dtype=np.bool_)
    _kernels.greedy_rows(ptilde, masks, caps, x)
    return x
