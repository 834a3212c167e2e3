"""Dual descent and synchronous coordinate descent over the shard engine.

Both solvers are bulk-synchronous loops: a parallel map over group shards at
the current multipliers, a deterministic reduce in global group order, and a
single-threaded multiplier update.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .candidates import DEDUP_TOL, Emissions, emissions_general, emissions_sparse, sparse_capacity
from .model import Assignment, Instance, Multipliers
from .subproblem import as_lambda, solve_shard

log = logging.getLogger(__name__)

DEFAULT_LAMBDA0 = 1.0
PLATEAU_RTOL = 1e-9
PLATEAU_STEPS = 3


class DivergenceError(RuntimeError):
    pass


@dataclass
class DDConfig:
    alpha: float = 1e-3
    max_iters: int = 100
    tol: float = 1e-6
    lambda0: float = DEFAULT_LAMBDA0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class SCDConfig:
    """``bucketing`` is the bucket width Delta (None = exact reduce);
    ``presolve`` is the sample size n (None = start from ``lambda0``)."""

    max_iters: int = 100
    tol: float = 1e-6
    bucketing: float | None = None
    presolve: int | None = None
    seed: int = 0
    lambda0: float = DEFAULT_LAMBDA0
    fast_path: bool = True
    # halvings of the synchronous step allowed while it raises the dual; 0 = plain SCD
    safeguard: int = 30

    def __post_init__(self):
        if self.safeguard < 0:
            raise ValueError("safeguard must be >= 0")
        if self.bucketing is not None and not self.bucketing > 0:
            raise ValueError("bucket width must be positive")
        if self.presolve is not None and self.presolve < 1:
            raise ValueError("presolve sample size must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class IterationRecord:
    t: int
    lam: np.ndarray
    dual: float
    primal: float
    usage: np.ndarray
    max_violation: float


@dataclass
class SolveReport:
    algorithm: str
    budgets: np.ndarray
    records: list[IterationRecord] = field(default_factory=list)
    final: Assignment | None = None
    raw_usage: np.ndarray | None = None  # before post-processing
    removed: int = 0
    delta: np.ndarray | None = None
    converged: bool = False
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def dual_bound(self) -> float:
        return min(r.dual for r in self.records)

    def trace_header(self) -> list[str]:
        k = self.budgets.size
        return ["iter", "dual", "primal", "max_violation_ratio"] + [f"lambda_{i + 1}" for i in range(k)]

    def trace_rows(self) -> list[list]:
        return [[r.t, r.dual, r.primal, r.max_violation, *r.lam.tolist()] for r in self.records]

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.trace_header())
            for row in self.trace_rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def violation_ratios(usage, budgets) -> np.ndarray:
    return np.maximum((np.asarray(usage) - budgets) / budgets, 0.0)


def max_violation(usage, budgets) -> float:
    return float(violation_ratios(usage, budgets).max())


# -- reduces ------------------------------------------------------------------


def exact_reduce(v1, v2, budget: float) -> float:
    """Smallest emitted threshold v with sum_{v1 >= v} v2 <= budget (0 if everything fits)."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.size == 0:
        return 0.0
    order = np.argsort(-v1, kind="stable")
    s1 = v1[order]
    cs = np.cumsum(v2[order])
    if cs[-1] <= budget:
        return 0.0
    run_end = np.empty(s1.size, dtype=bool)
    run_end[:-1] = s1[1:] != s1[:-1]
    run_end[-1] = True
    ok = np.flatnonzero(run_end & (cs <= budget))
    if ok.size == 0:
        # even the largest candidate alone overflows: price just above it
        return float(np.nextafter(s1[0], np.inf))
    return float(s1[ok[-1]])


def settle_below(v1, v: float) -> float:
    """Midpoint of the open interval just below threshold ``v``.

    The sum over ``v1 >= v`` is the usage anywhere strictly between ``v`` and
    the next lower emitted value; at ``v`` itself it hinges on exact ties.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    if v <= 0 or not np.any(v1 >= v):
        return v
    lower = v1[v1 < v - DEDUP_TOL]
    return 0.5 * (v + (float(lower.max()) if lower.size else 0.0))


def bucket_id(lam, lam_prev: float, delta: float):
    """Signed log2 bucket of ``lam`` around ``lam_prev``; bucket 0 spans |lam - lam_prev| < 2 delta."""
    d = np.asarray(lam, dtype=np.float64) - lam_prev
    with np.errstate(divide="ignore"):
        mag = np.floor(np.log2(np.abs(d) / delta))
    mag = np.where(d == 0, 0.0, np.maximum(mag, 0.0))
    out = (np.sign(d) * mag).astype(np.int64)
    return out if out.ndim else int(out)


def bucket_edges(bid: int, lam_prev: float, delta: float) -> tuple[float, float]:
    if bid == 0:
        lo, hi = lam_prev - 2 * delta, lam_prev + 2 * delta
    elif bid > 0:
        lo, hi = lam_prev + 2.0**bid * delta, lam_prev + 2.0 ** (bid + 1) * delta
    else:
        lo, hi = lam_prev - 2.0 ** (-bid + 1) * delta, lam_prev - 2.0 ** (-bid) * delta
    return max(lo, 0.0), max(hi, 0.0)


def bucketed_reduce(v1, v2, budget: float, lam_prev: float, delta: float) -> float:
    """Approximate threshold from per-bucket sums, interpolated inside the crossing bucket."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.size == 0:
        return 0.0
    ids = bucket_id(v1, lam_prev, delta)
    uniq, inv = np.unique(ids, return_inverse=True)
    sums = np.bincount(inv, weights=v2, minlength=uniq.size)
    # highest lambda first
    uniq, sums = uniq[::-1], sums[::-1]
    cs = np.cumsum(sums)
    if cs[-1] <= budget:
        return 0.0
    b = int(np.argmax(cs > budget))
    before = cs[b] - sums[b]
    lo, hi = bucket_edges(int(uniq[b]), lam_prev, delta)
    frac = (budget - before) / sums[b]
    return float(max(hi - frac * (hi - lo), 0.0))


def convergence_check(lam_history, dual_history=None, tol: float = 1e-6) -> bool:
    """Relative multiplier change below ``tol``, or a flat dual for several steps."""
    if len(lam_history) >= 2:
        cur = np.asarray(lam_history[-1], dtype=np.float64)
        prev = np.asarray(lam_history[-2], dtype=np.float64)
        if np.max(np.abs(cur - prev) / np.maximum(prev, 1.0)) <= tol:
            return True
    if dual_history is not None and len(dual_history) > PLATEAU_STEPS:
        d = np.asarray(dual_history[-(PLATEAU_STEPS + 1):], dtype=np.float64)
        scale = np.maximum(np.abs(d[:-1]), np.finfo(float).tiny)
        if np.all(np.abs(np.diff(d)) <= PLATEAU_RTOL * scale):
            return True
    return False


# -- evaluation at fixed multipliers -------------------------------------------


@dataclass
class _Eval:
    x: np.ndarray
    group_usage: np.ndarray
    group_value: np.ndarray
    usage: np.ndarray
    dual: float
    primal: float


def _plan(inst: Instance, workers, num_shards) -> engine.ShardPlan:
    return engine.ShardPlan.for_groups(inst.num_groups, workers, num_shards)


def _merge(parts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, us, vs = zip(*parts)
    return np.concatenate(xs), np.concatenate(us), np.concatenate(vs)


def _evaluate(inst: Instance, lam, x, group_usage, group_value) -> _Eval:
    usage = group_usage.sum(axis=0)
    with np.errstate(over="ignore", invalid="ignore"):
        dual = float(group_value.sum() + lam @ inst.budgets)
    primal = float(np.where(x, inst.profits, 0.0).sum())
    return _Eval(x, group_usage, group_value, usage, dual, primal)


def solve_at(inst: Instance, lam, plan: engine.ShardPlan | None = None) -> _Eval:
    lam = as_lambda(lam)
    plan = plan or _plan(inst, None, None)
    parts = engine.map_shards(plan, lambda lo, hi: solve_shard(inst, lo, hi, lam))
    return _evaluate(inst, lam, *_merge(parts))


def dual_value(inst: Instance, lam, plan: engine.ShardPlan | None = None) -> float:
    """Lagrangian dual objective; an upper bound on every feasible primal value."""
    return solve_at(inst, lam, plan).dual


# -- post-processing ------------------------------------------------------------


def _postprocess(inst: Instance, x, group_usage, group_value) -> tuple[np.ndarray, np.ndarray, int]:
    usage = group_usage.sum(axis=0)
    budgets = inst.budgets
    if np.all(usage <= budgets):
        return x, usage, 0
    order = np.argsort(group_value, kind="stable")
    left = usage - np.cumsum(group_usage[order], axis=0)
    fits = np.all(left <= budgets, axis=1)
    cut = int(np.argmax(fits)) + 1 if fits.any() else order.size
    had = x.any(axis=1)
    x = x.copy()
    while True:
        x[order[:cut]] = False
        kept = np.ones(x.shape[0], dtype=bool)
        kept[order[:cut]] = False
        usage = np.where(kept[:, None], group_usage, 0.0).sum(axis=0)
        if np.all(usage <= budgets) or cut >= order.size:
            # count only groups that actually lost items
            return x, usage, int(np.count_nonzero(had[order[:cut]]))
        cut += 1


def postprocess(inst: Instance, assignment: Assignment, lam) -> Assignment:
    """Zero whole groups, smallest adjusted group profit first, until every budget holds."""
    lam = as_lambda(lam)
    group_usage = inst.usage(assignment.x)
    value = np.where(assignment.x, inst.profits, 0.0).sum(axis=1) - group_usage @ lam
    x, usage, _ = _postprocess(inst, assignment.x, group_usage, value)
    return Assignment(x, usage)


def perturbation_slack(usage, budgets, lam) -> np.ndarray:
    """delta_k: overshoot where usage exceeds B_k, otherwise the slack of unpriced constraints."""
    usage = np.asarray(usage)
    over = usage - budgets
    return np.where(over > 0, over, np.where(np.asarray(lam) == 0, -over, 0.0))


# -- solvers -------------------------------------------------------------------


def _initial(inst: Instance, lambda0, default: float, resume_from) -> tuple[np.ndarray, int]:
    if resume_from is not None:
        # the stored multipliers are lambda^t; the next update produces t + 1
        m, t = engine.resume(resume_from)
        return m.lam, t
    if lambda0 is None:
        return np.full(inst.num_global, default), 0
    lam = as_lambda(lambda0)
    return np.broadcast_to(lam, (inst.num_global,)).astype(np.float64), 0


def _record(report: SolveReport, t: int, lam, ev: _Eval) -> None:
    if not math.isfinite(ev.dual):
        raise DivergenceError(f"dual value became {ev.dual} at iteration {t}; try a smaller step")
    report.records.append(
        IterationRecord(t, lam.copy(), ev.dual, ev.primal, ev.usage, max_violation(ev.usage, report.budgets))
    )


def _finish(inst, report, lam, ev, do_postprocess, t) -> tuple[Multipliers, Assignment, SolveReport]:
    report.raw_usage = ev.usage
    report.delta = perturbation_slack(ev.usage, inst.budgets, lam)
    if do_postprocess:
        x, usage, removed = _postprocess(inst, ev.x, ev.group_usage, ev.group_value)
    else:
        x, usage, removed = ev.x, ev.usage, 0
    report.final = Assignment(x, usage)
    report.removed = removed
    return Multipliers(lam, t), report.final, report


def dd_solve(
    inst: Instance,
    cfg: DDConfig | None = None,
    *,
    lambda0=None,
    workers: int | None = None,
    num_shards: int | None = None,
    postprocess: bool = True,
    checkpoint_path=None,
    resume_from=None,
) -> tuple[Multipliers, Assignment, SolveReport]:
    """Projected subgradient steps ``lambda <- max(0, lambda + alpha (R - B))``."""
    cfg = cfg or DDConfig()
    plan = _plan(inst, workers, num_shards)
    lam, t0 = _initial(inst, lambda0, cfg.lambda0, resume_from)
    report = SolveReport("dd", inst.budgets)
    lam_hist, dual_hist = [lam], []
    t = t0
    while True:
        ev = solve_at(inst, lam, plan)
        _record(report, t, lam, ev)
        if t - t0 >= cfg.max_iters or report.converged:
            break
        dual_hist.append(ev.dual)
        lam = np.maximum(lam + cfg.alpha * (ev.usage - inst.budgets), 0.0)
        lam_hist.append(lam)
        t += 1
        report.iterations = t - t0
        report.converged = convergence_check(lam_hist, dual_hist, cfg.tol)
        if checkpoint_path is not None:
            engine.checkpoint(lam, t, checkpoint_path)
    return _finish(inst, report, lam, ev, postprocess, t)


def _scd_map(inst: Instance, lam, q: int | None):
    if q is not None:
        return lambda lo, hi: emissions_sparse(inst, lo, hi, lam, q)
    return lambda lo, hi: (emissions_general(inst, lo, hi, lam), 0)


def _safeguarded_step(inst, plan, lam, ev, target, max_halvings):
    """Move toward ``target``; halve the step while the dual objective goes up.

    Every coordinate of ``target`` minimises the dual along its own axis, but
    moving all of them at once can overshoot when resources are coupled.
    """
    step = target
    new = solve_at(inst, step, plan)
    halvings = 0
    slack = 1e-12 * max(abs(ev.dual), 1.0)
    while new.dual > ev.dual + slack and halvings < max_halvings:
        halvings += 1
        step = lam + (target - lam) * 0.5**halvings
        new = solve_at(inst, step, plan)
    if new.dual > ev.dual + slack:
        return lam, ev, halvings
    return step, new, halvings


def scd_update(inst: Instance, lam, em: Emissions, bucketing: float | None = None) -> np.ndarray:
    """New multipliers from all emissions, every coordinate reduced independently."""
    new = np.zeros(inst.num_global)
    order = np.argsort(em.k, kind="stable")
    ks = em.k[order]
    starts = np.searchsorted(ks, np.arange(inst.num_global + 1))
    for k in range(inst.num_global):
        sel = order[starts[k]:starts[k + 1]]
        if bucketing is None:
            v = exact_reduce(em.v1[sel], em.v2[sel], inst.budgets[k])
            new[k] = settle_below(em.v1[sel], v)
        else:
            new[k] = bucketed_reduce(em.v1[sel], em.v2[sel], inst.budgets[k], lam[k], bucketing)
    return new


def scd_solve(
    inst: Instance,
    cfg: SCDConfig | None = None,
    *,
    lambda0=None,
    workers: int | None = None,
    num_shards: int | None = None,
    postprocess: bool = True,
    checkpoint_path=None,
    resume_from=None,
) -> tuple[Multipliers, Assignment, SolveReport]:
    cfg = cfg or SCDConfig()
    plan = _plan(inst, workers, num_shards)
    if cfg.presolve is not None and lambda0 is None and resume_from is None:
        lambda0 = presolve(inst, cfg.presolve, cfg.seed, cfg, workers=workers).lam
    lam, t0 = _initial(inst, lambda0, cfg.lambda0, resume_from)
    q = sparse_capacity(inst) if cfg.fast_path else None
    report = SolveReport("scd", inst.budgets)
    report.diagnostics = {"sparse_path": q is not None, "zero_cost_skips": 0, "presolve": cfg.presolve}
    lam_hist, dual_hist = [lam], []
    t = t0
    ev = solve_at(inst, lam, plan)
    while True:
        _record(report, t, lam, ev)
        if t - t0 >= cfg.max_iters or report.converged:
            break
        dual_hist.append(ev.dual)
        parts = engine.map_shards(plan, _scd_map(inst, lam, q))
        em = Emissions.concat(p[0] for p in parts)
        report.diagnostics["zero_cost_skips"] += sum(p[1] for p in parts)
        target = scd_update(inst, lam, em, cfg.bucketing)
        lam, ev, halvings = _safeguarded_step(inst, plan, lam, ev, target, cfg.safeguard)
        report.diagnostics["halvings"] = report.diagnostics.get("halvings", 0) + halvings
        lam_hist.append(lam)
        t += 1
        report.iterations = t - t0
        report.converged = convergence_check(lam_hist, dual_hist, cfg.tol)
        log.debug("scd iter %d dual %.6f primal %.6f lam %s", t, ev.dual, ev.primal, lam)
        if checkpoint_path is not None:
            engine.checkpoint(lam, t, checkpoint_path)
    return _finish(inst, report, lam, ev, postprocess, t)


def presolve(inst: Instance, n: int, rng_seed: int = 0, cfg: SCDConfig | None = None, *, workers=None) -> Multipliers:
    """Solve a uniform sample of ``n`` groups with budgets scaled by ``n / N``."""
    big_n = inst.num_groups
    if not 1 <= n <= big_n:
        raise ValueError(f"presolve sample size must lie in [1, {big_n}], got {n}")
    rng = np.random.default_rng(rng_seed)
    idx = np.sort(rng.choice(big_n, size=n, replace=False))
    sample = inst.subset(idx).with_budgets(inst.budgets * (n / big_n))
    sub_cfg = replace(cfg or SCDConfig(), presolve=None)
    lam, _, _ = scd_solve(sample, sub_cfg, workers=workers, postprocess=False)
    return lam
