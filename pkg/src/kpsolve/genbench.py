"""Synthetic instances, exact tiny-instance optimum, and solution metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np

from .model import DENSE, DIAG, Assignment, Instance, LocalConstraintSet, validate_instance
from .solver import dual_value, violation_ratios
from .subproblem import OracleTooLarge

GEN_BLOCK = 65536
BRUTE_FORCE_MAX = 24
COST_LAWS = ("uniform01", "mixed")


def local_pattern(pattern: str, m: int) -> LocalConstraintSet:
    """``1``, ``2`` or ``Q``: one cap over all items; ``2,2,3``: two halves capped at 2 inside a cap of 3."""
    caps = [int(c) for c in str(pattern).replace("[", "").replace("]", "").split(",") if c.strip()]
    if len(caps) == 1:
        return LocalConstraintSet.from_sets([range(m)], caps)
    if len(caps) == 3:
        if m < 2:
            raise ValueError("the hierarchical pattern needs M >= 2")
        half = m // 2
        return LocalConstraintSet.from_sets([range(half), range(half, m), range(m)], caps)
    raise ValueError(f"unsupported local pattern {pattern!r}")


@dataclass
class GenSpec:
    n: int
    m: int
    k: int
    cost_mode: str = DENSE
    cost_law: str = "uniform01"
    local: str = "1"
    tightness: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "m", "k"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cost_mode not in (DENSE, DIAG):
            raise ValueError(f"cost_mode must be dense or diag, got {self.cost_mode!r}")
        if self.cost_mode == DIAG and self.m != self.k:
            raise ValueError("diag cost mode requires m == k")
        if self.cost_law not in COST_LAWS:
            raise ValueError(f"cost_law must be one of {COST_LAWS}")
        if not self.tightness > 0:
            raise ValueError("tightness must be positive")

    @classmethod
    def from_text(cls, text: str) -> GenSpec:
        """Parse ``key=value`` lines (``#`` comments allowed)."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or key not in types:
                raise ValueError(f"line {lineno}: expected one of {sorted(types)} as key=value")
            conv = {"int": int, "float": float}.get(types[key], str)
            kwargs[key] = conv(value)
        return cls(**kwargs)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def mean_cost(law: str) -> float:
    return 0.5 if law == "uniform01" else 0.5 * 0.5 + 0.5 * 5.0


def budget_formula(spec: GenSpec, cap: int) -> float:
    """Budget shared by every k: ``tightness`` times the usage of ``cap`` items per group.

    In dense mode each chosen item draws on every knapsack, so the unpriced
    demand per k is N * cap * mean_cost; in diag mode it spreads over the K
    knapsacks.
    """
    demand = spec.n * cap * mean_cost(spec.cost_law)
    if spec.cost_mode == DIAG:
        demand /= spec.k
    return spec.tightness * demand


def generate(spec: GenSpec) -> Instance:
    """Uniform [0, 1] profits; costs per ``cost_law``; one budget for all k.

    Groups are drawn in fixed blocks of ``GEN_BLOCK`` with independent
    substreams, so the output depends on the seed alone.
    """
    n, m, k = spec.n, spec.m, spec.k
    lcs = local_pattern(spec.local, m)
    profits = np.empty((n, m))
    costs = np.empty((n, m, k)) if spec.cost_mode == DENSE else np.empty((n, m))
    n_blocks = -(-n // GEN_BLOCK)
    streams = np.random.SeedSequence(spec.seed).spawn(n_blocks)
    for blk, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        lo, hi = blk * GEN_BLOCK, min(n, (blk + 1) * GEN_BLOCK)
        profits[lo:hi] = rng.random((hi - lo, m))
        shape = costs[lo:hi].shape
        c = rng.random(shape)
        if spec.cost_law == "mixed":
            c *= np.where(rng.random(shape) < 0.5, 1.0, 10.0)
        costs[lo:hi] = c
    cap = lcs.caps[0] if spec.cost_mode == DIAG else lcs.max_items(m)
    budgets = np.full(k, budget_formula(spec, cap))
    inst = Instance(profits, costs, budgets, lcs, spec.cost_mode)
    validate_instance(inst)
    return inst


def _group_options(inst: Instance, i: int):
    """Every locally feasible selection of group ``i`` as (profit, usage, x), best profit first."""
    m = inst.num_items
    b = inst.groups[i].dense_costs()
    p = inst.profits[i]
    opts = []
    for bits in range(1 << m):
        x = np.array([(bits >> j) & 1 for j in range(m)], dtype=bool)
        if inst.local.is_satisfied(x):
            opts.append((float(p[x].sum()), b[x].sum(axis=0), x))
    opts.sort(key=lambda o: -o[0])
    return opts


def brute_force_optimum(inst: Instance) -> tuple[float, Assignment]:
    """Exact optimum by depth-first enumeration over groups.

    Branches whose used budget already overflows, or whose remaining best
    case cannot beat the incumbent, are cut; neither cut discards an optimum.
    """
    n, m = inst.num_groups, inst.num_items
    if n * m > BRUTE_FORCE_MAX:
        raise OracleTooLarge(f"brute force needs N*M <= {BRUTE_FORCE_MAX}, got {n * m}")
    options = [_group_options(inst, i) for i in range(n)]
    best_rest = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        best_rest[i] = best_rest[i + 1] + options[i][0][0]
    budgets = inst.budgets
    best_val = -1.0
    best_pick: list[int] = []
    pick = [0] * n

    def dfs(i: int, value: float, used: np.ndarray):
        nonlocal best_val, best_pick
        if value + best_rest[i] <= best_val:
            return
        if i == n:
            best_val, best_pick = value, pick.copy()
            return
        for o, (pv, uv, _) in enumerate(options[i]):
            nxt = used + uv
            if np.all(nxt <= budgets):
                pick[i] = o
                dfs(i + 1, value + pv, nxt)

    dfs(0, 0.0, np.zeros(inst.num_global))
    x = np.array([options[i][best_pick[i]][2] for i in range(n)], dtype=bool).reshape(n, m)
    return best_val, Assignment.from_x(inst, x)


@dataclass
class Metrics:
    primal: float
    dual_bound: float
    duality_gap: float
    optimality_ratio: float
    violation: np.ndarray
    max_violation: float

    def as_row(self) -> dict:
        return {
            "primal": self.primal,
            "dual_bound": self.dual_bound,
            "duality_gap": self.duality_gap,
            "optimality_ratio": self.optimality_ratio,
            "max_violation_ratio": self.max_violation,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.as_row()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(float(v)) for k, v in row.items()})
        return buf.getvalue()

    def table(self) -> str:
        rows = [(k.replace("_", " "), f"{v:.6g}") for k, v in self.as_row().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def evaluate(inst: Instance, assignment: Assignment, lam, dual_bound: float | None = None) -> Metrics:
    """Metrics of ``assignment``; the upper bound is the smaller of dual_value(lam) and ``dual_bound``."""
    bound = dual_value(inst, lam)
    if dual_bound is not None:
        bound = min(bound, dual_bound)
    primal = assignment.primal_value(inst)
    usage = inst.usage(assignment.x).sum(axis=0)
    viol = violation_ratios(usage, inst.budgets)
    ratio = primal / bound if bound > 0 else (1.0 if primal == bound else 0.0)
    return Metrics(primal, bound, bound - primal, ratio, viol, float(viol.max()))
