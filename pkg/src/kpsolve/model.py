"""Problem data model, hierarchical local constraints and the ``KPI v1`` text format.

Items, groups and constraints are 0-based everywhere in the Python API.  The
on-disk format is 1-based for item and group ids.
"""

from __future__ import annotations

import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

DENSE = "dense"
DIAG = "diag"
COST_MODES = (DENSE, DIAG)


class ModelError(ValueError):
    """Base class for instance-level problems."""


class HierarchyViolation(ModelError):
    def __init__(self, first, second):
        self.pair = (tuple(sorted(first)), tuple(sorted(second)))
        super().__init__(
            f"local constraint sets {set(self.pair[0])} and {set(self.pair[1])} "
            "overlap without nesting"
        )


class BudgetError(ModelError):
    def __init__(self, k: int, value: float):
        self.k = k  # 1-based, as in the file format
        self.value = value
        super().__init__(f"budget B_{k} = {value!r} must be strictly positive")


class ParseError(ModelError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class LocalConstraintSet:
    """Per-group cardinality caps ``sum_{j in S_l} x_j <= C_l``.

    ``topo_order`` lists constraint indices so that every set comes before
    any strict superset.  Use :meth:`from_sets` to build one; it validates the
    hierarchy and derives the order.
    """

    sets: tuple[tuple[int, ...], ...]
    caps: tuple[int, ...]
    topo_order: tuple[int, ...]
    parent: tuple[int, ...]  # -1 for roots

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], caps: Iterable[int]) -> LocalConstraintSet:
        sets = tuple(tuple(sorted(set(int(j) for j in s))) for s in sets)
        caps = tuple(int(c) for c in caps)
        if len(sets) != len(caps):
            raise ModelError(f"{len(sets)} item sets but {len(caps)} capacities")
        for l, (s, c) in enumerate(zip(sets, caps)):
            if not s:
                raise ModelError(f"local constraint {l + 1} has an empty item set")
            if c < 1:
                raise ModelError(f"local constraint {l + 1}: capacity {c} must be >= 1")
        parent = _laminar_parents(sets)
        return cls(sets, caps, _post_order(parent), tuple(parent))

    @classmethod
    def empty(cls) -> LocalConstraintSet:
        return cls((), (), (), ())

    def __len__(self) -> int:
        return len(self.sets)

    def ordered(self) -> list[tuple[tuple[int, ...], int]]:
        """(items, cap) pairs in topological order."""
        return [(self.sets[l], self.caps[l]) for l in self.topo_order]

    def masks(self, num_items: int) -> tuple[np.ndarray, np.ndarray]:
        """Boolean ``(L, M)`` membership rows and caps, both in topological order."""
        mask = np.zeros((len(self.sets), num_items), dtype=np.bool_)
        for row, l in enumerate(self.topo_order):
            mask[row, list(self.sets[l])] = True
        caps = np.array([self.caps[l] for l in self.topo_order], dtype=np.int64)
        return mask, caps

    def is_satisfied(self, x) -> bool:
        x = np.asarray(x, dtype=bool)
        return all(int(x[list(s)].sum()) <= c for s, c in zip(self.sets, self.caps))

    def max_items(self, num_items: int) -> int:
        """Largest number of items any group can select."""
        mask, caps = self.masks(num_items)
        best = np.ones(num_items, dtype=bool)
        # a greedy pass with all-equal profits attains the laminar rank
        x = best.copy()
        for row in range(len(caps)):
            idx = np.flatnonzero(x & mask[row])
            x[idx[caps[row]:]] = False
        return int(x.sum())


def _laminar_parents(sets: Sequence[tuple[int, ...]]) -> list[int]:
    """Immediate parent of every set; raises on a non-nested overlap.

    Sets are visited largest first while each item remembers the smallest set
    seen so far that holds it.  A laminar family requires all items of the
    current set to share one such owner, which is then its parent.
    """
    order = sorted(range(len(sets)), key=lambda l: (-len(sets[l]), l))
    owner: dict[int, int] = {}
    parent = [-1] * len(sets)
    members = [frozenset(s) for s in sets]
    for l in order:
        owners = {owner.get(j, -1) for j in sets[l]}
        if len(owners) > 1:
            for o in owners:
                if o >= 0 and not members[l] <= members[o]:
                    raise HierarchyViolation(sets[l], sets[o])
            # unreachable for a consistent owner map
            raise ModelError(f"local constraint set {set(sets[l])} is not nested")
        (p,) = owners
        parent[l] = p
        for j in sets[l]:
            owner[j] = l
    return parent


def _post_order(parent: Sequence[int]) -> tuple[int, ...]:
    children: list[list[int]] = [[] for _ in parent]
    roots = []
    for l, p in enumerate(parent):
        (children[p] if p >= 0 else roots).append(l)
    out: list[int] = []
    stack = [(r, False) for r in reversed(roots)]
    while stack:
        node, done = stack.pop()
        if done:
            out.append(node)
            continue
        stack.append((node, True))
        stack.extend((c, False) for c in reversed(children[node]))
    return tuple(out)


@dataclass(frozen=True)
class GroupBlock:
    """One group's slice of an instance.

    ``costs`` is ``(M, K)`` in dense mode and the length-``M`` diagonal in
    diag mode.
    """

    group_id: int
    profits: np.ndarray
    costs: np.ndarray
    mode: str = DENSE

    @property
    def num_items(self) -> int:
        return self.profits.shape[0]

    def dense_costs(self) -> np.ndarray:
        if self.mode == DIAG:
            return np.diag(self.costs)
        return self.costs


class _GroupView(Sequence):
    def __init__(self, inst: Instance):
        self._inst = inst

    def __len__(self) -> int:
        return self._inst.num_groups

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        inst = self._inst
        if i < 0:
            i += inst.num_groups
        if not 0 <= i < inst.num_groups:
            raise IndexError(i)
        return GroupBlock(i, inst.profits[i], inst.costs[i], inst.mode)


@dataclass(frozen=True, eq=False)
class Instance:
    """A full knapsack instance stored as stacked per-group arrays.

    ``profits`` is ``(N, M)``; ``costs`` is ``(N, M, K)`` (dense) or ``(N, M)``
    (diag, requires ``M == K``).
    """

    profits: np.ndarray
    costs: np.ndarray
    budgets: np.ndarray
    local: LocalConstraintSet = field(default_factory=LocalConstraintSet.empty)
    mode: str = DENSE

    def __post_init__(self):
        object.__setattr__(self, "profits", np.ascontiguousarray(self.profits, dtype=np.float64))
        object.__setattr__(self, "costs", np.ascontiguousarray(self.costs, dtype=np.float64))
        object.__setattr__(self, "budgets", np.ascontiguousarray(self.budgets, dtype=np.float64))

    @property
    def num_groups(self) -> int:
        return self.profits.shape[0]

    @property
    def num_items(self) -> int:
        return self.profits.shape[1]

    @property
    def num_global(self) -> int:
        return self.budgets.shape[0]

    @property
    def groups(self) -> Sequence[GroupBlock]:
        return _GroupView(self)

    def group_costs(self, lo: int, hi: int) -> np.ndarray:
        """Dense ``(hi - lo, M, K)`` cost block for a contiguous range of groups."""
        if self.mode == DENSE:
            return self.costs[lo:hi]
        n, m = hi - lo, self.num_items
        out = np.zeros((n, m, m))
        idx = np.arange(m)
        out[:, idx, idx] = self.costs[lo:hi]
        return out

    def usage(self, x) -> np.ndarray:
        """Per-group usage ``(N, K)`` of an ``(N, M)`` selection."""
        x = np.asarray(x, dtype=np.float64)
        if self.mode == DIAG:
            return x * self.costs
        return np.einsum("ij,ijk->ik", x, self.costs)

    def subset(self, groups) -> Instance:
        """Instance restricted to ``groups`` (budgets unchanged)."""
        groups = np.asarray(groups)
        return Instance(self.profits[groups], self.costs[groups], self.budgets, self.local, self.mode)

    def with_budgets(self, budgets) -> Instance:
        return Instance(self.profits, self.costs, budgets, self.local, self.mode)


@dataclass
class Multipliers:
    """Dual prices, one per global constraint, tagged with the iteration that produced them."""

    lam: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if np.any(self.lam < 0):
            raise ValueError("multipliers must be non-negative")


@dataclass
class Assignment:
    """Binary ``(N, M)`` decisions plus aggregate usage ``R`` (length ``K``)."""

    x: np.ndarray
    usage: np.ndarray

    @classmethod
    def from_x(cls, inst: Instance, x) -> Assignment:
        x = np.asarray(x, dtype=bool)
        return cls(x, inst.usage(x).sum(axis=0))

    def primal_value(self, inst: Instance) -> float:
        return float((inst.profits * self.x).sum())

    def is_feasible(self, inst: Instance) -> bool:
        if np.any(self.usage > inst.budgets):
            return False
        mask, caps = inst.local.masks(inst.num_items)
        counts = self.x.astype(np.int64) @ mask.T.astype(np.int64)
        return bool(np.all(counts <= caps))


@dataclass
class ValidationReport:
    issues: list[ModelError] = field(default_factory=list)
    topo_order: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_instance(inst: Instance, raise_on_error: bool = True) -> ValidationReport:
    """Check shapes, signs, budgets and the local-constraint hierarchy.

    All problems are collected in the report; with ``raise_on_error`` the
    first one is raised after the scan.
    """
    report = ValidationReport()
    issues = report.issues
    n, m, k = inst.num_groups, inst.num_items, inst.num_global
    if n < 1:
        issues.append(ModelError("N must be >= 1"))
    if m < 1:
        issues.append(ModelError("M must be >= 1"))
    if k < 1:
        issues.append(ModelError("K must be >= 1"))
    for kk, b in enumerate(inst.budgets):
        if not (np.isfinite(b) and b > 0):
            issues.append(BudgetError(kk + 1, float(b)))
    if inst.mode not in COST_MODES:
        issues.append(ModelError(f"unknown cost mode {inst.mode!r}"))
    elif inst.mode == DENSE and inst.costs.shape != (n, m, k):
        issues.append(ModelError(f"dense costs have shape {inst.costs.shape}, expected {(n, m, k)}"))
    elif inst.mode == DIAG:
        if m != k:
            issues.append(ModelError(f"diag cost mode requires M == K (got M={m}, K={k})"))
        if inst.costs.shape != (n, m):
            issues.append(ModelError(f"diag costs have shape {inst.costs.shape}, expected {(n, m)}"))
    if not np.all(np.isfinite(inst.profits)):
        issues.append(ModelError("profits must be finite"))
    bad = np.argwhere(inst.profits < 0)
    if bad.size:
        i, j = bad[0]
        issues.append(ModelError(f"negative profit at group {i}, item {j}"))
    if not np.all(np.isfinite(inst.costs)):
        issues.append(ModelError("costs must be finite"))
    bad = np.argwhere(inst.costs < 0)
    if bad.size:
        issues.append(ModelError(f"negative cost at index {tuple(int(v) for v in bad[0])}"))

    lcs = inst.local
    for l, s in enumerate(lcs.sets):
        if s and (s[0] < 0 or s[-1] >= m):
            issues.append(ModelError(f"local constraint {l + 1} references items outside [0, {m})"))
    try:
        rebuilt = LocalConstraintSet.from_sets(lcs.sets, lcs.caps)
    except ModelError as exc:
        issues.append(exc)
    else:
        if rebuilt.topo_order != lcs.topo_order and not _is_topological(lcs):
            issues.append(ModelError("topo_order is not a topological order of the containment DAG"))
        report.topo_order = lcs.topo_order
    if raise_on_error and issues:
        raise issues[0]
    return report


def _is_topological(lcs: LocalConstraintSet) -> bool:
    if sorted(lcs.topo_order) != list(range(len(lcs.sets))):
        return False
    pos = {l: i for i, l in enumerate(lcs.topo_order)}
    members = [frozenset(s) for s in lcs.sets]
    for a in range(len(members)):
        for b in range(len(members)):
            if members[a] < members[b] and pos[a] > pos[b]:
                return False
    return True


# -- text format -------------------------------------------------------------

MAGIC = "KPI"
VERSION = "v1"


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_instance(inst: Instance, path: str | os.PathLike) -> None:
    n, m, k = inst.num_groups, inst.num_items, inst.num_global
    with open(path, "w") as fh:
        fh.write(f"{MAGIC} {VERSION} {n} {m} {k} {len(inst.local)} {inst.mode}\n")
        fh.write("B " + _fmt(inst.budgets) + "\n")
        for s, c in zip(inst.local.sets, inst.local.caps):
            fh.write(f"S {c} {len(s)} " + " ".join(str(j + 1) for j in s) + "\n")
        for i in range(n):
            fh.write(_fmt(inst.profits[i]) + "\n")
            if inst.mode == DENSE:
                fh.write("\n".join(_fmt(row) for row in inst.costs[i]) + "\n")
            else:
                fh.write(_fmt(inst.costs[i]) + "\n")


def _floats(tokens: list[str], expected: int, lineno: int, what: str) -> list[float]:
    if len(tokens) != expected:
        raise ParseError(f"{what}: expected {expected} values, found {len(tokens)}", lineno)
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"{what}: {exc}", lineno) from None


def _int(token: str, lineno: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what}: {token!r} is not an integer", lineno) from None


def load_instance(path: str | os.PathLike, validate: bool = True) -> Instance:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].split()
    if len(head) != 7 or head[0] != MAGIC:
        raise ParseError(f"header must be '{MAGIC} {VERSION} N M K L mode'", 1)
    if head[1] != VERSION:
        raise ParseError(f"unsupported version {head[1]!r}", 1)
    n, m, k, nl = (_int(t, 1, name) for t, name in zip(head[2:6], "NMKL"))
    mode = head[6]
    if n < 1:
        raise ParseError("N must be ≥ 1", 1)
    if m < 1 or k < 1 or nl < 0:
        raise ParseError("M and K must be ≥ 1 and L ≥ 0", 1)
    if mode not in COST_MODES:
        raise ParseError(f"mode must be one of {COST_MODES}, got {mode!r}", 1)

    lineno = 1

    def next_line() -> list[str]:
        nonlocal lineno
        lineno += 1
        if lineno > len(lines):
            raise ParseError("unexpected end of file", lineno)
        return lines[lineno - 1].split()

    tok = next_line()
    if not tok or tok[0] != "B":
        raise ParseError("expected budget line starting with 'B'", lineno)
    budgets = _floats(tok[1:], k, lineno, "budgets")

    sets, caps = [], []
    for _ in range(nl):
        tok = next_line()
        if len(tok) < 3 or tok[0] != "S":
            raise ParseError("expected 'S capacity item_count items...'", lineno)
        cap = _int(tok[1], lineno, "capacity")
        count = _int(tok[2], lineno, "item_count")
        if len(tok) - 3 != count:
            raise ParseError(f"item_count {count} but {len(tok) - 3} items listed", lineno)
        items = [_int(t, lineno, "item id") - 1 for t in tok[3:]]
        if any(j < 0 or j >= m for j in items):
            raise ParseError(f"item ids must lie in 1..{m}", lineno)
        sets.append(items)
        caps.append(cap)

    profits = np.empty((n, m))
    costs = np.empty((n, m, k)) if mode == DENSE else np.empty((n, m))
    for i in range(n):
        profits[i] = _floats(next_line(), m, lineno, f"profits of group {i + 1}")
        if mode == DENSE:
            for j in range(m):
                costs[i, j] = _floats(next_line(), k, lineno, f"costs of group {i + 1} item {j + 1}")
        else:
            costs[i] = _floats(next_line(), m, lineno, f"diagonal costs of group {i + 1}")
    if any(line.strip() for line in lines[lineno:]):
        raise ParseError("trailing data after last group", lineno + 1)

    try:
        local = LocalConstraintSet.from_sets(sets, caps)
    except ModelError as exc:
        raise ParseError(str(exc)) from exc
    inst = Instance(profits, costs, np.array(budgets), local, mode)
    if validate:
        validate_instance(inst)
    return inst


def instances_equal(a: Instance, b: Instance) -> bool:
    """Structural, bit-exact equality."""
    return (
        a.mode == b.mode
        and a.local == b.local
        and np.array_equal(a.profits, b.profits)
        and np.array_equal(a.costs, b.costs)
        and np.array_equal(a.budgets, b.budgets)
    )
