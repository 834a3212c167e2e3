import numpy as np
import pytest

from kpsolve.model import DENSE, DIAG, Instance, LocalConstraintSet

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_laminar(rng: np.random.Generator, m: int) -> LocalConstraintSet:
    """Random hierarchical constraint family over ``m`` items (possibly empty)."""
    sets = []

    def split(items, depth):
        if len(items) == 0:
            return
        if rng.random() < 0.7:
            sets.append(list(items))
        if depth < 3 and len(items) > 1 and rng.random() < 0.8:
            cut = int(rng.integers(1, len(items)))
            split(items[:cut], depth + 1)
            split(items[cut:], depth + 1)

    split(list(rng.permutation(m)), 0)
    caps = [int(rng.integers(1, len(s) + 1)) for s in sets]
    return LocalConstraintSet.from_sets(sets, caps)


def random_instance(rng, n, m, k, mode=DENSE, local=None, budget_scale=0.3) -> Instance:
    profits = rng.random((n, m))
    costs = rng.random((n, m, k)) if mode == DENSE else rng.random((n, m))
    if local is None:
        local = LocalConstraintSet.from_sets([range(m)], [1])
    usage = costs.sum(axis=(0, 1)) if mode == DENSE else costs.sum(axis=0)
    return Instance(profits, costs, np.maximum(usage * budget_scale, 1e-3), local, mode)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["ACCEPTANCE_LINES", "random_laminar", "random_instance", "DENSE", "DIAG"]
