import itertools
from pathlib import Path

import numpy as np
import pytest

from kpsolve.genbench import (
    GenSpec,
    brute_force_optimum,
    evaluate,
    generate,
    local_pattern,
    mean_cost,
)
from kpsolve.model import DENSE, DIAG, Assignment, Instance, LocalConstraintSet, instances_equal
from kpsolve.solver import SCDConfig, dual_value, scd_solve
from kpsolve.subproblem import OracleTooLarge

FIXTURES = Path(__file__).parent / "fixtures"


def enumerate_optimum(inst):
    """Independent oracle: every binary x, no pruning."""
    n, m = inst.num_groups, inst.num_items
    best = 0.0
    for bits in itertools.product([0, 1], repeat=n * m):
        x = np.array(bits, dtype=bool).reshape(n, m)
        if all(inst.local.is_satisfied(r) for r in x) and np.all(inst.usage(x).sum(axis=0) <= inst.budgets):
            best = max(best, float(inst.profits[x].sum()))
    return best


def test_same_seed_same_instance():
    spec = GenSpec(n=300, m=5, k=3, cost_law="mixed", local="2,2,3", seed=9)
    assert instances_equal(generate(spec), generate(spec))
    assert not instances_equal(generate(spec), generate(GenSpec(n=300, m=5, k=3, cost_law="mixed", local="2,2,3", seed=10)))


def test_hierarchical_pattern():
    lcs = local_pattern("2,2,3", 10)
    assert lcs.sets == (tuple(range(5)), tuple(range(5, 10)), tuple(range(10)))
    assert lcs.caps == (2, 2, 3)
    assert lcs.parent == (2, 2, -1)
    assert local_pattern("[1]", 4).caps == (1,)


def test_budget_is_half_of_unpriced_demand():
    # dense: every chosen item draws on every knapsack
    inst = generate(GenSpec(n=100, m=10, k=4, local="2,2,3", cost_law="mixed", seed=0))
    assert inst.budgets.tolist() == [0.5 * 100 * 3 * 2.75] * 4
    # diag: item j only draws on knapsack j
    inst = generate(GenSpec(n=100, m=5, k=5, cost_mode=DIAG, local="2", seed=0))
    assert inst.budgets.tolist() == pytest.approx([0.5 * 100 * 2 * 0.5 / 5] * 5)


def test_cost_laws_empirical_mean():
    inst = generate(GenSpec(n=2000, m=10, k=1, seed=1))
    c = inst.costs.ravel()
    assert abs(c.mean() - 0.5) <= 3 * np.sqrt(1 / 12 / c.size)
    assert c.min() >= 0 and c.max() <= 1
    mixed = generate(GenSpec(n=2000, m=10, k=1, cost_law="mixed", seed=1)).costs.ravel()
    assert mixed.max() > 1 and mixed.max() <= 10
    sd = np.sqrt(np.mean(mixed**2) - mean_cost("mixed") ** 2)
    assert abs(mixed.mean() - mean_cost("mixed")) <= 3 * sd / np.sqrt(mixed.size)
    assert 0.45 < np.mean(mixed <= 1) < 0.6


def test_loose_budgets_price_nothing():
    inst = generate(GenSpec(n=200, m=6, k=3, local="2", tightness=1e6, seed=2))
    lam, final, _ = scd_solve(inst, SCDConfig())
    assert np.all(lam.lam == 0)
    top2 = np.sort(inst.profits, axis=1)[:, -2:].sum()
    assert final.primal_value(inst) == pytest.approx(top2)


def test_spec_text_round_trip():
    spec = GenSpec(n=5, m=3, k=3, cost_mode=DIAG, cost_law="mixed", local="2", tightness=0.7, seed=3)
    assert GenSpec.from_text(spec.to_text()) == spec
    assert GenSpec.from_text("# hi\nn = 4\nm=2\nk=1\n").n == 4
    with pytest.raises(ValueError):
        GenSpec.from_text("bogus=1\n")


@pytest.mark.parametrize("kw", [dict(n=0, m=1, k=1), dict(n=1, m=3, k=2, cost_mode=DIAG), dict(n=1, m=1, k=1, cost_law="normal")])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        GenSpec(**kw)


def test_brute_force_examples():
    inst = Instance(np.array([[1.0, 1.0]]), np.array([[[1.0], [1.0]]]), np.array([1.0]), LocalConstraintSet.from_sets([[0, 1]], [1]))
    assert brute_force_optimum(inst)[0] == 1.0
    loose = Instance(np.array([[0.3, 0.4], [0.1, 0.2]]), np.ones((2, 2, 1)), np.array([10.0]))
    assert brute_force_optimum(loose)[0] == pytest.approx(1.0)
    with pytest.raises(OracleTooLarge):
        brute_force_optimum(Instance(np.ones((5, 5)), np.ones((5, 5, 1)), np.ones(1)))


def test_brute_force_regression_fixture():
    inst = generate(GenSpec(n=2, m=2, k=2, local="1", seed=42))
    lines = dict(l.split(" ", 1) for l in (FIXTURES / "brute_force_n2_m2_seed42.txt").read_text().splitlines() if not l.startswith("#"))
    value, a = brute_force_optimum(inst)
    assert value == float(lines["value"])
    assert ["".join(str(int(v)) for v in r) for r in a.x] == lines["x"].split()
    assert value == enumerate_optimum(inst)


def test_brute_force_matches_plain_enumeration():
    for seed in range(40):
        r = np.random.default_rng(seed)
        n, m = int(r.integers(1, 4)), int(r.integers(1, 4))
        inst = generate(GenSpec(n=n, m=m, k=int(r.integers(1, 3)), local="1", tightness=float(r.uniform(0.1, 1)), seed=seed))
        value, a = brute_force_optimum(inst)
        assert value == pytest.approx(enumerate_optimum(inst), abs=1e-12)
        assert a.is_feasible(inst)


def test_metric_identities():
    inst = generate(GenSpec(n=50, m=4, k=3, local="2", seed=5))
    rng = np.random.default_rng(0)
    x = rng.random((50, 4)) < 0.3
    lam = np.array([0.2, 0.4, 0.1])
    m = evaluate(inst, Assignment.from_x(inst, x), lam)
    primal = sum(inst.profits[i, j] for i in range(50) for j in range(4) if x[i, j])
    usage = np.array([sum(inst.costs[i, j, k] for i in range(50) for j in range(4) if x[i, j]) for k in range(3)])
    ratios = np.maximum((usage - inst.budgets) / inst.budgets, 0)
    assert m.primal == pytest.approx(primal)
    assert m.dual_bound == pytest.approx(dual_value(inst, lam))
    assert m.duality_gap == pytest.approx(m.dual_bound - primal)
    assert m.optimality_ratio == pytest.approx(primal / m.dual_bound)
    assert np.allclose(m.violation, ratios)
    assert m.max_violation == pytest.approx(ratios.max())


def test_violation_ratio_definition():
    inst = Instance(np.ones((1, 1)), np.full((1, 1, 1), 1.04), np.array([1.0]))
    m = evaluate(inst, Assignment.from_x(inst, np.ones((1, 1), bool)), [0.0])
    assert m.max_violation == pytest.approx(0.04)


def test_empty_and_zero_gap_assignments():
    inst = Instance(np.array([[1.0]]), np.array([[[1.0]]]), np.array([2.0]))
    empty = evaluate(inst, Assignment.from_x(inst, np.zeros((1, 1), bool)), [0.0])
    assert empty.primal == 0 and empty.optimality_ratio == 0
    full = evaluate(inst, Assignment.from_x(inst, np.ones((1, 1), bool)), [0.0])
    assert full.optimality_ratio == 1.0 and full.max_violation == 0


def test_bound_uses_smaller_of_supplied_and_own():
    inst = Instance(np.array([[1.0]]), np.array([[[1.0]]]), np.array([2.0]))
    a = Assignment.from_x(inst, np.ones((1, 1), bool))
    assert evaluate(inst, a, [5.0], dual_bound=1.0).dual_bound == 1.0


def test_tiny_instances_respect_both_bounds():
    for seed in range(30):
        inst = generate(GenSpec(n=3, m=3, k=2, local="2", seed=seed))
        opt, _ = brute_force_optimum(inst)
        lam, final, rep = scd_solve(inst, SCDConfig())
        assert final.primal_value(inst) <= opt + 1e-12
        assert opt <= rep.dual_bound + 1e-9


def test_metric_outputs():
    inst = Instance(np.array([[1.0]]), np.array([[[1.0]]]), np.array([2.0]))
    m = evaluate(inst, Assignment.from_x(inst, np.ones((1, 1), bool)), [0.0])
    head, row = m.to_csv().splitlines()
    assert head == "primal,dual_bound,duality_gap,optimality_ratio,max_violation_ratio"
    assert row.split(",")[0] == "1.0"
    assert "optimality ratio" in m.table()
