"""``kpsolve`` command line: generate, solve, evaluate and sweep.

Exit codes: 0 success, 2 usage error or unreadable input, 3 divergence,
4 infeasible final assignment.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .engine import default_workers
from .genbench import GenSpec, evaluate, generate
from .model import DENSE, DIAG, Assignment, Instance, load_instance, save_instance
from .solver import DDConfig, DivergenceError, SCDConfig, SolveReport, dd_solve, scd_solve

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4

INSTANCE_FILE = "instance.kpi"
SOLUTION_FILE = "solution.txt"
TRACE_FILE = "trace.csv"
REPORT_FILE = "report.txt"
SWEEP_FILE = "sweep.csv"

# presolve kicks in automatically above this many groups
PRESOLVE_MIN_GROUPS = 100_000
PRESOLVE_SAMPLE = 10_000


class UsageError(Exception):
    pass


# -- solution file --------------------------------------------------------------


def save_solution(path, lam, assignment: Assignment) -> None:
    """``# lambda ...`` comment, then ``group_id j1 j2 ...`` per group (1-based ids)."""
    with open(path, "w") as fh:
        fh.write("# lambda " + " ".join(repr(float(v)) for v in np.asarray(lam)) + "\n")
        for i, row in enumerate(assignment.x):
            fh.write(" ".join(str(v) for v in [i + 1, *(np.flatnonzero(row) + 1)]) + "\n")


def load_solution(path, inst: Instance) -> tuple[np.ndarray, Assignment]:
    """Inverse of :func:`save_solution`; groups not listed select nothing, missing lambda means 0."""
    n, m = inst.num_groups, inst.num_items
    lam = np.zeros(inst.num_global)
    x = np.zeros((n, m), dtype=bool)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line.startswith("# lambda"):
                vals = [float(v) for v in line.split()[2:]]
                if len(vals) != inst.num_global:
                    raise UsageError(f"{path}:{lineno}: expected {inst.num_global} lambda values")
                lam = np.array(vals)
                continue
            if not line or line.startswith("#"):
                continue
            try:
                ids = [int(t) for t in line.split()]
            except ValueError:
                raise UsageError(f"{path}:{lineno}: expected integers") from None
            gid, items = ids[0], ids[1:]
            if not 1 <= gid <= n or any(not 1 <= j <= m for j in items):
                raise UsageError(f"{path}:{lineno}: id out of range")
            x[gid - 1, [j - 1 for j in items]] = True
    return lam, Assignment.from_x(inst, x)


# -- argument parsing -------------------------------------------------------------


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("learning rates must be positive")
    return vals


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", required=True, help="instance file in the text format")
    p.add_argument("--output-dir", default=".", help="directory for outputs (created if missing)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: KP_THREADS or all cores)")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--lambda0", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kpsolve", description="Large-scale generalized knapsack solver")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic instance")
    g.add_argument("--spec", help="key=value GenSpec file; flags override its values")
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--cost-mode", choices=[DENSE, DIAG])
    g.add_argument("--cost-law", choices=["uniform01", "mixed"])
    g.add_argument("--local", help="local pattern: 1, 2, Q or 2,2,3")
    g.add_argument("--tightness", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--output-dir", default=".")

    s = sub.add_parser("solve", help="run DD or SCD on an instance")
    _add_run_flags(s)
    s.add_argument("--algorithm", choices=["dd", "scd"], default="scd")
    s.add_argument("--alpha", type=_positive_float, help="DD learning rate (required for dd)")
    s.add_argument("--bucketing", type=float, help="SCD bucket width; omit for the exact reduce")
    s.add_argument("--presolve", type=int, help=f"SCD presolve sample size (default {PRESOLVE_SAMPLE} when N > {PRESOLVE_MIN_GROUPS})")
    s.add_argument("--no-presolve", action="store_true")
    s.add_argument("--no-postprocess", action="store_true")

    e = sub.add_parser("evaluate", help="metrics of a stored solution")
    e.add_argument("--instance", required=True)
    e.add_argument("--solution", required=True)
    e.add_argument("--output-dir", help="also write report.txt here")
    e.add_argument("--threads", type=int, default=None)

    w = sub.add_parser("sweep", help="DD at several learning rates side by side with SCD")
    _add_run_flags(w)
    w.add_argument("--algorithms", default="dd,scd", help="comma list drawn from dd, scd")
    w.add_argument("--alpha", type=_float_list, default=[1e-3, 2e-3], help="comma list of DD learning rates")
    w.add_argument("--no-postprocess", action="store_true")
    return parser


# -- commands ---------------------------------------------------------------------


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.threads
    return default_workers()


def _outdir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path) -> Instance:
    if not os.path.isfile(path):
        raise UsageError(f"instance file not found: {path}")
    return load_instance(path)


def cmd_generate(args) -> int:
    values = {}
    if args.spec:
        if not os.path.isfile(args.spec):
            raise UsageError(f"spec file not found: {args.spec}")
        values = vars(GenSpec.from_text(Path(args.spec).read_text()))
    for name in ("n", "m", "k", "cost_mode", "cost_law", "local", "tightness", "seed"):
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    for name in ("n", "m", "k"):
        if name not in values:
            raise UsageError(f"--{name} is required")
    try:
        spec = GenSpec(**values)
        inst = generate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = _outdir(args) / INSTANCE_FILE
    save_instance(inst, path)
    budgets = " ".join(f"{b:.6g}" for b in inst.budgets)
    print(f"N={inst.num_groups} M={inst.num_items} K={inst.num_global} L={len(inst.local)} budgets=[{budgets}] -> {path}")
    return EXIT_OK


def _run(inst: Instance, algorithm: str, args, *, alpha=None, presolve=None, postprocess=True):
    workers = _threads(args)
    if algorithm == "dd":
        if alpha is None:
            raise UsageError("dd requires --alpha")
        cfg = DDConfig(alpha=alpha, max_iters=args.max_iters, tol=args.tol, lambda0=args.lambda0)
        return dd_solve(inst, cfg, workers=workers, postprocess=postprocess)
    bucketing = getattr(args, "bucketing", None)
    if bucketing is not None and not bucketing > 0:
        raise UsageError("--bucketing must be positive")
    cfg = SCDConfig(
        max_iters=args.max_iters, tol=args.tol, bucketing=bucketing,
        presolve=presolve, seed=args.seed, lambda0=args.lambda0,
    )
    return scd_solve(inst, cfg, workers=workers, postprocess=postprocess)


def _report_text(inst: Instance, report: SolveReport, lam, assignment: Assignment) -> str:
    m = evaluate(inst, assignment, lam, report.dual_bound)
    raw = report.raw_usage if report.raw_usage is not None else assignment.usage
    lines = [
        f"algorithm  {report.algorithm}",
        f"iterations  {report.iterations}",
        f"converged  {report.converged}",
        f"feasible  {assignment.is_feasible(inst)}",
        f"groups removed  {report.removed}",
        "raw max violation ratio  " + f"{float(np.maximum((raw - inst.budgets) / inst.budgets, 0).max()):.6g}",
        "lambda  " + " ".join(repr(float(v)) for v in np.asarray(lam)),
        "delta  " + " ".join(repr(float(v)) for v in report.delta),
    ]
    return "\n".join(lines) + "\n" + m.table()


def _presolve_size(args, inst: Instance) -> int | None:
    if args.no_presolve:
        return None
    if args.presolve is not None:
        if not 1 <= args.presolve <= inst.num_groups:
            raise UsageError(f"--presolve must lie in [1, {inst.num_groups}]")
        return args.presolve
    return PRESOLVE_SAMPLE if inst.num_groups > PRESOLVE_MIN_GROUPS else None


def cmd_solve(args) -> int:
    if args.algorithm == "dd" and args.alpha is None:
        raise UsageError("dd requires --alpha")
    inst = _load(args.instance)
    presolve = _presolve_size(args, inst) if args.algorithm == "scd" else None
    mult, assignment, report = _run(
        inst, args.algorithm, args, alpha=args.alpha, presolve=presolve, postprocess=not args.no_postprocess
    )
    out = _outdir(args)
    save_solution(out / SOLUTION_FILE, mult.lam, assignment)
    report.write_trace(out / TRACE_FILE)
    text = _report_text(inst, report, mult.lam, assignment)
    (out / REPORT_FILE).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if assignment.is_feasible(inst) else EXIT_INFEASIBLE


def cmd_evaluate(args) -> int:
    inst = _load(args.instance)
    if not os.path.isfile(args.solution):
        raise UsageError(f"solution file not found: {args.solution}")
    lam, assignment = load_solution(args.solution, inst)
    m = evaluate(inst, assignment, lam)
    sys.stdout.write(m.table())
    if args.output_dir:
        (_outdir(args) / REPORT_FILE).write_text(m.table() + "\n" + m.to_csv())
    return EXIT_OK if assignment.is_feasible(inst) else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    algos = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    if not algos or set(algos) - {"dd", "scd"}:
        raise UsageError("--algorithms must list dd and/or scd")
    inst = _load(args.instance)
    out = _outdir(args)
    runs = []
    if "dd" in algos:
        runs += [("dd", f"alpha={a:g}", a, f"trace_dd_alpha{a:g}.csv") for a in args.alpha]
    if "scd" in algos:
        runs.append(("scd", "exact", None, "trace_scd.csv"))
    rows = []
    for algo, label, alpha, fname in runs:
        _, _, report = _run(inst, algo, args, alpha=alpha, postprocess=not args.no_postprocess)
        report.write_trace(out / fname)
        bound = report.dual_bound
        for r in report.records:
            rows.append([algo, label, r.t, r.dual, r.primal, r.dual - r.primal, bound, r.max_violation])
        print(f"{algo} {label}: {report.iterations} iterations, final max violation {report.records[-1].max_violation:.6g}")
    with open(out / SWEEP_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "config", "iter", "dual", "primal", "duality_gap", "dual_bound", "max_violation_ratio"])
        for row in rows:
            w.writerow(row[:3] + [repr(float(v)) for v in row[3:]])
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"kpsolve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"kpsolve: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
