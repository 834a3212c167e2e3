import csv
from pathlib import Path

import pytest

from kpsolve.cli import load_solution, main
from kpsolve.model import load_instance

FIXTURES = Path(__file__).parent / "fixtures"


def make(tmp_path, *flags, name="inst"):
    out = tmp_path / name
    assert main(["generate", *flags, "--output-dir", str(out)]) == 0
    return out / "instance.kpi"


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_generate_summary_and_determinism(tmp_path, capsys):
    flags = ["--n", "1000", "--m", "10", "--k", "10", "--local", "2,2,3", "--seed", "7"]
    a = make(tmp_path, *flags, name="a")
    line = capsys.readouterr().out
    assert "N=1000 M=10 K=10 L=3" in line and "budgets=[" in line
    b = make(tmp_path, *flags, name="b")
    assert a.read_bytes() == b.read_bytes()
    assert load_instance(a).num_groups == 1000


def test_generate_from_spec_file(tmp_path):
    spec = tmp_path / "g.txt"
    spec.write_text("n=20\nm=3\nk=3\ncost_mode=diag\n")
    path = make(tmp_path, "--spec", str(spec), "--seed", "3")
    assert load_instance(path).mode == "diag"


def test_generate_rejects_bad_sizes(tmp_path, capsys):
    assert main(["generate", "--n", "0", "--m", "2", "--k", "1", "--output-dir", str(tmp_path)]) == 2
    assert "n must be" in capsys.readouterr().err
    assert main(["generate", "--m", "2", "--k", "1", "--output-dir", str(tmp_path)]) == 2


def test_unknown_flag_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["solve", "--bogus"])
    assert info.value.code == 2


def test_scd_solve_outputs(tmp_path):
    inst_path = make(tmp_path, "--n", "10000", "--m", "5", "--k", "5", "--cost-mode", "diag", "--seed", "1")
    out = tmp_path / "run"
    assert main(["solve", "--instance", str(inst_path), "--output-dir", str(out), "--threads", "2"]) == 0
    rows = read_csv(out / "trace.csv")
    report = (out / "report.txt").read_text()
    iters = int(next(l for l in report.splitlines() if l.startswith("iterations")).split()[-1])
    assert len(rows) - 1 == iters + 1
    assert ",".join(rows[0]) + "\n" == (FIXTURES / "trace_header_k3.csv").read_text().replace(
        "lambda_3", "lambda_3,lambda_4,lambda_5"
    )
    inst = load_instance(inst_path)
    lam, a = load_solution(out / "solution.txt", inst)
    assert a.is_feasible(inst) and lam.size == 5
    assert main(["evaluate", "--instance", str(inst_path), "--solution", str(out / "solution.txt"), "--output-dir", str(out)]) == 0
    assert "optimality ratio" in (out / "report.txt").read_text()


def test_trace_header_matches_golden_file(tmp_path):
    inst_path = make(tmp_path, "--n", "50", "--m", "4", "--k", "3", "--seed", "2")
    out = tmp_path / "run"
    assert main(["solve", "--instance", str(inst_path), "--output-dir", str(out), "--max-iters", "3"]) == 0
    header = (out / "trace.csv").read_text().splitlines()[0] + "\n"
    assert header == (FIXTURES / "trace_header_k3.csv").read_text()


def test_dd_requires_alpha(tmp_path):
    inst_path = make(tmp_path, "--n", "20", "--m", "3", "--k", "2")
    assert main(["solve", "--algorithm", "dd", "--instance", str(inst_path), "--output-dir", str(tmp_path)]) == 2


def test_bad_bucket_width(tmp_path):
    inst_path = make(tmp_path, "--n", "20", "--m", "3", "--k", "2")
    assert main(["solve", "--bucketing", "0", "--instance", str(inst_path), "--output-dir", str(tmp_path)]) == 2


def test_divergence_exit_code(tmp_path):
    inst_path = make(tmp_path, "--n", "20", "--m", "3", "--k", "2")
    code = main(["solve", "--algorithm", "dd", "--alpha", "10", "--lambda0", "1e308",
                 "--instance", str(inst_path), "--output-dir", str(tmp_path)])
    assert code == 3


def test_large_step_exit_code_is_documented(tmp_path):
    inst_path = make(tmp_path, "--n", "200", "--m", "4", "--k", "3", "--tightness", "0.1")
    code = main(["solve", "--algorithm", "dd", "--alpha", "10", "--instance", str(inst_path), "--output-dir", str(tmp_path)])
    assert code in (0, 3, 4)


def test_infeasible_final_exit_code(tmp_path):
    inst_path = make(tmp_path, "--n", "200", "--m", "4", "--k", "3")
    code = main(["solve", "--algorithm", "dd", "--alpha", "1e-6", "--lambda0", "0", "--max-iters", "1",
                 "--no-postprocess", "--instance", str(inst_path), "--output-dir", str(tmp_path)])
    assert code == 4


def test_no_postprocess_on_loose_budgets(tmp_path):
    inst_path = make(tmp_path, "--n", "200", "--m", "4", "--k", "3", "--tightness", "100")
    assert main(["solve", "--no-postprocess", "--instance", str(inst_path), "--output-dir", str(tmp_path)]) == 0


def test_missing_instance(tmp_path):
    assert main(["solve", "--instance", str(tmp_path / "none.kpi"), "--output-dir", str(tmp_path)]) == 2
    assert main(["sweep", "--instance", str(tmp_path / "none.kpi"), "--output-dir", str(tmp_path)]) == 2


def test_sweep_writes_aligned_traces(tmp_path):
    inst_path = make(tmp_path, "--n", "2000", "--m", "5", "--k", "5", "--cost-mode", "diag", "--seed", "4")
    out = tmp_path / "sweep"
    assert main(["sweep", "--instance", str(inst_path), "--output-dir", str(out), "--alpha", "1e-3,2e-3", "--max-iters", "15"]) == 0
    traces = sorted(p.name for p in out.glob("trace_*.csv"))
    assert traces == ["trace_dd_alpha0.001.csv", "trace_dd_alpha0.002.csv", "trace_scd.csv"]
    headers = {tuple(read_csv(out / t)[0]) for t in traces}
    assert len(headers) == 1
    rows = read_csv(out / "sweep.csv")
    assert rows[0] == ["algorithm", "config", "iter", "dual", "primal", "duality_gap", "dual_bound", "max_violation_ratio"]
    assert {r[1] for r in rows[1:]} == {"alpha=0.001", "alpha=0.002", "exact"}


def test_single_algorithm_sweep(tmp_path):
    inst_path = make(tmp_path, "--n", "300", "--m", "3", "--k", "3", "--cost-mode", "diag")
    out = tmp_path / "sweep"
    assert main(["sweep", "--algorithms", "scd", "--instance", str(inst_path), "--output-dir", str(out)]) == 0
    assert [p.name for p in out.glob("trace_*.csv")] == ["trace_scd.csv"]


def test_thread_flag_validation(tmp_path, monkeypatch):
    inst_path = make(tmp_path, "--n", "30", "--m", "3", "--k", "2")
    assert main(["solve", "--threads", "0", "--instance", str(inst_path), "--output-dir", str(tmp_path)]) == 2
    monkeypatch.setenv("KP_THREADS", "2")
    assert main(["solve", "--instance", str(inst_path), "--output-dir", str(tmp_path)]) == 0
