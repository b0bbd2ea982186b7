import csv
import json

import pytest
import yaml

from brgame import bench
from brgame.cli import load_sweep, main
from brgame.scenario import load

ENV0 = """\
version: 1
name: env0-single
environment: {level: Env0, seed: 0}
agents: [{start: [2, 5, 5], goal: [4, 5, 5], beta: 0.03, prior: informed}]
planner: {samples: 8, n_ibr: 1, n_up: 1, horizon: 5, ne_probes: 4}
execution_steps: 6
"""

FIVE = """\
version: 1
environment: {level: Env1, seed: 0}
agents:
""" + "".join(f"  - {{start: [2, {3 + i}, 5], goal: [5, {3 + i}, 5], beta: 0.1, prior: uniform}}\n"
              for i in range(5)) + """\
planner: {samples: 6, n_ibr: 1, n_up: 1, horizon: 4}
execution_steps: 4
"""


@pytest.fixture
def env0(tmp_path):
    p = tmp_path / "env0.yaml"
    p.write_text(ENV0)
    return p


def _sweep(tmp_path, **over):
    (tmp_path / "scen.yaml").write_text(ENV0.replace("Env0", "Env1"))
    data = {"version": 1, "scenario": "scen.yaml", "samples": [4], "env_levels": ["Env1"],
            "prior_assignments": ["informed"], "seeds": [0], "expert_samples": 16, **over}
    p = tmp_path / "sweep.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_plan_writes_csv_and_summary(env0, tmp_path, capsys):
    out = tmp_path / "run" / "traj.csv"
    assert main(["plan", str(env0), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "agent", "x", "y", "z", "ax", "ay", "az", "reward"]
    assert len(rows) == 1 + (6 + 1) * 1
    summary = json.loads(out.with_suffix(".summary.json").read_text())
    assert summary["seed"] == 0 and len(summary["utilities"]) == 1
    assert "utilities" in capsys.readouterr().out


def test_plan_same_seed_is_byte_identical(env0, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["plan", str(env0), "--seed", "42", "--out", str(a)]) == 0
    assert main(["plan", str(env0), "--seed", "42", "--out", str(b), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (a.with_suffix(".summary.json").read_bytes()
            == b.with_suffix(".summary.json").read_bytes())


def test_plan_refuses_overwrite_without_force(env0, tmp_path):
    out = tmp_path / "t.csv"
    assert main(["plan", str(env0), "--out", str(out)]) == 0
    assert main(["plan", str(env0), "--out", str(out)]) == 2
    assert main(["plan", str(env0), "--out", str(out), "--force"]) == 0


def test_plan_missing_file(tmp_path, capsys):
    assert main(["plan", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o.csv")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_plan_parse_error_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(ENV0.replace("execution_steps: 6", "execution_steps: 6\ncolour: red"))
    assert main(["plan", str(bad), "--out", str(tmp_path / "o.csv")]) == 2
    err = capsys.readouterr().err
    assert "colour" in err and "unknown field" in err and "(line 7)" in err


def test_plan_degenerate_exit_code(env0, tmp_path, monkeypatch):
    from brgame import cli
    real = cli.receding_horizon_execute

    def degenerate(*a, **kw):
        run = real(*a, **kw)
        run.degenerate = True
        return run

    monkeypatch.setattr(cli, "receding_horizon_execute", degenerate)
    assert main(["plan", str(env0), "--out", str(tmp_path / "o.csv")]) == 3


def test_dump_effective_config_round_trips(env0, tmp_path):
    dumped = tmp_path / "effective.yaml"
    assert main(["plan", str(env0), "--out", str(tmp_path / "o.csv"),
                 "--dump-effective-config", str(dumped)]) == 0
    assert load(dumped) == load(env0)


def test_benchmark_one_cell(tmp_path):
    out = tmp_path / "out"
    assert main(["benchmark", str(_sweep(tmp_path)), "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader((out / "records.csv").open()))
    assert len(rows) == 1 and rows[0]["error"] == ""
    summary = list(csv.DictReader((out / "summary.csv").open()))
    assert summary[0]["failed"] == "0" and summary[0]["count"] == "1"


def test_benchmark_refuses_to_overwrite(tmp_path):
    sweep = _sweep(tmp_path)
    out = tmp_path / "out"
    assert main(["benchmark", str(sweep), "--out-dir", str(out), "--no-charts"]) == 0
    assert main(["benchmark", str(sweep), "--out-dir", str(out), "--no-charts"]) == 2
    assert main(["benchmark", str(sweep), "--out-dir", str(out), "--no-charts", "--force"]) == 0


def test_benchmark_partial_and_total_failure(tmp_path, monkeypatch):
    real = bench.run_cell

    def fail_seed(fail):
        def run(base, level, priors, samples, seed, **kw):
            if seed in fail:
                raise RuntimeError("boom")
            return real(base, level, priors, samples, seed, **kw)
        return run

    sweep = _sweep(tmp_path, seeds=[0, 1])
    monkeypatch.setattr(bench, "run_cell", fail_seed({1}))
    assert main(["benchmark", str(sweep), "--out-dir", str(tmp_path / "a"), "--no-charts"]) == 0
    summary = list(csv.DictReader((tmp_path / "a" / "summary.csv").open()))
    assert summary[0]["failed"] == "1"
    monkeypatch.setattr(bench, "run_cell", fail_seed({0, 1}))
    assert main(["benchmark", str(sweep), "--out-dir", str(tmp_path / "b"), "--no-charts"]) == 3


def test_sweep_file_errors(tmp_path, capsys):
    bad = _sweep(tmp_path, prior_assignments=["greedy"])
    assert main(["benchmark", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert "prior_assignments[0]" in capsys.readouterr().err
    bad = _sweep(tmp_path, samples=[])
    assert main(["benchmark", str(bad), "--out-dir", str(tmp_path / "o")]) == 2


def test_sweep_effective_config_round_trips(tmp_path):
    sweep = _sweep(tmp_path, seeds=[0, 2])
    dumped = tmp_path / "eff.yaml"
    assert main(["benchmark", str(sweep), "--out-dir", str(tmp_path / "o"), "--no-charts",
                 "--dump-effective-config", str(dumped)]) == 0
    assert load_sweep(dumped) == load_sweep(sweep)


def test_replacement_table(tmp_path):
    scen = tmp_path / "five.yaml"
    scen.write_text(FIVE)
    out = tmp_path / "rep"
    assert main(["replacement", str(scen), "--seeds", "1,2,3", "--out-dir", str(out),
                 "--no-charts"]) == 0
    rows = list(csv.DictReader((out / "replacement.csv").open()))
    assert [int(r["num_informed"]) for r in rows] == list(range(6))
    assert all(r["seeds"] == "3" for r in rows)
    assert rows[0]["informed_score"] == "" and rows[5]["uniform_score"] == ""


def test_replacement_needs_five_agents(env0, tmp_path, capsys):
    assert main(["replacement", str(env0), "--out-dir", str(tmp_path / "r")]) == 2
    assert "5 agents" in capsys.readouterr().err


def test_replacement_bad_seeds(env0, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["replacement", str(env0), "--seeds", "a,b"])
    assert info.value.code == 2


def test_oracle_report_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "oracle.json"
    assert main(["oracle", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "softmax_equivalence beta=0.1" in text and "all passed" in text
    report = json.loads(out.read_text())
    assert report["tolerance"] == 0.02 and report["passed"]
    assert main(["oracle", "--tolerance", "0.05"]) == 0
    assert "tolerance 0.05" in capsys.readouterr().out
    # far below the sampling error of D = 10^4: must fail
    assert main(["oracle", "--tolerance", "1e-6"]) == 1
    assert "FAIL softmax_equivalence beta=0.1" in capsys.readouterr().out
