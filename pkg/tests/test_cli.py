import json

import pytest

from poisson_vqa.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from poisson_vqa.experiments import ConfigError, ExperimentConfig, cmd_sample_study, cmd_solve

SMALL = {
    "problem": {"n": 2, "boundary": "ND", "rhs": {"kind": "step"}},
    "depth": 1,
    "optimizer": {"restarts": 2, "max_iters": 200},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_solve_writes_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["solve", "--config", write_config(tmp_path, SMALL), "--out", str(out)]) == EXIT_OK
    for name in ("report.json", "solution.csv", "trace.jsonl", "timings.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["schema"] == 1
    assert report["config"]["optimizer"]["memory"] == 10
    assert report["fidelity"] > 0.99
    lines = (out / "solution.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,value"
    assert len(lines) == 1 + 16


def test_solve_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    out = str(tmp_path / "run")
    main(["solve", "--config", cfg, "--out", out, "--seed", "3"])
    first = (tmp_path / "run" / "report.json").read_bytes()
    main(["solve", "--config", cfg, "--out", out, "--seed", "3"])
    assert (tmp_path / "run" / "report.json").read_bytes() == first


def test_shot_mode_flag(tmp_path):
    out = tmp_path / "shots"
    code = main(["solve", "--config", write_config(tmp_path, SMALL), "--out", str(out), "--shots", "4096"])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["mode"] == {"kind": "shots", "count": 4096, "seed": 0, "policy": "iteration"}
    assert report["total_shots"] > 0


def test_noisy_mode_small_problem(tmp_path):
    cfg = {**SMALL, "problem": {"n": 1, "boundary": "ND", "rhs": {"kind": "step"}},
           "optimizer": {"restarts": 1, "max_iters": 20}}
    out = tmp_path / "noisy"
    assert main(["solve", "--config", write_config(tmp_path, cfg), "--out", str(out), "--mode", "noisy"]) == EXIT_OK


@pytest.mark.parametrize("argv", [
    ["solve", "--p", "-1"],
    ["solve", "--seed", "-4"],
    ["solve", "--mode", "exact", "--shots", "10"],
])
def test_bad_flags_exit_config(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("cfg", [
    {"problem": {"n": 2, "boundary": "XD"}},
    {"problem": {"n": 2, "boundary": "DD", "rhs": {"kind": "magic"}}},
    {"mode": {"kind": "quantum"}},
    {"optimizer": {"memory": 0}},
    {"optimizer": {"bogus": 1}},
    {"shot_grid": []},
    {"colour": "blue"},
])
def test_bad_configs_exit_config(tmp_path, cfg):
    assert main(["solve", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_budget_exceeded(tmp_path):
    big = {"problem": {"n": 5, "boundary": "DDD", "rhs": {"kind": "step"}}}
    assert main(["plan-audit", "--config", write_config(tmp_path, big), "--out", str(tmp_path)]) == EXIT_BUDGET
    noisy = {"problem": {"n": 5, "boundary": "DD", "rhs": {"kind": "step"}}, "mode": {"kind": "noisy"}}
    assert main(["solve", "--config", write_config(tmp_path, noisy), "--out", str(tmp_path)]) == EXIT_BUDGET


def test_singular_problem_reports_without_oracle(tmp_path):
    cfg = {**SMALL, "problem": {"n": 2, "boundary": "NN", "rhs": {"kind": "step"}}}
    out = tmp_path / "nn"
    assert main(["solve", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert "fidelity" not in report
    assert report["physical_rhs"] is True


def test_explicit_rhs_is_flagged_non_physical(tmp_path):
    cfg = {**SMALL, "problem": {"n": 1, "boundary": "DD", "rhs": {"kind": "explicit", "vector": [1, 0, 0, 2]}}}
    out = tmp_path / "explicit"
    assert main(["solve", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "report.json").read_text())["physical_rhs"] is False


def test_non_finite_cost_is_numerical_failure(tmp_path):
    # the null vector of the all-Neumann operator sends the denominator to zero
    cfg = {"problem": {"n": 1, "boundary": "N", "rhs": {"kind": "explicit", "vector": [1, 1]}},
           "depth": 0, "mode": {"kind": "shots", "count": 16}, "optimizer": {"restarts": 1}}
    assert main(["solve", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_NUMERICAL


@pytest.mark.parametrize("n,boundary,counts", [
    (4, "DD", {"E": 4, "E_tilde_A2": 24}),
    (4, "DDD", {"E": 4}),
    (4, "ND", {"E": 5}),
])
def test_plan_audit_counts(tmp_path, capsys, n, boundary, counts):
    cfg = {"problem": {"n": n, "boundary": boundary, "rhs": {"kind": "step"}}}
    assert main(["plan-audit", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == counts
    audit = json.loads((tmp_path / "plan_audit.json").read_text())
    assert audit["counts"] == counts


def test_noise_bench_single_point(tmp_path):
    cfg = {"noise_bench": {"n": 2, "p2_grid": [1e-2], "trials": 1, "depth": 1}}
    out = tmp_path / "nb"
    assert main(["noise-bench", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
    first = (out / "noise_sweep.csv").read_text()
    assert len(first.splitlines()) == 1 + 2
    main(["noise-bench", "--config", write_config(tmp_path, cfg), "--out", str(out)])
    assert (out / "noise_sweep.csv").read_text() == first


def test_infinite_shot_sentinel_matches_solve(tmp_path):
    base = ExperimentConfig.from_dict({**SMALL, "shot_grid": ["inf"], "out": str(tmp_path / "study")})
    study = cmd_sample_study(base)
    solo = cmd_solve(ExperimentConfig.from_dict({**SMALL, "out": str(tmp_path / "solo")}))
    assert len(study) == 1
    assert study[0].e_min == solo.e_min
    assert study[0].theta_opt == solo.theta_opt
    assert (tmp_path / "study" / "sample_study.csv").exists()


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(SMALL)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict([1, 2])
