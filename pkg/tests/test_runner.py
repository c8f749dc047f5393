import os
import shutil

import pytest
import yaml

from advsel.budget import RunBudget
from advsel.runner import LabRunner, verify_spec

from conftest import PROBLEMS_DIR, load_problem


def _base(tmp_path, problems):
    """A throwaway base_dir with one suite `mini` holding copies of bundled problems."""
    target = tmp_path / "problems"
    for rel in problems:
        dest = target / os.path.dirname(rel)
        dest.mkdir(parents=True, exist_ok=True)
        shutil.copy(PROBLEMS_DIR / rel, dest)
    index = {"version": 1, "suites": {"mini": {"description": "test suite", "problems": list(problems)}}}
    (target / "index.yaml").write_text(yaml.safe_dump(index), encoding="utf-8")
    return str(tmp_path)


def _degenerate(tmp_path):
    path = tmp_path / "problems" / "tie.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump({
        "name": "tie", "f": "x*(1-x)", "r": "6 - x", "n0": "6*ind(0, 1)", "domain": [0, 1],
    }), encoding="utf-8")
    return str(path)


def test_verify_spec_unique_stable():
    pred, sim, score = verify_spec(load_problem("limits/unique-stable.yaml"), T=20, N=64)
    assert pred.verdict == "dirac"
    assert sim.ensemble is not None
    assert score.status == "pass"


def test_suite_paths(tmp_path):
    runner = LabRunner(_base(tmp_path, ["limits/unique-stable.yaml"]))
    paths = runner.suite_paths("mini")
    assert [os.path.basename(p) for p in paths] == ["unique-stable.yaml"]
    with pytest.raises(KeyError):
        runner.suite_paths("absent")


def test_degenerate_problem_is_skipped(tmp_path, capsys):
    runner = LabRunner(str(tmp_path), T=1.0, N=32)
    result = runner.verify_problem(_degenerate(tmp_path))
    assert result["status"] == "SKIP"
    assert result["verdict"] == "degenerate"
    out = capsys.readouterr().out
    assert "[Predict] degenerate:" in out
    assert "tie between" in out


def test_invalid_problem_fails(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"f": "x", "r": "-1", "n0": "ind(0, 1)", "domain": [0, 1]}), encoding="utf-8")
    result = LabRunner(str(tmp_path)).verify_problem(str(path))
    assert result["status"] == "FAIL"
    assert result["error"].startswith("ValidationFailed")


def test_timeout_marks_failure(tmp_path):
    runner = LabRunner(str(tmp_path), budget=RunBudget(max_run_seconds=0.01), T=5.0, N=32)
    result = runner.verify_problem(str(PROBLEMS_DIR / "core" / "stable-end.yaml"))
    assert result["status"] == "FAIL"
    assert "timed out" in result["error"]


def test_run_limit_skips_remaining(tmp_path):
    base = _base(tmp_path, ["limits/unique-stable.yaml", "limits/no-root.yaml"])
    runner = LabRunner(base, budget=RunBudget(max_runs=0))
    results = runner.run_suite("mini")
    assert [r["status"] for r in results] == ["SKIP", "SKIP"]
    assert all("Run limit reached" in r["error"] for r in results)


def test_run_suite_saves_report(tmp_path):
    base = _base(tmp_path, ["limits/unique-stable.yaml"])
    runner = LabRunner(base, T=20.0, N=64)
    results = runner.run_suite("mini", save_report_file=True)
    assert [r["status"] for r in results] == ["PASS"]
    reports = os.listdir(os.path.join(base, "reports"))
    assert len(reports) == 1 and reports[0].startswith("mini-")
    assert runner.budget.runs == 1


def test_solver_error_is_a_failed_row_and_suite_continues(tmp_path, monkeypatch):
    import advsel.runner as runner_mod

    real = runner_mod.simulate_particles

    def flaky(spec, T=None, N=None):
        if spec.name == "no-root":
            raise ValueError("All components of the initial state y0 must be finite.")
        return real(spec, T, N)

    monkeypatch.setattr(runner_mod, "simulate_particles", flaky)
    base = _base(tmp_path, ["limits/no-root.yaml", "limits/unique-stable.yaml"])
    results = LabRunner(base, T=20.0, N=64).run_suite("mini")
    assert [r["status"] for r in results] == ["FAIL", "PASS"]
    assert results[0]["error"].startswith("ValueError")


def test_shifted_source_runs_through_suite(tmp_path):
    base = _base(tmp_path, ["limits/mirrored.yaml"])
    results = LabRunner(base, T=30.0, N=256).run_suite("mini")
    assert results[0]["error"] is None
    assert results[0]["verdict"] == "profile"
