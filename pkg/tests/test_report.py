from advsel.report import _bar, _grade, generate_report, save_report


def _make_result(status, verdict="dirac", metrics=None, error=None):
    return {
        "id": "problem",
        "status": status,
        "verdict": verdict,
        "metrics": metrics or {},
        "error": error,
    }


def test_report_all_pass():
    results = [_make_result("PASS") for _ in range(3)]
    report = generate_report("core", ["p1", "p2", "p3"], results, print_output=False)
    assert "Grade: S" in report
    assert "100%" in report
    assert "Every prediction reproduced." in report


def test_report_all_fail():
    results = [_make_result("FAIL") for _ in range(3)]
    report = generate_report("core", ["p1", "p2", "p3"], results, print_output=False)
    assert "Grade: F" in report
    assert "❌" in report


def test_report_inconclusive_asks_for_longer_runs():
    results = [_make_result("PASS"), _make_result("INCONCLUSIVE", metrics={"rho_T": 5.7, "drift": 0.02})]
    report = generate_report("core", ["p1", "p2"], results, print_output=False)
    assert "Inconclusive:" in report
    assert "drift=2.0e-02" in report
    assert "Horizons too short; raise T." in report


def test_report_skip_not_scored():
    results = [_make_result("PASS"), _make_result("SKIP", verdict="degenerate")]
    report = generate_report("limits", ["p1", "p2"], results, print_output=False)
    assert "SKIP" in report
    assert "Grade: S" in report


def test_report_metrics_and_errors():
    results = [
        _make_result("PASS", metrics={"rho_T": 5.5, "share": 0.999}),
        _make_result("FAIL", verdict=None, error="RunTimeout: Run timed out"),
    ]
    report = generate_report("core", ["stable-end", "slow"], results, budget_summary="Run budget: 2/64 runs",
                             print_output=False)
    assert "rho(T)=5.5" in report
    assert "share=0.999" in report
    assert "RunTimeout: Run timed out" in report
    assert "Run budget: 2/64 runs" in report


def test_bar_and_grade():
    assert _bar(50, width=10) == "[█████░░░░░] 50%"
    assert [_grade(s) for s in (100, 85, 60, 45, 20, 0)] == ["S", "A", "B", "C", "D", "F"]


def test_save_report(tmp_path):
    report = generate_report("core", ["p1"], [_make_result("PASS")], print_output=False)
    path = tmp_path / "core.md"
    save_report(report, path)
    text = path.read_text(encoding="utf-8")
    assert text.startswith("```\n")
    assert "Grade: S" in text
