from datetime import datetime

STATUS_SYMBOLS = {"PASS": "✅", "FAIL": "❌", "INCONCLUSIVE": "❔", "SKIP": "⏭️"}


def _bar(score, width=20):
    """Render a simple ASCII progress bar."""
    filled = int(round(score / 100 * width))
    return f"[{'█' * filled}{'░' * (width - filled)}] {score:.0f}%"


def _grade(score):
    if score == 100: return "S"
    if score >= 80:  return "A"
    if score >= 60:  return "B"
    if score >= 40:  return "C"
    if score >= 20:  return "D"
    return "F"


def _detail(result):
    metrics = result.get("metrics", {})
    parts = []
    if "rho_T" in metrics:
        parts.append(f"rho(T)={metrics['rho_T']:.5g}")
    if "share" in metrics:
        parts.append(f"share={metrics['share']:.3f}")
    if "l1" in metrics:
        parts.append(f"L1={metrics['l1']:.2e}")
    if "drift" in metrics and result["status"] == "INCONCLUSIVE":
        parts.append(f"drift={metrics['drift']:.1e}")
    return "  " + ", ".join(parts) if parts else ""


def generate_report(suite_name, problem_names, suite_results, budget_summary=None, print_output=True):
    """
    Render the session report of a verify suite.

    Each result is a dict with at least `status` (PASS, FAIL, INCONCLUSIVE or
    SKIP) and `verdict`; `metrics` is shown when present.
    """
    now = datetime.now().strftime("%Y-%m-%d %H:%M")
    total = len(suite_results)

    passed = sum(1 for r in suite_results if r["status"] == "PASS")
    failed = sum(1 for r in suite_results if r["status"] == "FAIL")
    inconclusive = sum(1 for r in suite_results if r["status"] == "INCONCLUSIVE")
    skipped = sum(1 for r in suite_results if r["status"] == "SKIP")

    scored = total - skipped
    pass_rate = (passed / scored * 100) if scored > 0 else 0
    settled_rate = ((passed + failed) / scored * 100) if scored > 0 else 0

    lines = []
    w = 60

    def rule(char="─"):
        lines.append(char * w)

    def center(text):
        lines.append(text.center(w))

    def row(label, value, indent=0):
        pad = " " * indent
        lines.append(f"{pad}{label:<28}{value}")

    rule("═")
    center("advsel verification report")
    center(f"Suite: {suite_name}   |   {now}")
    rule("═")

    lines.append("")
    lines.append("  PROBLEMS")
    rule()
    for name, result in zip(problem_names, suite_results):
        status = result["status"]
        symbol = STATUS_SYMBOLS.get(status, "?")
        verdict = result.get("verdict") or ""
        lines.append(f"  {name:<22} {symbol} {status:<12} {verdict:<10}{_detail(result)}")
        if result.get("error"):
            lines.append(f"      {result['error']}")

    lines.append("")
    rule()
    lines.append("  SCORES")
    rule()
    row("Pass rate:", _bar(pass_rate), indent=2)
    row("Settled runs:", _bar(settled_rate), indent=2)

    lines.append("")
    rule()
    lines.append("  SUMMARY")
    rule()
    row("Total problems:", str(total), indent=2)
    row("Passed:", f"✅ {passed}", indent=2)
    row("Failed:", f"❌ {failed}", indent=2)
    if inconclusive:
        row("Inconclusive:", f"❔ {inconclusive}", indent=2)
    if skipped:
        row("Skipped:", f"⏭️  {skipped}", indent=2)
    if budget_summary:
        lines.append(f"  {budget_summary}")
    lines.append("")

    grade = _grade(pass_rate)
    if grade == "S":
        verdict = "Every prediction reproduced."
    elif grade in ("A", "B"):
        verdict = "Mostly reproduced; check the failures."
    elif inconclusive and not failed:
        verdict = "Horizons too short; raise T."
    else:
        verdict = "Predictions and runs disagree."

    rule("═")
    center(f"Grade: {grade}   |   {verdict}")
    rule("═")

    report = "\n".join(lines)
    if print_output:
        print("\n" + report + "\n")
    return report


def save_report(report_text, output_path):
    """Save the report to a markdown file."""
    with open(output_path, "w", encoding="utf-8") as f:
        f.write("```\n")
        f.write(report_text)
        f.write("\n```\n")
