"""
Suite runner: classify, simulate and score every problem of a suite listed in
problems/index.yaml, then print the session report.
"""

import logging
import os
from datetime import datetime

import yaml

from .asymptotics import DEGENERATE, classify, score_against_prediction
from .budget import RunBudget
from .dynamics import Simulation, simulate_particles
from .errors import AdvselError, BudgetExceeded, RunTimeout
from .model import load_config, validate
from .report import STATUS_SYMBOLS, generate_report, save_report

logger = logging.getLogger(__name__)


def verify_spec(spec, T=None, N=None):
    """classify -> simulate_particles -> score. Returns (prediction, simulation, score report)."""
    pred = classify(spec)
    ensemble, trajectory = simulate_particles(spec, T, N)
    sim = Simulation(ensemble, trajectory)
    score = score_against_prediction(spec, pred, sim)
    return pred, sim, score


class LabRunner:
    def __init__(self, base_dir, budget=None, T=None, N=None, env=None):
        self.base_dir = base_dir
        self.problems_dir = os.path.join(self.base_dir, "problems")
        self.reports_dir = os.path.join(self.base_dir, "reports")
        self.budget = budget or RunBudget()
        self.T = T
        self.N = N
        self.env = env

    def load_yaml(self, path):
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)

    def suite_paths(self, suite_name):
        index = self.load_yaml(os.path.join(self.problems_dir, "index.yaml"))
        suite = (index.get("suites") or {}).get(suite_name)
        if not suite:
            raise KeyError(suite_name)
        return [os.path.join(self.problems_dir, rel) for rel in suite.get("problems", [])]

    def verify_problem(self, path):
        """Run one problem; returns a result dict for the report. Failures become FAIL rows."""
        config = load_config(path, env=self.env)
        print(f"\n--- Problem: {config.name} ---")
        if config.description:
            print(f"Description: {config.description}")
        result = {"id": config.name, "status": "FAIL", "verdict": None, "metrics": {}, "error": None}
        try:
            spec = validate(config)
            pred, _sim, score = self.budget.call_with_timeout(verify_spec, spec, self.T, self.N)
        except RunTimeout as e:
            print(f"[Run] {e}")
            result["error"] = str(e)
            return result
        except AdvselError as e:
            print(f"[Run] {type(e).__name__}: {e}")
            result["error"] = f"{type(e).__name__}: {e}"
            return result
        except Exception as e:
            logger.exception("unexpected failure in %s", config.name)
            print(f"[Run] ❌ unexpected {type(e).__name__}: {e}")
            result["error"] = f"{type(e).__name__}: {e}"
            return result

        print(f"[Predict] {pred.summary()}")
        status = score.status.upper()
        if pred.verdict == DEGENERATE:
            status = "SKIP"
        result.update(status=status, verdict=pred.verdict, metrics=dict(score.metrics))
        print(f"[Result] {STATUS_SYMBOLS.get(status, '?')} {status}")
        for note in score.notes:
            print(f"[Result] {note}")
        return result

    def run_suite(self, suite_name, save_report_file=False):
        paths = self.suite_paths(suite_name)

        print("=" * 60)
        print(f"   advsel — Suite: {suite_name} ({len(paths)} problems)")
        print("=" * 60)

        self.budget.start_suite()
        suite_results = []
        names = []
        for path in paths:
            try:
                self.budget.check_suite_time()
                self.budget.check_run_count()
            except BudgetExceeded as e:
                print(f"[Budget] {e}")
                name = os.path.splitext(os.path.basename(path))[0]
                suite_results.append({"id": name, "status": "SKIP", "verdict": None, "metrics": {},
                                      "error": str(e)})
                names.append(name)
                continue
            result = self.verify_problem(path)
            self.budget.record_run()
            suite_results.append(result)
            names.append(result["id"])

        report_text = generate_report(suite_name, names, suite_results,
                                      budget_summary=self.budget.summary(), print_output=True)
        if save_report_file:
            os.makedirs(self.reports_dir, exist_ok=True)
            timestamp = datetime.now().strftime("%Y%m%d-%H%M%S")
            report_path = os.path.join(self.reports_dir, f"{suite_name}-{timestamp}.md")
            save_report(report_text, report_path)
            print(f"Report saved to: {report_path}\n")
        return suite_results
