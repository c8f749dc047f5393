"""
RunBudget: wall-clock limits for verify runs and suites.

A single verify run (classify, simulate, score) is bounded by
`max_run_seconds`; a suite by `max_suite_seconds` and `max_runs`. Numerical
settings bound the work inside a run; this module bounds the time the lab
is willing to spend on it.
"""

import threading
import time

from .errors import BudgetExceeded, RunTimeout

DEFAULT_RUN_TIMEOUT = 120       # seconds per verify run
DEFAULT_MAX_RUNS = 64           # per suite
DEFAULT_MAX_SUITE_SECONDS = 1800


class RunBudget:
    """
    Tracks and enforces run- and suite-level limits.

    Usage:
        budget = RunBudget(max_run_seconds=60)
        budget.start_suite()
        for problem in problems:
            budget.check_suite_time()
            budget.check_run_count()
            report = budget.call_with_timeout(verify_problem, problem)
            budget.record_run()
    """

    def __init__(
        self,
        max_run_seconds=DEFAULT_RUN_TIMEOUT,
        max_runs=DEFAULT_MAX_RUNS,
        max_suite_seconds=DEFAULT_MAX_SUITE_SECONDS,
    ):
        self.max_run_seconds = max_run_seconds
        self.max_runs = max_runs
        self.max_suite_seconds = max_suite_seconds

        self._suite_start = None
        self._run_count = 0

    def start_suite(self):
        self._suite_start = time.monotonic()
        self._run_count = 0

    def elapsed_suite(self):
        if self._suite_start is None:
            return 0.0
        return time.monotonic() - self._suite_start

    @property
    def runs(self):
        return self._run_count

    def check_suite_time(self):
        """Raise BudgetExceeded once the suite wall-clock limit is used up."""
        elapsed = self.elapsed_suite()
        if elapsed > self.max_suite_seconds:
            raise BudgetExceeded(
                f"Suite time limit reached: {elapsed:.0f}s elapsed "
                f"(max {self.max_suite_seconds}s). Remaining problems skipped."
            )

    def check_run_count(self):
        if self._run_count >= self.max_runs:
            raise BudgetExceeded(
                f"Run limit reached: {self._run_count} runs (max {self.max_runs}). "
                f"Remaining problems skipped."
            )

    def record_run(self):
        self._run_count += 1

    def call_with_timeout(self, fn, *args, **kwargs):
        """
        Call fn(*args, **kwargs) in a daemon thread and wait at most
        max_run_seconds. Raises RunTimeout when it does not finish; the
        thread is abandoned, not killed.
        """
        result = [None]
        exc = [None]
        completed = threading.Event()

        def _run():
            try:
                result[0] = fn(*args, **kwargs)
            except BaseException as e:  # re-raised in the caller
                exc[0] = e
            finally:
                completed.set()

        worker = threading.Thread(target=_run, daemon=True)
        worker.start()
        if not completed.wait(timeout=self.max_run_seconds):
            raise RunTimeout(f"Run timed out after {self.max_run_seconds}s. Problem marked as failed.")
        if exc[0] is not None:
            raise exc[0]
        return result[0]

    def summary(self):
        return (
            f"Run budget: {self._run_count}/{self.max_runs} runs, "
            f"{self.elapsed_suite():.0f}s of {self.max_suite_seconds}s elapsed"
        )
