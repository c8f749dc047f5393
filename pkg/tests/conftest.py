"""Test configuration.

Ensures the project root is on sys.path so `import advsel` works
regardless of how pytest is invoked (CI runners, IDEs, etc.), and offers the
two bundled logistic-flow problems as fixtures.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from advsel.model import load_config, validate  # noqa: E402

PROBLEMS_DIR = PROJECT_ROOT / "problems"


def load_problem(relpath, **numerics):
    config = load_config(PROBLEMS_DIR / relpath)
    if numerics:
        config = config.with_numerics(**numerics)
    return validate(config)


def make_spec(f, r, n0, domain, **numerics):
    data = {"f": f, "r": r, "n0": n0, "domain": list(domain)}
    if numerics:
        data["numerics"] = numerics
    return validate(data)


@pytest.fixture(scope="session")
def stable_spec():
    return load_problem("core/stable-end.yaml")


@pytest.fixture(scope="session")
def unstable_spec():
    return load_problem("core/unstable-end.yaml")


@pytest.fixture(scope="session")
def stable_run(stable_spec):
    from advsel.dynamics import simulate_particles

    return simulate_particles(stable_spec)


@pytest.fixture(scope="session")
def unstable_run(unstable_spec):
    from advsel.dynamics import simulate_particles

    return simulate_particles(unstable_spec)
