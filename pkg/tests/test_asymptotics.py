"""
Tests for regime classification, limit profiles, weak stationarity and
scoring simulations against verdicts.
"""
import math

import numpy as np
import pytest

from advsel.asymptotics import (
    CONVERGED_EARLY,
    DEGENERATE,
    DIRAC,
    EXTINCTION,
    FITTED,
    FITTED_EARLY,
    INCONCLUSIVE,
    PASS,
    PROFILE,
    RegimePrediction,
    build_limit_profile,
    classify,
    dirac_stationarity_residual,
    exponential_rate_fit,
    relative_drift,
    score_against_prediction,
    speed_of,
    stationarity_residual,
)
from advsel.carrying import EXPONENTIAL, UNKNOWN, gl_panels
from advsel.dynamics import PARTICLES, RhoTrajectory, Simulation, simulate_particles
from advsel.errors import NonApplicableFormula

from conftest import load_problem, make_spec


def synthetic_trajectory(times, rho):
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    return RhoTrajectory(times, rho, rho[:, None], np.zeros_like(times), PARTICLES)


# ── Classification ────────────────────────────────────────────────────────────

class TestClassify:
    def test_stable_end_is_dirac_at_stable_end(self, stable_spec):
        pred = classify(stable_spec)
        assert pred.verdict == DIRAC
        assert pred.location == pytest.approx(1.0)
        assert pred.mass == pytest.approx(5.5)
        assert pred.limit == pytest.approx(5.5)
        assert pred.provenance == "unstable-to-stable/stable-end"

    def test_unstable_end_is_profile(self, unstable_spec):
        pred = classify(unstable_spec)
        assert pred.verdict == PROFILE
        assert pred.interval == (0.0, 1.0)
        assert pred.anchor == pytest.approx(0.0)
        assert pred.alpha == 0.0
        assert pred.rho_inf == pytest.approx(5.0)

    @pytest.mark.parametrize("relpath, verdict, limit, where", [
        ("core/alpha-one.yaml", PROFILE, 4.0, 0.0),
        ("core/extinction.yaml", EXTINCTION, 0.0, None),
        ("limits/unique-stable.yaml", DIRAC, 2.0, 0.0),
        ("limits/mirrored.yaml", PROFILE, 5.0, 1.0),
        ("limits/half-line.yaml", PROFILE, 11.0, 0.0),
        ("limits/no-root.yaml", EXTINCTION, 0.0, None),
        ("limits/plateau.yaml", DIRAC, 3.0, -0.25),
        ("limits/multi-equilibria.yaml", PROFILE, 4.0, 0.0),
    ])
    def test_bundled_problems(self, relpath, verdict, limit, where):
        pred = classify(load_problem(relpath))
        assert pred.verdict == verdict
        assert pred.limit == pytest.approx(limit, abs=1e-6)
        if verdict == DIRAC:
            assert pred.location == pytest.approx(where, abs=1e-6)
        elif verdict == PROFILE:
            assert pred.anchor == pytest.approx(where, abs=1e-9)

    def test_two_sided_profile_spans_both_compartments(self):
        pred = classify(load_problem("limits/multi-equilibria.yaml"))
        lo, hi = pred.interval
        assert (lo, hi) == (pytest.approx(-1.0), pytest.approx(1.0))
        assert len(pred.compartments) == 2

    def test_half_line_profile_is_truncated_at_domain(self):
        pred = classify(load_problem("limits/half-line.yaml"))
        assert pred.interval == (pytest.approx(0.0, abs=1e-9), 6.0)

    def test_tie_inside_a_compartment(self):
        pred = classify(make_spec("x*(1-x)", "6 - x", "6*ind(0,1)", (0, 1)))
        assert pred.verdict == DEGENERATE
        assert "tie" in pred.reason
        assert pred.limit is None

    def test_non_hyperbolic_root(self):
        pred = classify(make_spec("-x^3", "2", "ind(-0.5, 0.5)", (-1, 1)))
        assert pred.verdict == DEGENERATE
        assert "non-hyperbolic" in pred.reason

    def test_plateau_junction_maximum(self):
        spec = make_spec("0.5*(x - 1 + abs(x - 1))", "2 + x", "ind(-0.75, 1.5)", (-1, 2))
        pred = classify(spec)
        assert pred.verdict == DIRAC
        assert pred.location == pytest.approx(1.0, abs=1e-6)
        assert pred.mass == pytest.approx(3.0, abs=1e-6)
        assert pred.provenance == "plateau/junction-maximum"

    def test_summary_and_dict(self, stable_spec, unstable_spec):
        dirac = classify(stable_spec)
        assert dirac.summary().startswith("Dirac mass 5.5 at x=1")
        data = dirac.to_dict()
        assert data["verdict"] == DIRAC
        assert data["limits"][0]["case_tag"] == "unstable-to-stable"
        profile = classify(unstable_spec).to_dict()
        assert profile["interval"] == [0.0, 1.0]
        assert profile["formula"] == "r(a) - f'(a)"

    def test_degenerate_dict_carries_reason(self):
        pred = classify(make_spec("x*(1-x)", "6 - x", "6*ind(0,1)", (0, 1)))
        assert pred.to_dict()["degenerate_reason"] == pred.reason

    def test_speed(self, stable_spec):
        assert speed_of(classify(stable_spec)) == EXPONENTIAL
        assert speed_of(classify(load_problem("core/extinction.yaml"))) == UNKNOWN


# ── Limit profiles ────────────────────────────────────────────────────────────

class TestLimitProfile:
    def test_unstable_end_closed_form(self, unstable_spec):
        profile = build_limit_profile(unstable_spec, classify(unstable_spec))
        np.testing.assert_allclose(profile.values, 15 * (1 - profile.xs) ** 2, rtol=1e-6, atol=1e-8)
        assert profile.normalization == pytest.approx(15.0, rel=1e-6)
        assert profile(0.0) == pytest.approx(15.0, rel=1e-6)
        assert profile(1.5) == 0.0

    def test_unstable_end_mass_and_ends(self, unstable_spec):
        profile = build_limit_profile(unstable_spec, classify(unstable_spec))
        x, w = gl_panels(0.0, 1.0, 32)
        assert float(np.sum(profile(x) * w)) == pytest.approx(5.0, rel=1e-6)
        assert profile.end_exponents == {1.0: pytest.approx(2.0)}
        assert profile.endpoint_behaviour == {1.0: "zero"}

    def test_alpha_one_closed_form(self):
        spec = load_problem("core/alpha-one.yaml")
        profile = build_limit_profile(spec, classify(spec))
        np.testing.assert_allclose(profile.values, 24 * profile.xs * (1 - profile.xs), rtol=1e-5, atol=1e-7)
        assert profile.normalization == pytest.approx(24.0, rel=1e-5)

    def test_mirrored_closed_form(self):
        spec = load_problem("limits/mirrored.yaml")
        profile = build_limit_profile(spec, classify(spec))
        np.testing.assert_allclose(profile.values, 10 * profile.xs, rtol=1e-6, atol=1e-8)
        assert profile.end_exponents == {0.0: pytest.approx(1.0)}

    def test_two_sided_constant_profile(self):
        spec = load_problem("limits/multi-equilibria.yaml")
        profile = build_limit_profile(spec, classify(spec))
        np.testing.assert_allclose(profile.values, 2.0, rtol=1e-6)
        assert sorted(profile.end_exponents.values()) == [pytest.approx(0.0, abs=1e-9)] * 2

    def test_truncated_end(self):
        spec = load_problem("limits/half-line.yaml")
        profile = build_limit_profile(spec, classify(spec))
        assert profile.endpoint_behaviour == {6.0: "truncated"}
        assert profile.end_exponents == {}

    def test_dirac_has_no_profile(self, stable_spec):
        with pytest.raises(NonApplicableFormula, match="Dirac"):
            build_limit_profile(stable_spec, classify(stable_spec))


# ── Stationarity ──────────────────────────────────────────────────────────────

class TestStationarity:
    @pytest.mark.parametrize("relpath", [
        "core/unstable-end.yaml",
        "core/alpha-one.yaml",
        "limits/mirrored.yaml",
        "limits/multi-equilibria.yaml",
    ])
    def test_profiles_are_stationary(self, relpath):
        spec = load_problem(relpath)
        profile = build_limit_profile(spec, classify(spec))
        assert stationarity_residual(spec, profile) <= 1e-5

    def test_wrong_rho_is_not_stationary(self, unstable_spec):
        profile = build_limit_profile(unstable_spec, classify(unstable_spec))

        class Scaled:
            interval = profile.interval
            rho_inf = 6.0

            def __call__(self, x):
                return profile(x)

        assert stationarity_residual(unstable_spec, Scaled()) > 1e-2

    def test_dirac_at_stable_root(self, stable_spec):
        assert dirac_stationarity_residual(stable_spec, 1.0, 5.5) == pytest.approx(0.0, abs=1e-12)

    def test_dirac_off_root(self, stable_spec):
        assert dirac_stationarity_residual(stable_spec, 0.5, 5.75) > 1e-2


# ── Rates and drift ───────────────────────────────────────────────────────────

class TestRateFit:
    def test_synthetic_exponential(self):
        t = np.linspace(0.0, 40.0, 401)
        fit = exponential_rate_fit(synthetic_trajectory(t, 5.0 + 2.0 * np.exp(-0.5 * t)), 5.0)
        assert fit.slope == pytest.approx(-0.5, rel=1e-6)
        assert fit.intercept == pytest.approx(math.log(2.0), rel=1e-6)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.status == FITTED

    def test_too_few_points(self):
        t = np.linspace(0.0, 1.0, 4)
        fit = exponential_rate_fit(synthetic_trajectory(t, np.full(4, 5.0)), 5.0)
        assert math.isnan(fit.slope)
        assert fit.points == 0
        assert fit.status == CONVERGED_EARLY
        assert fit.summary() == "converged before fit window"

    def test_fast_decay_fits_before_window(self):
        # the gap reaches the noise floor near t = 5, before a quarter of the horizon
        t = np.linspace(0.0, 40.0, 401)
        fit = exponential_rate_fit(synthetic_trajectory(t, 5.0 + 2.0 * np.exp(-3.0 * t)), 5.0)
        assert fit.status == FITTED_EARLY
        assert fit.points >= 5
        assert fit.slope == pytest.approx(-3.0, rel=1e-3)

    def test_relative_drift(self):
        t = np.linspace(0.0, 10.0, 101)
        traj = synthetic_trajectory(t, 1.0 + 0.01 * t)
        assert relative_drift(traj) == pytest.approx(0.01 / 1.1, rel=0.15)


# ── Scoring ───────────────────────────────────────────────────────────────────

class TestScore:
    def test_stable_end_dirac_passes(self, stable_spec, stable_run):
        ensemble, traj = stable_run
        report = score_against_prediction(stable_spec, classify(stable_spec), Simulation(ensemble, traj))
        assert report.status == PASS
        assert report.passed
        assert report.metrics["share"] >= 0.99

    def test_unstable_end_profile_passes(self, unstable_spec, unstable_run):
        ensemble, traj = unstable_run
        report = score_against_prediction(unstable_spec, classify(unstable_spec), Simulation(ensemble, traj))
        assert report.status == PASS
        assert report.metrics["l1"] <= 0.25
        rate = report.metrics["rate"]
        assert rate is None or math.isfinite(rate)
        assert isinstance(report.metrics["rate_fit"], str)

    def test_short_run_is_inconclusive(self, stable_spec):
        ensemble, traj = simulate_particles(stable_spec, T=0.5, N=32)
        report = score_against_prediction(stable_spec, classify(stable_spec), Simulation(ensemble, traj))
        assert report.status == INCONCLUSIVE
        assert "increase T" in report.notes[0]

    def test_extinction_passes(self):
        spec = load_problem("core/extinction.yaml")
        ensemble, traj = simulate_particles(spec, N=128)
        report = score_against_prediction(spec, classify(spec), Simulation(ensemble, traj))
        assert report.status == PASS
        assert report.metrics["threshold"] == pytest.approx(0.05)
        assert report.metrics["non_increasing"] is True

    def test_degenerate_is_inconclusive(self, stable_run):
        spec = make_spec("x*(1-x)", "6 - x", "6*ind(0,1)", (0, 1))
        ensemble, traj = stable_run
        report = score_against_prediction(spec, classify(spec), Simulation(ensemble, traj))
        assert report.status == INCONCLUSIVE
        assert report.notes[0].startswith("degenerate")

    def test_dirac_needs_ensemble(self, stable_spec, stable_run):
        _ensemble, traj = stable_run
        with pytest.raises(ValueError, match="ensemble"):
            score_against_prediction(stable_spec, classify(stable_spec), Simulation(None, traj))

    def test_custom_tolerance_fails(self, stable_spec, stable_run):
        ensemble, traj = stable_run
        pred = RegimePrediction(DIRAC, "manual", location=1.0, mass=5.0)
        report = score_against_prediction(stable_spec, pred, Simulation(ensemble, traj), {"rho_abs": 0.1})
        assert report.status == "fail"
        assert report.to_dict()["tolerances"]["rho_abs"] == 0.1
