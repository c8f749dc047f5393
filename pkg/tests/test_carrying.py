"""
Tests for compartments, the S/R integrals and the carrying-capacity limit
table. For the stable-end problem S(t) = 12 e^{6t} / (e^{t/2} + 1) in closed form.
"""
import math

import numpy as np
import pytest

from advsel.carrying import (
    EXPONENTIAL,
    INTO_STABLE_END,
    NO_ROOT,
    OUT_OF_UNSTABLE_END,
    PLATEAU,
    UNKNOWN,
    UNSTABLE_TO_STABLE,
    R_value,
    S_plateau,
    S_value,
    build_compartments,
    carrying_table,
    initial_mass,
    plateau_maximum,
    predict_R_limit,
    quadrature_nodes,
)
from advsel.errors import DegenerateLimit, NonApplicableFormula
from advsel.model import FITTED, STABLE, UNSTABLE, USER_DECLARED, validate

from conftest import load_problem, make_spec


def stable_S(t):
    return 12 * math.exp(6 * t) / (math.exp(t / 2) + 1)


def stable_R(t):
    return 6 - 0.5 * math.exp(t / 2) / (math.exp(t / 2) + 1)


# ── Compartments ──────────────────────────────────────────────────────────────

class TestBuildCompartments:
    def test_logistic_single_compartment(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        assert (comp.lo, comp.hi) == (0.0, 1.0)
        assert comp.direction == 1
        assert comp.source.kind == UNSTABLE
        assert comp.sink.kind == STABLE
        assert comp.vanishing.alpha == 0.0
        assert comp.vanishing.coefficient == 6.0

    def test_alpha_one_vanishing_is_fitted(self):
        (comp,) = build_compartments(load_problem("core/alpha-one.yaml"))
        assert comp.vanishing.source == FITTED
        assert comp.vanishing.alpha == pytest.approx(1.0, abs=1e-6)

    def test_mirrored_orientation(self):
        (comp,) = build_compartments(load_problem("limits/mirrored.yaml"))
        assert comp.direction == -1
        assert comp.source.location == pytest.approx(1.0)
        assert comp.sink.location == pytest.approx(0.0)
        assert comp.source_side == "left"

    def test_only_compartments_meeting_the_support(self):
        spec = load_problem("limits/multi-equilibria.yaml")
        comps = build_compartments(spec)
        assert [(round(c.lo, 9), round(c.hi, 9)) for c in comps] == [(-1.0, 0.0), (0.0, 1.0)]

    def test_plateau_compartment(self):
        comps = build_compartments(load_problem("limits/plateau.yaml"))
        assert [c.plateau for c in comps] == [True, False]
        assert comps[1].source.kind == UNSTABLE

    def test_user_declared_alpha(self):
        spec = validate({
            "f": "x*(1-x)", "r": "6-4*x", "n0": "6*x*ind(0,1)", "domain": [0, 1],
            "alpha_hint": {"root": 0.0, "side": "right", "alpha": 2.0, "C": 3.0},
        })
        (comp,) = build_compartments(spec)
        assert comp.vanishing.source == USER_DECLARED
        assert (comp.vanishing.alpha, comp.vanishing.coefficient) == (2.0, 3.0)
        assert predict_R_limit(spec, comp).value == pytest.approx(3.0)


# ── S and R ───────────────────────────────────────────────────────────────────

class TestIntegrals:
    def test_initial_mass(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        assert initial_mass(stable_spec, comp) == pytest.approx(6.0, rel=1e-10)

    def test_quadrature_nodes_carry_initial_mass(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        _nodes, mass = quadrature_nodes(stable_spec, comp, 10.0)
        assert mass.sum() == pytest.approx(6.0, rel=1e-10)

    def test_pullback_matches_closed_form(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        for t in (0.0, 1.0, 4.0):
            assert S_value(stable_spec, comp, t) == pytest.approx(stable_S(t), rel=1e-6)

    def test_pushforward_matches_pullback(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        assert S_value(stable_spec, comp, 1.0, form="pushforward") == pytest.approx(stable_S(1.0), rel=1e-5)

    def test_damped_value(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        damped = S_value(stable_spec, comp, 2.0, l=5.5)
        assert damped == pytest.approx(stable_S(2.0) * math.exp(-11.0), rel=1e-6)

    def test_unknown_form(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        with pytest.raises(ValueError):
            S_value(stable_spec, comp, 1.0, form="sideways")

    def test_R_value(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        for t in (0.0, 2.0, 8.0):
            assert R_value(stable_spec, comp, t) == pytest.approx(stable_R(t), abs=1e-6)

    def test_carrying_table(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        times = np.linspace(0.0, 6.0, 61)
        table = carrying_table(stable_spec, comp, times)
        expected = np.array([stable_R(t) for t in times])
        np.testing.assert_allclose(table.R, expected, atol=1e-6)
        np.testing.assert_allclose(table.log_S, [math.log(stable_S(t)) for t in times], rtol=1e-7)
        assert float(table.R_at(2.55)) == pytest.approx(stable_R(2.55), abs=1e-6)

    def test_plateau_integral(self):
        spec = load_problem("limits/plateau.yaml")
        plateau = build_compartments(spec)[0]
        assert S_plateau(spec, plateau, 0.0) == pytest.approx(1.75, rel=1e-8)
        with pytest.raises(NonApplicableFormula):
            S_value(spec, plateau, 1.0)

    def test_plateau_integral_needs_plateau(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        with pytest.raises(NonApplicableFormula):
            S_plateau(stable_spec, comp, 1.0)


# ── Limit table ───────────────────────────────────────────────────────────────

class TestPredictLimit:
    def test_stable_end_wins(self, stable_spec):
        (comp,) = build_compartments(stable_spec)
        lim = predict_R_limit(stable_spec, comp)
        assert lim.value == pytest.approx(5.5)
        assert (lim.case_tag, lim.branch, lim.origin) == (UNSTABLE_TO_STABLE, "stable-end", "stable")
        assert lim.speed == EXPONENTIAL

    def test_unstable_end_wins(self, unstable_spec):
        (comp,) = build_compartments(unstable_spec)
        lim = predict_R_limit(unstable_spec, comp)
        assert lim.value == pytest.approx(5.0)
        assert lim.branch == "unstable-end"
        assert lim.formula == "r(a) - f'(a)"

    def test_vanishing_order_shifts_unstable_value(self):
        spec = load_problem("core/alpha-one.yaml")
        (comp,) = build_compartments(spec)
        lim = predict_R_limit(spec, comp)
        assert lim.value == pytest.approx(4.0, abs=1e-6)
        assert lim.alpha == pytest.approx(1.0, abs=1e-6)

    def test_into_stable_end(self):
        spec = load_problem("limits/unique-stable.yaml")
        for comp in build_compartments(spec):
            lim = predict_R_limit(spec, comp)
            assert lim.case_tag == INTO_STABLE_END
            assert lim.value == pytest.approx(2.0)

    def test_out_of_unstable_end_negative(self):
        spec = load_problem("core/extinction.yaml")
        for comp in build_compartments(spec):
            lim = predict_R_limit(spec, comp)
            assert (lim.case_tag, lim.branch, lim.value) == (OUT_OF_UNSTABLE_END, "negative", 0.0)
            assert lim.speed == UNKNOWN

    def test_out_of_unstable_end_positive(self):
        spec = load_problem("limits/half-line.yaml")
        (comp,) = build_compartments(spec)
        lim = predict_R_limit(spec, comp)
        assert lim.value == pytest.approx(11.0)
        assert lim.branch == "positive"

    def test_no_root(self):
        spec = load_problem("limits/no-root.yaml")
        (comp,) = build_compartments(spec)
        lim = predict_R_limit(spec, comp)
        assert (lim.case_tag, lim.value) == (NO_ROOT, 0.0)

    def test_initial_data_zero_near_source(self):
        spec = make_spec("x*(1-x)", "6-4*x", "ind(0.5, 1)", (0, 1))
        (comp,) = build_compartments(spec)
        lim = predict_R_limit(spec, comp)
        assert lim.branch == "n0 zero near a"
        assert lim.value == pytest.approx(2.0)

    def test_plateau_interior_maximum(self):
        spec = load_problem("limits/plateau.yaml")
        plateau = build_compartments(spec)[0]
        top = plateau_maximum(spec, plateau)
        assert top.position == "interior"
        assert top.location == pytest.approx(-0.25, abs=1e-6)
        assert top.curvature == pytest.approx(-9.0, rel=1e-4)
        lim = predict_R_limit(spec, plateau)
        assert (lim.case_tag, lim.value) == (PLATEAU, pytest.approx(3.0))

    def test_tie_is_degenerate(self):
        spec = make_spec("x*(1-x)", "6 - x", "6*ind(0,1)", (0, 1))
        (comp,) = build_compartments(spec)
        with pytest.raises(DegenerateLimit, match="tie"):
            predict_R_limit(spec, comp)

    def test_non_hyperbolic_sink_is_degenerate(self):
        spec = make_spec("-x^3", "2", "ind(-0.5, 0.5)", (-1, 1))
        comp = build_compartments(spec)[0]
        with pytest.raises(DegenerateLimit, match="non-hyperbolic"):
            predict_R_limit(spec, comp)


class TestAttainedLimits:
    """R(T*) approaches the predicted limit on the bundled limit-table problems."""

    @pytest.mark.parametrize("relpath", [
        "limits/unique-stable.yaml",
        "limits/mirrored.yaml",
        "limits/multi-equilibria.yaml",
        "core/unstable-end.yaml",
        "core/alpha-one.yaml",
    ])
    def test_converges_to_prediction(self, relpath):
        spec = load_problem(relpath)
        for comp in build_compartments(spec):
            lim = predict_R_limit(spec, comp)
            assert R_value(spec, comp, 20.0) == pytest.approx(lim.value, abs=0.02 * (1 + lim.value))

    def test_zero_limit(self):
        spec = load_problem("core/extinction.yaml")
        for comp in build_compartments(spec):
            assert R_value(spec, comp, 20.0) <= 0.05

    @pytest.mark.parametrize("f, r, n0, domain, tag, limit", [
        # into a stable root, n0 vanishing there
        ("-x", "2 - x^2", "x^2*ind(-0.8, 0.8)", (-1, 1), INTO_STABLE_END, 2.0),
        # out of an unstable root with no stable root downstream, alpha = 0, 1, 2
        ("x", "12*exp(-x)", "ind(0, 1)", (-1, 6), OUT_OF_UNSTABLE_END, 11.0),
        ("x", "12*exp(-x)", "x*ind(0, 1)", (-1, 6), OUT_OF_UNSTABLE_END, 10.0),
        ("x", "12*exp(-x)", "x^2*ind(0, 1)", (-1, 6), OUT_OF_UNSTABLE_END, 9.0),
        ("x", "12*exp(x)", "x^2*ind(-1, 0)", (-6, 1), OUT_OF_UNSTABLE_END, 9.0),
        # unstable root to stable root, alpha = 2
        ("x*(1-x)", "6 - 4*x", "x^2*ind(0, 1)", (0, 1), UNSTABLE_TO_STABLE, 3.0),
        # mirrored: unstable root at 1, alpha = 0, 1, 2
        ("x*(x-1)", "2 + 4*x", "ind(0, 1)", (0, 1), UNSTABLE_TO_STABLE, 5.0),
        ("x*(x-1)", "2 + 4*x", "(1-x)*ind(0, 1)", (0, 1), UNSTABLE_TO_STABLE, 4.0),
        ("x*(x-1)", "2 + 4*x", "(1-x)^2*ind(0, 1)", (0, 1), UNSTABLE_TO_STABLE, 3.0),
        # shifted unstable-end problem
        ("(x-1)*(2-x)", "10 - 4*x", "6*ind(1, 2)", (1, 2), UNSTABLE_TO_STABLE, 5.0),
    ])
    def test_limit_table_cases(self, f, r, n0, domain, tag, limit):
        spec = make_spec(f, r, n0, domain)
        comps = build_compartments(spec)
        assert comps
        for comp in comps:
            lim = predict_R_limit(spec, comp)
            assert lim.case_tag == tag
            assert lim.value == pytest.approx(limit, abs=1e-4)
            assert R_value(spec, comp, 20.0) == pytest.approx(limit, abs=0.02 * (1 + limit))

    @pytest.mark.parametrize("f", ["1", "-1"])
    def test_no_root_limit_is_zero(self, f):
        spec = make_spec(f, "2*exp(-x^2)", "ind(-0.5, 0.5)", (-1, 1))
        (comp,) = build_compartments(spec)
        lim = predict_R_limit(spec, comp)
        assert (lim.case_tag, lim.value) == (NO_ROOT, 0.0)
        assert R_value(spec, comp, 20.0) <= 0.05

    def test_plateau_limit_attained(self):
        spec = load_problem("limits/plateau.yaml")
        plateau = next(c for c in build_compartments(spec) if c.plateau)
        assert R_value(spec, plateau, 20.0) == pytest.approx(3.0, abs=0.08)

    def test_plateau_outflow_compartment(self):
        spec = load_problem("limits/plateau.yaml")
        outflow = next(c for c in build_compartments(spec) if not c.plateau)
        lim = predict_R_limit(spec, outflow)
        r_end = 2 + math.cos(3 * 1.75)
        assert lim.value == pytest.approx(r_end, abs=1e-6)
        assert R_value(spec, outflow, 20.0) == pytest.approx(r_end, abs=0.02 * (1 + r_end))
