"""
Tests for the expression language: parsing, evaluation, one-sided limits and
symbolic derivatives.
"""
import math

import numpy as np
import pytest

from advsel.errors import ExprDomainError, ExprSyntaxError, NotDifferentiable, UnknownIdentifier
from advsel.expr import breakpoints, differentiate, evaluate_lenient, parse_expression


# ── Parsing and evaluation ────────────────────────────────────────────────────

class TestParse:
    def test_logistic_velocity(self):
        assert parse_expression("x*(1-x)").evaluate(0.5) == 0.25

    def test_linear_growth_rate(self):
        assert parse_expression("6 - 0.5*x").evaluate(1.0) == 5.5

    def test_indicator_initial_data(self):
        n0 = parse_expression("6*ind(0,1)")
        assert n0.evaluate(0.5) == 6.0
        assert n0.evaluate(1.5) == 0.0

    def test_closed_and_open_indicator_ends(self):
        assert parse_expression("ind(0, 1)").evaluate(1.0) == 1.0
        assert parse_expression("ind_oo(0, 1)").evaluate(1.0) == 0.0
        assert parse_expression("ind_co(0, 1)").evaluate(0.0) == 1.0
        assert parse_expression("ind_oc(0, 1)").evaluate(0.0) == 0.0

    def test_power_is_right_associative(self):
        assert parse_expression("2^3^2").evaluate(0.0) == 512.0
        assert parse_expression("2**3").evaluate(0.0) == 8.0

    def test_unary_minus_binds_looser_than_power(self):
        assert parse_expression("-x^2").evaluate(3.0) == -9.0

    def test_constants_and_functions(self):
        e = parse_expression("exp(ln(x)) + sin(pi/2) + cos(0) + sqrt(4) + abs(-1) + log(e)")
        assert e.evaluate(2.0) == pytest.approx(2.0 + 1 + 1 + 2 + 1 + 1)

    def test_vectorised_evaluation(self):
        xs = np.linspace(0, 1, 5)
        np.testing.assert_allclose(parse_expression("x*(1-x)").evaluate(xs), xs * (1 - xs))

    def test_str_round_trips_through_parser(self):
        e = parse_expression("6*ind(0, 1) - exp(-x^2)/2")
        again = parse_expression(str(e))
        xs = np.linspace(-2, 2, 17)
        np.testing.assert_allclose(again.evaluate(xs), e.evaluate(xs))


class TestParseErrors:
    def test_syntax_error_reports_byte_offset(self):
        with pytest.raises(ExprSyntaxError) as info:
            parse_expression("x*(1-")
        assert 0 <= info.value.offset <= len("x*(1-")

    def test_unknown_identifier(self):
        with pytest.raises(UnknownIdentifier) as info:
            parse_expression("x + y")
        assert info.value.name == "y"
        assert info.value.offset == 4

    def test_unknown_function(self):
        with pytest.raises(UnknownIdentifier):
            parse_expression("tanh(x)")

    def test_indicator_bounds_must_be_constant(self):
        with pytest.raises(ExprSyntaxError):
            parse_expression("ind(0, x)")

    def test_indicator_bounds_must_be_ordered(self):
        with pytest.raises(ExprSyntaxError):
            parse_expression("ind(1, 0)")

    def test_wrong_arity(self):
        with pytest.raises(ExprSyntaxError):
            parse_expression("exp(x, 1)")


class TestDomainErrors:
    def test_log_of_non_positive(self):
        with pytest.raises(ExprDomainError):
            parse_expression("ln(x)").evaluate(-1.0)

    def test_division_by_zero(self):
        with pytest.raises(ExprDomainError):
            parse_expression("1/x").evaluate(0.0)


# ── Derivatives ───────────────────────────────────────────────────────────────

class TestDifferentiate:
    def test_logistic_derivative(self):
        d = differentiate(parse_expression("x*(1-x)"))
        assert d.evaluate(1.0) == pytest.approx(-1.0)
        assert d.evaluate(0.0) == pytest.approx(1.0)

    def test_linear_rate(self):
        assert differentiate(parse_expression("6-4*x")).evaluate(0.3) == pytest.approx(-4.0)

    def test_exp_at_zero(self):
        assert differentiate(parse_expression("exp(x)")).evaluate(0.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("text", [
        "x*(1-x)", "x - x^3", "2 + cos(3*(x + 0.25))", "12*exp(-x)", "sqrt(1 + x^2)",
        "x^2.5", "ln(2 + x)/(1 + x^2)",
    ])
    def test_matches_central_differences(self, text):
        e = parse_expression(text)
        d = differentiate(e)
        for x in (0.3, 0.7, 1.1):
            h = 1e-5
            fd = (e.evaluate(x + h) - e.evaluate(x - h)) / (2 * h)
            assert d.evaluate(x) == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_indicator_derivative_is_zero_off_breakpoints(self):
        d = differentiate(parse_expression("6*ind(0,1)"))
        assert d.evaluate(0.5) == 0.0

    def test_indicator_derivative_undefined_at_breakpoint(self):
        d = differentiate(parse_expression("6*ind(0,1)"))
        with pytest.raises(NotDifferentiable):
            d.evaluate(1.0)

    def test_abs_kink_one_sided(self):
        d = differentiate(parse_expression("abs(x - 1)"))
        with pytest.raises(NotDifferentiable):
            d.evaluate(1.0)
        assert d.evaluate(1.0, side="right") == 1.0
        assert d.evaluate(1.0, side="left") == -1.0
        assert evaluate_lenient(d, 1.0) == 1.0


def random_expression(rng, depth):
    """Text of a smooth expression, finite on the real line."""
    if depth == 0 or rng.random() < 0.2:
        return "x" if rng.random() < 0.6 else f"{rng.uniform(0.5, 3.0):.3f}"
    a = random_expression(rng, depth - 1)
    kind = int(rng.integers(10))
    if kind == 0:
        return f"sin({a})"
    if kind == 1:
        return f"cos({a})"
    if kind == 2:
        return f"exp(sin({a}))"
    if kind == 3:
        return f"sqrt(1 + ({a})^2)"
    if kind == 4:
        return f"ln(2 + cos({a}))"
    if kind == 5:
        return f"-({a})^2"
    b = random_expression(rng, depth - 1)
    if kind == 6:
        return f"({a}) + ({b})"
    if kind == 7:
        return f"({a}) - ({b})"
    if kind == 8:
        return f"({a})*({b})"
    return f"({a})/(1 + ({b})^2)"


def test_derivative_matches_differences_on_random_expressions():
    rng = np.random.default_rng(7)
    h = 1e-5
    for _ in range(1000):
        text = random_expression(rng, 3)
        e = parse_expression(text)
        d = differentiate(e)
        for x in rng.uniform(-1.5, 1.5, 3):
            fd = (e.evaluate(x + h) - e.evaluate(x - h)) / (2 * h)
            assert d.evaluate(x) == pytest.approx(fd, rel=1e-5, abs=1e-5), text


class TestOneSided:
    def test_indicator_one_sided_limits(self):
        n0 = parse_expression("6*ind(0,1)")
        assert n0.evaluate(0.0, side="right") == 6.0
        assert n0.evaluate(0.0, side="left") == 0.0
        assert n0.evaluate(1.0, side="left") == 6.0
        assert n0.evaluate(1.0, side="right") == 0.0

    def test_breakpoints_collects_indicators(self):
        assert breakpoints(parse_expression("ind(0,1) + 2*ind_oo(0.5, 3)")) == [0.0, 0.5, 1.0, 3.0]

    def test_no_breakpoints_in_smooth_expression(self):
        assert breakpoints(parse_expression("exp(-x^2)")) == []


def test_evaluation_is_plain_ieee_arithmetic():
    e = parse_expression("0.1 + 0.2*x")
    assert e.evaluate(1.0) == 0.1 + 0.2 * 1.0
    assert math.isclose(e.evaluate(1.0), 0.30000000000000004, rel_tol=0, abs_tol=0)
