"""
Exception hierarchy for advsel.

Every error raised on purpose by the package derives from AdvselError so the
CLI can map families of failures onto stable exit codes.
"""

from __future__ import annotations


class AdvselError(Exception):
    """Base class for all advsel errors."""
    pass


# ── Expressions ───────────────────────────────────────────────────────────────

class ExprError(AdvselError):
    """Raised for any problem with a user-supplied expression."""
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, text, offset, detail=""):
        self.text = text
        self.offset = offset
        self.detail = detail
        super().__init__(f"Syntax error at byte {offset} in {text!r}" + (f": {detail}" if detail else ""))


class UnknownIdentifier(ExprError):
    def __init__(self, name, offset):
        self.name = name
        self.offset = offset
        super().__init__(f"Unknown identifier '{name}' at byte {offset}")


class ExprDomainError(ExprError):
    def __init__(self, operation, x):
        self.operation = operation
        self.x = x
        super().__init__(f"Domain error in {operation} at x={x!r}")


class NotDifferentiable(ExprError):
    def __init__(self, x, what="breakpoint"):
        self.x = x
        super().__init__(f"Derivative undefined at x={x!r} ({what}); pass side='left' or side='right'")


# ── Problem data ──────────────────────────────────────────────────────────────

class ValidationFailed(AdvselError):
    """Raised by model.validate with the full list of fatal violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(v.message for v in self.violations)
        super().__init__(f"Problem validation failed: {lines}")


class FitRefused(AdvselError):
    """The vanishing-order regression was not good enough to classify on."""
    pass


# ── Flows and integrals ───────────────────────────────────────────────────────

class FlowError(AdvselError):
    pass


class FlowExitedDomain(FlowError):
    def __init__(self, exit_time, position):
        self.exit_time = exit_time
        self.position = position
        super().__init__(f"Characteristic left the domain at t={exit_time:.6g} (x={position:.6g})")


class StepUnderflow(FlowError):
    pass


class IntegralError(AdvselError):
    pass


class StraddlesRoot(IntegralError):
    def __init__(self, lo, hi, root):
        self.root = root
        super().__init__(f"Interval [{lo:.6g}, {hi:.6g}] straddles the root {root:.6g} of f")


class NonIntegrableEndpoint(IntegralError):
    def __init__(self, root, exponent):
        self.root = root
        self.exponent = exponent
        super().__init__(f"Integrand is not integrable at the root {root:.6g} (local exponent {exponent:.6g})")


# ── Carrying capacities and dynamics ─────────────────────────────────────────

class NonApplicableFormula(AdvselError):
    pass


class NumericFailure(AdvselError):
    def __init__(self, message, compartment=None):
        self.compartment = compartment
        if compartment is not None:
            message = f"compartment {compartment}: {message}"
        super().__init__(message)


class DegenerateLimit(AdvselError):
    """The limit table has no answer for this configuration (equality or non-hyperbolic case)."""

    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)


# ── Budgets ──────────────────────────────────────────────────────────────────

class BudgetExceeded(AdvselError):
    """Raised when a run- or suite-level budget limit is hit."""
    pass


class RunTimeout(BudgetExceeded):
    """Raised when a single run exceeds its time limit."""
    pass
