"""
Problem data: numeric settings, validated problem specs, equilibria of f and
vanishing orders of n0 at those equilibria.

A problem is the triple (f, r, n0) of expression strings plus a working
domain [lo, hi]. `validate` turns a raw config into an immutable ProblemSpec
or raises ValidationFailed listing every violated hypothesis.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from functools import cached_property

import numpy as np
import yaml
from scipy.optimize import brentq, minimize_scalar

from .errors import ExprDomainError, FitRefused, NotDifferentiable, ValidationFailed
from .expr import Expr, breakpoints, differentiate, parse_expression

logger = logging.getLogger(__name__)

ENV_PREFIX = "ADVSEL_"

STABLE = "stable"
UNSTABLE = "unstable"
NON_HYPERBOLIC = "non-hyperbolic"

USER_DECLARED = "user-declared"
FITTED = "fitted"
EXACTLY_ZERO_NEARBY = "exactly-zero-nearby"

# Below this n0 counts as zero when computing supports.
MACHINE_FLOOR = np.finfo(float).tiny

REQUIRED_CONFIG_FIELDS = ["f", "r", "n0", "domain"]
OPTIONAL_CONFIG_FIELDS = ["name", "description", "alpha_hint", "numerics"]


# ---------------------------------------------------------------------------
# Numeric settings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NumericConfig:
    tol_root: float = 1e-10
    tol_hyperbolic: float = 1e-6
    tol_fit: float = 0.05
    ode_rel_tol: float = 1e-9
    ode_abs_tol: float = 1e-12
    quad_rel_tol: float = 1e-10
    t_horizon: float = 40.0
    grid_n: int = 2048
    particles: int = 512
    tie_tol: float = 1e-6
    dirac_radius_fraction: float = 0.05
    stationarity_tests: int = 16
    r_grid_points: int = 801
    deterministic: bool = True

    @classmethod
    def from_mapping(cls, data=None, env=None):
        """
        Build settings from a config table, with ADVSEL_<FIELD> environment
        overrides taking precedence. Raises ValidationFailed on unknown keys or
        non-positive values.
        """
        data = dict(data or {})
        known = {f.name: f for f in fields(cls)}
        violations = []
        for key in data:
            if key not in known:
                violations.append(Violation("UnknownNumericsField", "numerics", f"Unknown numerics field '{key}'"))
        if env:
            for name in known:
                raw = env.get(ENV_PREFIX + name.upper())
                if raw is not None:
                    data[name] = raw
        values = {}
        for name, spec_field in known.items():
            if name not in data:
                continue
            raw = data[name]
            try:
                if spec_field.type in ("bool", bool):
                    values[name] = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes")
                elif spec_field.type in ("int", int):
                    values[name] = int(float(raw))
                else:
                    values[name] = float(raw)
            except (TypeError, ValueError):
                violations.append(Violation("InvalidNumerics", "numerics", f"numerics.{name} is not a number: {raw!r}"))
        config = cls(**values) if not violations else cls()
        for name, value in asdict(config).items():
            if isinstance(value, bool):
                continue
            if not value > 0:
                violations.append(Violation("InvalidNumerics", "numerics", f"numerics.{name} must be positive (got {value})"))
        if violations:
            raise ValidationFailed(violations)
        return config

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    message: str
    x: float | None = None
    fatal: bool = True


@dataclass(frozen=True)
class AlphaHint:
    root: float
    side: str
    alpha: float
    C: float


@dataclass(frozen=True)
class Equilibrium:
    location: float
    slope: float
    kind: str
    plateau: tuple | None = None

    @property
    def is_hyperbolic(self):
        return self.kind != NON_HYPERBOLIC


@dataclass(frozen=True)
class VanishingOrder:
    """n0(y) ~ C |y - root|^alpha on one side of a root. alpha = 0 means n0(root) > 0."""

    alpha: float
    coefficient: float
    source: str
    residual: float = 0.0

    @property
    def vanishes_identically(self):
        return self.source == EXACTLY_ZERO_NEARBY


@dataclass(frozen=True)
class ProblemConfig:
    """A problem exactly as written in a config file, before validation."""

    f: str
    r: str
    n0: str
    domain: tuple
    name: str = "problem"
    description: str = ""
    alpha_hints: tuple = ()
    numerics: tuple = ()

    @classmethod
    def from_mapping(cls, data):
        if not isinstance(data, dict):
            raise ValidationFailed([Violation("InvalidConfig", "config", "Config must be a mapping")])
        missing = [k for k in REQUIRED_CONFIG_FIELDS if k not in data]
        if missing:
            raise ValidationFailed([Violation("InvalidConfig", "config", f"Missing config fields: {', '.join(missing)}")])
        unknown = [k for k in data if k not in REQUIRED_CONFIG_FIELDS + OPTIONAL_CONFIG_FIELDS]
        if unknown:
            raise ValidationFailed([Violation("InvalidConfig", "config", f"Unknown config fields: {', '.join(unknown)}")])
        domain = data["domain"]
        if not isinstance(domain, (list, tuple)) or len(domain) != 2:
            raise ValidationFailed([Violation("InvalidDomain", "domain", "domain must be a two-element list [lo, hi]")])
        hints = data.get("alpha_hint") or []
        if isinstance(hints, dict):
            hints = [hints]
        try:
            alpha_hints = tuple(
                AlphaHint(float(h["root"]), str(h.get("side", "right")), float(h["alpha"]), float(h.get("C", 1.0)))
                for h in hints
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationFailed([Violation("InvalidAlphaHint", "alpha_hint", f"Malformed alpha_hint: {e}")])
        numerics = data.get("numerics") or {}
        if not isinstance(numerics, dict):
            raise ValidationFailed([Violation("InvalidNumerics", "numerics", "numerics must be a table")])
        return cls(
            f=str(data["f"]),
            r=str(data["r"]),
            n0=str(data["n0"]),
            domain=(float(domain[0]), float(domain[1])),
            name=str(data.get("name", "problem")),
            description=str(data.get("description", "")),
            alpha_hints=alpha_hints,
            numerics=tuple(sorted(numerics.items())),
        )

    def to_mapping(self):
        data = {
            "name": self.name,
            "f": self.f,
            "r": self.r,
            "n0": self.n0,
            "domain": list(self.domain),
        }
        if self.description:
            data["description"] = self.description
        if self.alpha_hints:
            data["alpha_hint"] = [asdict(h) for h in self.alpha_hints]
        if self.numerics:
            data["numerics"] = dict(self.numerics)
        return data

    def substitute(self, params):
        """Fill `{name}` placeholders in the expression strings (parameter sweeps)."""
        values = {k: repr(float(v)) for k, v in params.items()}
        return replace(
            self,
            f=self.f.format_map(values),
            r=self.r.format_map(values),
            n0=self.n0.format_map(values),
        )

    def with_numerics(self, **overrides):
        merged = dict(self.numerics)
        merged.update(overrides)
        return replace(self, numerics=tuple(sorted(merged.items())))


@dataclass(frozen=True)
class ProblemSpec:
    config: ProblemConfig
    f: Expr
    r: Expr
    n0: Expr
    domain: tuple
    support: tuple
    numerics: NumericConfig
    equilibria: tuple
    alpha_hints: tuple = ()
    warnings: tuple = ()

    @property
    def name(self):
        return self.config.name

    @property
    def width(self):
        return self.domain[1] - self.domain[0]

    @cached_property
    def f_prime(self):
        return differentiate(self.f)

    @cached_property
    def f_second(self):
        return differentiate(self.f_prime)

    @cached_property
    def r_prime(self):
        return differentiate(self.r)

    @cached_property
    def r_second(self):
        return differentiate(self.r_prime)

    @cached_property
    def r_tilde(self):
        """r - f', the growth rate felt by the density along characteristics."""
        return self.r - self.f_prime

    @cached_property
    def point_roots(self):
        return np.array([e.location for e in self.equilibria if e.plateau is None])

    def slope_at(self, x, side=None):
        try:
            return self.f_prime.evaluate(x, side=side)
        except NotDifferentiable:
            h = 1e-7 * (1.0 + abs(x))
            if side == "right":
                return (self.f.evaluate(x + h) - self.f.evaluate(x)) / h
            if side == "left":
                return (self.f.evaluate(x) - self.f.evaluate(x - h)) / h
            return (self.f.evaluate(x + h) - self.f.evaluate(x - h)) / (2 * h)

    def hint_for(self, root, side):
        for hint in self.alpha_hints:
            if hint.side == side and abs(hint.root - root) <= 1e-6 * (1.0 + abs(root)):
                return hint
        return None

    def to_config(self):
        return self.config


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def load_config(path, env=None):
    """
    Read a YAML (or JSON mirror) problem config. `env` supplies ADVSEL_*
    numerics overrides, which are folded into the config's numerics table.
    """
    with open(path, "r", encoding="utf-8") as fh:
        if str(path).endswith(".json"):
            data = json.load(fh)
        else:
            data = yaml.safe_load(fh)
    config = ProblemConfig.from_mapping(data)
    if env:
        overrides = {}
        for f in fields(NumericConfig):
            raw = env.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                overrides[f.name] = raw
        if overrides:
            config = config.with_numerics(**overrides)
    return config


# ---------------------------------------------------------------------------
# Equilibria
# ---------------------------------------------------------------------------

def _classify_slope(slope, tol_hyperbolic):
    if abs(slope) <= tol_hyperbolic:
        return NON_HYPERBOLIC
    return STABLE if slope < 0 else UNSTABLE


def _slope(f, fprime, x):
    try:
        return float(fprime.evaluate(x))
    except NotDifferentiable:
        h = 1e-7 * (1.0 + abs(x))
        return (f.evaluate(x + h) - f.evaluate(x - h)) / (2 * h)


def _refine_edge(predicate, outside, inside, iterations=80):
    """Bisect between a point where predicate fails and one where it holds."""
    for _ in range(iterations):
        mid = 0.5 * (outside + inside)
        if mid == outside or mid == inside:
            break
        if predicate(mid):
            inside = mid
        else:
            outside = mid
    return inside


def find_equilibria(f, domain, grid_n=2048, tol_root=1e-10, tol_hyperbolic=1e-6):
    """
    Roots of f on the domain, sorted by location. Sign changes on a uniform
    grid are refined with Brent's method; runs of grid nodes where |f| stays
    below tol_root become plateau equilibria.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    lo, hi = domain
    xs = np.linspace(lo, hi, int(grid_n))
    fx = f.evaluate(xs)
    fprime = differentiate(f)
    near = np.abs(fx) < tol_root
    n = len(xs)
    found = []

    def point(x0):
        slope = _slope(f, fprime, x0)
        found.append(Equilibrium(float(x0), float(slope), _classify_slope(slope, tol_hyperbolic)))

    def small(x):
        return abs(f.evaluate(x)) < tol_root

    i = 0
    while i < n:
        if near[i]:
            j = i
            while j + 1 < n and near[j + 1]:
                j += 1
            if j > i:
                a = _refine_edge(small, xs[i - 1], xs[i]) if i > 0 else xs[i]
                b = _refine_edge(small, xs[j + 1], xs[j]) if j < n - 1 else xs[j]
                found.append(Equilibrium(float(0.5 * (a + b)), 0.0, NON_HYPERBOLIC, (float(a), float(b))))
            else:
                x0 = xs[i]
                if 0 < i < n - 1 and fx[i - 1] * fx[i + 1] < 0:
                    x0 = brentq(f.evaluate, xs[i - 1], xs[i + 1], xtol=1e-15, maxiter=200)
                point(x0)
            i = j + 1
            continue
        if i + 1 < n and not near[i + 1] and fx[i] * fx[i + 1] < 0:
            x0 = brentq(f.evaluate, xs[i], xs[i + 1], xtol=1e-15, maxiter=200)
            if abs(f.evaluate(x0)) <= max(tol_root, 1e-12 * float(np.max(np.abs(fx)))):
                point(x0)
            else:
                logger.warning("f changes sign without vanishing near x=%.6g (discontinuity?)", x0)
        i += 1

    scale = float(np.max(np.abs(fx))) if n else 0.0
    for k in range(1, n - 1):
        a, b, c = fx[k - 1], fx[k], fx[k + 1]
        if near[k] or abs(b) >= 1e-3 * scale:
            continue
        if abs(b) < abs(a) and abs(b) < abs(c) and np.sign(a) == np.sign(b) == np.sign(c):
            logger.warning(
                "f nearly vanishes near x=%.6g without changing sign: roots closer than "
                "the grid spacing may have been merged", xs[k]
            )
    return sorted(found, key=lambda e: e.location)


# ---------------------------------------------------------------------------
# Vanishing order of n0 at a root
# ---------------------------------------------------------------------------

def vanishing_order(n0, root, side, width=1.0, tol_root=1e-10, tol_fit=0.05):
    """
    How n0 behaves next to `root` on one side: alpha = 0 when n0(root±) > 0,
    ExactlyZeroNearby when it vanishes on a whole one-sided window, otherwise a
    log-log fit of n0(root ± h) against h for h = width * 2^-k, k = 6..16.
    Raises FitRefused when the fit residual exceeds tol_fit.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    value = float(n0.evaluate(root, side=side))
    if value > tol_root:
        return VanishingOrder(0.0, value, FITTED, 0.0)
    sign = 1.0 if side == "right" else -1.0
    hs = width * 2.0 ** -np.arange(6, 17)
    ys = n0.evaluate(root + sign * hs)
    positive = ys > MACHINE_FLOOR
    if not np.any(positive):
        return VanishingOrder(math.inf, 0.0, EXACTLY_ZERO_NEARBY, 0.0)
    if not np.all(positive):
        raise FitRefused(f"n0 is zero on part of the fit window next to x={root:.6g} ({side})")
    slope, intercept = np.polyfit(np.log(hs), np.log(ys), 1)
    residual = float(np.max(np.abs(np.log(ys) - (slope * np.log(hs) + intercept))))
    if residual > tol_fit or slope < 0:
        raise FitRefused(
            f"n0 does not vanish like a power next to x={root:.6g} ({side}): "
            f"fit residual {residual:.3g} > {tol_fit}"
        )
    return VanishingOrder(float(slope), float(math.exp(intercept)), FITTED, residual)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _sample(expr, xs):
    """Evaluate outside the domain pointwise, skipping points where expr is undefined."""
    out = np.zeros_like(xs)
    for k, x in enumerate(xs):
        try:
            out[k] = expr.evaluate(x)
        except ExprDomainError:
            out[k] = 0.0
    return out


def _first_violation(xs, mask):
    k = int(np.flatnonzero(mask)[0])
    return float(xs[k])


def validate(raw) -> ProblemSpec:
    """
    Check the standing hypotheses on a problem and return an immutable spec.

    Accepts a ProblemConfig, a plain mapping or an already validated
    ProblemSpec (re-validating gives back an equal spec).
    """
    if isinstance(raw, ProblemSpec):
        raw = raw.config
    if isinstance(raw, dict):
        raw = ProblemConfig.from_mapping(raw)

    numerics = NumericConfig.from_mapping(dict(raw.numerics))
    f = parse_expression(raw.f)
    r = parse_expression(raw.r)
    n0 = parse_expression(raw.n0)

    violations = []
    warnings = []
    lo, hi = raw.domain
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValidationFailed([Violation("InvalidDomain", "domain", f"domain must satisfy lo < hi (got {raw.domain})")])
    width = hi - lo

    extra = [b for b in breakpoints(n0) + breakpoints(r) if lo <= b <= hi]
    xs = np.unique(np.concatenate([np.linspace(lo, hi, 2 * numerics.grid_n + 1), extra]))

    try:
        n0x = n0.evaluate(xs)
        rx = r.evaluate(xs)
        f.evaluate(xs)
    except ExprDomainError as e:
        raise ValidationFailed([Violation("EvaluationError", "expression", str(e), e.x)])

    if np.any(n0x < 0):
        x_bad = _first_violation(xs, n0x < 0)
        violations.append(Violation("NonNegativityViolation", "n0", f"n0 is negative at x={x_bad:.6g}", x_bad))

    k_min = int(np.argmin(rx))
    r_min, x_min = float(rx[k_min]), float(xs[k_min])
    if r_min > 0:
        a, b = xs[max(k_min - 1, 0)], xs[min(k_min + 1, len(xs) - 1)]
        if b > a:
            res = minimize_scalar(r.evaluate, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
            if res.success and res.fun < r_min:
                r_min, x_min = float(res.fun), float(res.x)
    if r_min <= 0:
        violations.append(Violation("NonNegativityViolation", "r", f"r is not positive at x={x_min:.6g} (r={r_min:.6g})", x_min))

    positive = n0x > MACHINE_FLOOR
    support = None
    if not np.any(positive):
        violations.append(Violation("EmptySupport", "n0", "n0 vanishes identically on the domain"))
    else:
        idx = np.flatnonzero(positive)
        k0, k1 = int(idx[0]), int(idx[-1])

        def pos(x):
            return n0.evaluate(x) > MACHINE_FLOOR

        s_lo = float(xs[k0]) if k0 == 0 else float(_refine_edge(pos, xs[k0 - 1], xs[k0]))
        s_hi = float(xs[k1]) if k1 == len(xs) - 1 else float(_refine_edge(pos, xs[k1 + 1], xs[k1]))
        # closure of {n0 > 0}: the refined edge converges to the boundary point
        support = (s_lo, s_hi)

        outside = np.concatenate([np.linspace(lo - width, lo, 65)[:-1], np.linspace(hi, hi + width, 65)[1:]])
        if np.any(_sample(n0, outside) > MACHINE_FLOOR):
            violations.append(Violation("SupportExceedsDomain", "n0", "n0 is positive outside the domain"))

    f_lo, f_hi = f.evaluate(lo), f.evaluate(hi)
    if f_lo < -numerics.tol_root or f_hi > numerics.tol_root:
        warnings.append(Violation(
            "NotPositivelyInvariant", "f",
            f"the flow leaves the domain (f(lo)={f_lo:.6g}, f(hi)={f_hi:.6g}); characteristics are followed outside it",
            fatal=False,
        ))

    equilibria = tuple(find_equilibria(f, (lo, hi), numerics.grid_n, numerics.tol_root, numerics.tol_hyperbolic))

    scale = float(np.max(np.abs(f.evaluate(xs))))
    spacing = width / (numerics.grid_n - 1)
    for end, value in ((lo, f_lo), (hi, f_hi)):
        has_root = any(abs(e.location - end) <= spacing for e in equilibria)
        if not has_root and abs(value) <= 1e-3 * scale:
            warnings.append(Violation(
                "BoundaryVanishing", "f",
                f"f nearly vanishes at the domain end x={end:.6g} without a root there; "
                "behaviour beyond the domain is not checked",
                end, fatal=False,
            ))

    for hint in raw.alpha_hints:
        if hint.side not in ("left", "right") or hint.alpha < 0 or hint.C <= 0:
            violations.append(Violation("InvalidAlphaHint", "alpha_hint", f"alpha_hint {hint} is malformed"))
        elif not any(abs(e.location - hint.root) <= 1e-6 * (1.0 + abs(hint.root)) for e in equilibria):
            violations.append(Violation("InvalidAlphaHint", "alpha_hint", f"alpha_hint root {hint.root} is not a root of f"))

    if violations:
        raise ValidationFailed(violations)

    for w in warnings:
        logger.warning("%s: %s", w.kind, w.message)

    return ProblemSpec(
        config=raw,
        f=f,
        r=r,
        n0=n0,
        domain=(float(lo), float(hi)),
        support=support,
        numerics=numerics,
        equilibria=equilibria,
        alpha_hints=raw.alpha_hints,
        warnings=tuple(warnings),
    )


def check_problem(raw):
    """Validate without raising: returns (spec or None, list of violations)."""
    try:
        spec = validate(raw)
    except ValidationFailed as e:
        return None, e.violations
    return spec, list(spec.warnings)
