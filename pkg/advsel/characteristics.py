"""
Characteristic flows of x' = f(x).

X(t, y) is the forward flow, Y(t, x) the backward one. Each integration
carries the log of the Liouville jacobian and any requested path integrals
as extra ODE components, so the step controller covers them too.

Flows are integrated on the whole real line; the problem domain is only the
window in which strict flows must stay.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq
from scipy.special import roots_legendre

from .errors import (
    ExprDomainError,
    FlowExitedDomain,
    NonIntegrableEndpoint,
    NotDifferentiable,
    StepUnderflow,
    StraddlesRoot,
)
from .expr import evaluate_lenient

logger = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"

_GL8 = roots_legendre(8)


@dataclass(frozen=True)
class FlowResult:
    endpoint: float
    log_jacobian: float
    path_integrals: dict = field(default_factory=dict)
    clamped_to: float | None = None

    @property
    def jacobian(self):
        return math.exp(self.log_jacobian)


def _direction_sign(direction):
    if direction == FORWARD:
        return 1.0
    if direction == BACKWARD:
        return -1.0
    raise ValueError(f"direction must be '{FORWARD}' or '{BACKWARD}'")


def _root_at(spec, x):
    """Equilibrium location x sits on (within tol_root), or None."""
    tol = spec.numerics.tol_root
    if abs(spec.f.evaluate(x)) > tol:
        return None
    for eq in spec.equilibria:
        if eq.plateau is not None:
            if eq.plateau[0] - tol <= x <= eq.plateau[1] + tol:
                return float(x)
        elif abs(eq.location - x) <= tol:
            return eq.location
    return float(x)


def _velocity(spec, x, sign):
    """Flow velocity with root clamping: zero inside tol_root of a root the flow moves toward."""
    v = sign * spec.f.evaluate(x)
    roots = spec.point_roots
    if roots.size:
        x_arr = np.atleast_1d(x)
        v_arr = np.atleast_1d(v).astype(float)
        gap = roots[None, :] - x_arr[:, None]
        near = np.abs(gap) < spec.numerics.tol_root
        toward = near & (v_arr[:, None] * gap >= 0)
        v_arr = np.where(toward.any(axis=1), 0.0, v_arr)
        return v_arr if np.ndim(x) else float(v_arr[0])
    return v


def _snap(spec, x):
    roots = spec.point_roots
    if not roots.size:
        return x, None
    k = int(np.argmin(np.abs(roots - x)))
    if abs(roots[k] - x) < spec.numerics.tol_root:
        return float(roots[k]), float(roots[k])
    return x, None


def _labels(fields):
    return [str(g) for g in fields]


def _integrate(spec, start, t, fields, direction, strict, dense=False):
    sign = _direction_sign(direction)
    if t < 0:
        raise ValueError("flow time must be non-negative")
    fields = list(fields)
    labels = _labels(fields)
    root = _root_at(spec, start)
    if t == 0 or root is not None:
        x = float(start if root is None else root)
        slope = float(evaluate_lenient(spec.f_prime, x))
        integrals = {lab: float(evaluate_lenient(g, x)) * t for lab, g in zip(labels, fields)}
        return None, FlowResult(x, sign * slope * t, integrals, root)

    def rhs(_t, state):
        x = state[0]
        v = _velocity(spec, x, sign)
        out = [v, sign * evaluate_lenient(spec.f_prime, x)]
        out.extend(evaluate_lenient(g, x) for g in fields)
        return out

    y0 = [float(start), 0.0] + [0.0] * len(fields)
    num = spec.numerics
    sol = solve_ivp(rhs, (0.0, float(t)), y0, method="RK45", rtol=num.ode_rel_tol, atol=num.ode_abs_tol,
                    dense_output=dense or strict)
    if sol.status < 0:
        raise StepUnderflow(f"flow from x={start:.6g} failed: {sol.message}")

    if strict:
        lo, hi = spec.domain
        slack = 1e-12 * (hi - lo)
        xs = sol.y[0]
        outside = (xs < lo - slack) | (xs > hi + slack)
        if np.any(outside):
            k = int(np.argmax(outside))
            edge = lo if xs[k] < lo else hi
            t0, t1 = sol.t[max(k - 1, 0)], sol.t[k]
            try:
                t_exit = brentq(lambda s: sol.sol(s)[0] - edge, t0, t1) if t1 > t0 else t1
            except ValueError:
                t_exit = t1
            raise FlowExitedDomain(float(t_exit), float(edge))

    final = sol.y[:, -1]
    x_end, clamped = _snap(spec, float(final[0]))
    integrals = {lab: float(v) for lab, v in zip(labels, final[2:])}
    return sol, FlowResult(x_end, float(final[1]), integrals, clamped)


def flow_forward(spec, y, t, fields=(), strict=True) -> FlowResult:
    """X(t, y) with jacobian dX/dy and the path integrals of `fields` along it."""
    return _integrate(spec, y, t, fields, FORWARD, strict)[1]


def flow_backward(spec, x, t, fields=(), strict=True) -> FlowResult:
    """Y(t, x) with jacobian dY/dx and the path integrals of `fields` along it."""
    return _integrate(spec, x, t, fields, BACKWARD, strict)[1]


def check_flow_identity(spec, x, t, s) -> float:
    """|X(s, Y(t, x)) - Y(t - s, x)|; zero up to solver tolerance for a group of flows."""
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    y = flow_backward(spec, x, t, strict=False).endpoint
    lhs = flow_forward(spec, y, s, strict=False).endpoint
    rhs = flow_backward(spec, x, t - s, strict=False).endpoint
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Dense trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowCache:
    """Dense output of one characteristic, evaluable at any t in [0, t_max]."""

    start: float
    t_max: float
    direction: str
    solution: object = None
    fixed_point: float | None = None
    fixed_slope: float = 0.0

    def position(self, t):
        t = np.asarray(t, dtype=float)
        if np.any((t < 0) | (t > self.t_max)):
            raise ValueError(f"t outside [0, {self.t_max}]")
        if self.solution is None:
            return np.full_like(t, self.fixed_point) if t.ndim else float(self.fixed_point)
        out = self.solution(t)[0]
        return out if t.ndim else float(out)

    def log_jacobian(self, t):
        t = np.asarray(t, dtype=float)
        if self.solution is None:
            sign = _direction_sign(self.direction)
            out = sign * self.fixed_slope * t
            return out if t.ndim else float(out)
        out = self.solution(t)[1]
        return out if t.ndim else float(out)

    def __call__(self, t):
        return self.position(t)


def build_flow_cache(spec, start, t_max, direction=FORWARD) -> FlowCache:
    sol, result = _integrate(spec, start, t_max, (), direction, strict=False, dense=True)
    if sol is None:
        slope = float(evaluate_lenient(spec.f_prime, result.endpoint))
        return FlowCache(float(start), float(t_max), direction, None, result.endpoint, slope)
    return FlowCache(float(start), float(t_max), direction, sol.sol)


# ---------------------------------------------------------------------------
# Many characteristics at once
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowBundle:
    """Positions, log-jacobians and path integrals of many characteristics on a time grid."""

    times: np.ndarray
    positions: np.ndarray       # (len(times), n)
    log_jacobians: np.ndarray   # (len(times), n)
    integrals: np.ndarray       # (len(times), n, len(fields))
    clamped: np.ndarray         # (n,) bool, final position snapped onto a root


def flow_many(spec, starts, t_eval, direction=FORWARD, fields=()) -> FlowBundle:
    """Non-strict vectorised flow of every start point, sampled at t_eval (sorted, from 0)."""
    sign = _direction_sign(direction)
    starts = np.asarray(starts, dtype=float)
    t_eval = np.asarray(t_eval, dtype=float)
    n, k = starts.size, len(fields)
    if t_eval[-1] == 0 or n == 0:
        pos = np.tile(starts, (t_eval.size, 1))
        return FlowBundle(t_eval, pos, np.zeros_like(pos), np.zeros((t_eval.size, n, k)), np.zeros(n, bool))

    def rhs(_t, state):
        x = state[:n]
        out = np.empty_like(state)
        out[:n] = _velocity(spec, x, sign)
        out[n:2 * n] = sign * evaluate_lenient(spec.f_prime, x)
        for j, g in enumerate(fields):
            out[(2 + j) * n:(3 + j) * n] = evaluate_lenient(g, x)
        return out

    y0 = np.concatenate([starts, np.zeros(n * (1 + k))])
    num = spec.numerics
    sol = solve_ivp(rhs, (0.0, float(t_eval[-1])), y0, method="RK45", t_eval=t_eval,
                    rtol=num.ode_rel_tol, atol=num.ode_abs_tol)
    if sol.status < 0:
        raise StepUnderflow(f"vectorised flow failed: {sol.message}")
    y = sol.y.T
    positions = y[:, :n].copy()
    clamped = np.zeros(n, bool)
    roots = spec.point_roots
    if roots.size:
        gap = np.abs(positions[-1][:, None] - roots[None, :])
        k_near = np.argmin(gap, axis=1)
        hit = gap[np.arange(n), k_near] < num.tol_root
        positions[-1, hit] = roots[k_near[hit]]
        clamped = hit
    integrals = y[:, 2 * n:].reshape(len(t_eval), k, n).transpose(0, 2, 1)
    return FlowBundle(t_eval, positions, y[:, n:2 * n], integrals, clamped)


# ---------------------------------------------------------------------------
# Nodes stored as log-distance to an unstable source
# ---------------------------------------------------------------------------

def distance_floor(anchor):
    """Smallest distance from `anchor` that a double can still resolve."""
    return 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(anchor))


def _log_distance(x, anchor, orient):
    with np.errstate(invalid="ignore"):
        d = orient * (x - anchor)
    return np.where(np.isfinite(anchor), np.log(np.maximum(d, distance_floor(anchor))), np.nan)


@dataclass(frozen=True)
class AnchoredNodes:
    """
    Start points of forward characteristics. A node with a finite anchor a is
    stored as q = ln|x - a| so that points e^-40 away from an unstable root
    keep full relative precision while they leave it. Callers that lay nodes
    out in q pass `log_dist` directly; away from 0 the sum a + e^q rounds
    back to a long before q runs out of range.
    """

    start: np.ndarray
    anchor: np.ndarray
    orient: np.ndarray
    slope: np.ndarray
    curvature: np.ndarray
    log_dist: np.ndarray

    @classmethod
    def build(cls, spec, start, anchor, orient, log_dist=None):
        start = np.asarray(start, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        orient = np.asarray(orient, dtype=float)
        slope = np.zeros_like(start)
        curvature = np.zeros_like(start)
        for a, s in {(float(a), float(s)) for a, s in zip(anchor, orient) if np.isfinite(a)}:
            side = "right" if s > 0 else "left"
            sel = (anchor == a) & (orient == s)
            slope[sel] = spec.slope_at(a, side=side)
            try:
                curvature[sel] = spec.f_second.evaluate(a, side=side)
            except (NotDifferentiable, ExprDomainError):
                curvature[sel] = 0.0
        if log_dist is None:
            log_dist = _log_distance(start, anchor, orient)
        else:
            log_dist = np.where(np.isfinite(anchor), np.asarray(log_dist, dtype=float), np.nan)
        return cls(start, anchor, orient, slope, curvature, log_dist)

    @property
    def anchored(self):
        return np.isfinite(self.anchor)

    def initial_state(self):
        """q at t = 0, without rounding the start points through x."""
        return np.where(self.anchored, self.log_dist, self.start)

    def order(self):
        """Indices sorting the start points along the line, ties at an anchor broken by distance."""
        tie = np.where(self.anchored, self.orient * np.exp(self.log_dist), 0.0)
        return np.lexsort((tie, self.start))

    def encode(self, x):
        x = np.asarray(x, dtype=float)
        q = x.copy()
        m = self.anchored
        q[m] = _log_distance(x[m], self.anchor[m], self.orient[m])
        return q

    def decode(self, q):
        x = np.array(q, dtype=float)
        m = self.anchored
        x[m] = self.anchor[m] + self.orient[m] * np.exp(q[m])
        return x

    def velocity(self, spec, q):
        """Return (dq/dt, x) for the forward flow."""
        x = self.decode(q)
        v = np.asarray(spec.f.evaluate(x), dtype=float)
        m = self.anchored
        if not np.any(m):
            return v, x
        out = v.copy()
        d = np.exp(q[m])
        s = self.orient[m]
        # linear regime: q' = f'(a) + f''(a) (x - a) / 2
        small = d < 1e-6 * spec.width
        taylor = self.slope[m] + 0.5 * s * self.curvature[m] * d
        out[m] = np.where(small, taylor, s * v[m] / np.where(small, 1.0, d))
        return out, x


# ---------------------------------------------------------------------------
# Spatial integrals between roots
# ---------------------------------------------------------------------------

def _flanking_roots(spec, lo, hi):
    """Nearest root at or below lo and at or above hi; raises if one lies strictly inside."""
    tol = spec.numerics.tol_root
    left = right = None
    for eq in spec.equilibria:
        a, b = eq.plateau if eq.plateau is not None else (eq.location, eq.location)
        if b <= lo + tol:
            left = b if left is None else max(left, b)
        elif a >= hi - tol:
            right = a if right is None else min(right, a)
        else:
            raise StraddlesRoot(lo, hi, eq.location)
    return left, right


def _endpoint_exponent(numerator, f, root, sign, width):
    """
    Local power q of |numerator/f| ~ |s - root|^q next to a root, from two
    sample points. A numerator at rounding level at the inner point counts as zero.
    """
    h1, h2 = 1e-6 * width, 1e-8 * width
    n1 = abs(float(numerator.evaluate(root + sign * h1)))
    n2 = abs(float(numerator.evaluate(root + sign * h2)))
    noise = 1e-12 * max(1.0, abs(float(numerator.evaluate(root + sign * 1e-2 * width))))
    if n2 <= noise:
        return math.inf
    g1 = n1 / abs(float(f.evaluate(root + sign * h1)))
    g2 = n2 / abs(float(f.evaluate(root + sign * h2)))
    return math.log(g1 / g2) / math.log(h1 / h2)


def _log_side(g, root, sign, near, far, exponent, epsrel):
    """
    Integral of g over the part of the interval next to `root`, in u = ln|s - root|.
    `near`/`far` are distances from the root; near == 0 means the root itself.
    """
    floor = float(distance_floor(root))
    tail = 0.0
    if near <= 0.0:
        depth = 40.0 / max(exponent + 1.0, 0.05) if math.isfinite(exponent) else 40.0
        near = max(far * math.exp(-depth), floor)
        if math.isfinite(exponent):
            tail = float(g(root + sign * near)) * near / (exponent + 1.0)

    def integrand(u):
        d = math.exp(u)
        return float(g(root + sign * d)) * d

    value, _err = quad(integrand, math.log(near), math.log(far), epsrel=epsrel, epsabs=0.0, limit=400)
    return value + tail


def spatial_characteristic_integral(spec, start, stop, numerator) -> float:
    """
    Integral of numerator(s) / f(s) from `start` to `stop`, both inside one
    interval between consecutive roots (endpoints may sit on those roots).

    The piece of the interval closest to each flanking root is integrated in
    u = ln|s - root|, where the integrand behaves like a power of |s - root|.
    """
    if start == stop:
        return 0.0
    if stop < start:
        return -spatial_characteristic_integral(spec, stop, start, numerator)
    lo, hi = float(start), float(stop)
    num = spec.numerics
    left, right = _flanking_roots(spec, lo, hi)
    tol = num.tol_root

    def g(s):
        return numerator.evaluate(s) / spec.f.evaluate(s)

    reach = 0.25 * spec.width
    if left is not None and right is not None:
        reach = min(reach, 0.25 * (right - left))
    total = 0.0
    mid_lo, mid_hi = lo, hi

    def exponent_at(root, sign):
        q = _endpoint_exponent(numerator, spec.f, root, sign, spec.width)
        if q <= -0.95:
            raise NonIntegrableEndpoint(root, q)
        return q

    # piece next to the left root, in u = ln(s - left)
    if left is not None and lo - left < reach:
        at_root = lo - left <= tol
        near = 0.0 if at_root else lo - left
        far = min(hi, left + reach) - left
        q = exponent_at(left, 1.0) if at_root else 0.0
        if far > near:
            total += _log_side(g, left, 1.0, near, far, q, num.quad_rel_tol)
        mid_lo = left + far

    # piece next to the right root, in u = ln(right - s)
    if right is not None and right - hi < reach:
        at_root = right - hi <= tol
        near = 0.0 if at_root else right - hi
        far = right - max(mid_lo, right - reach)
        q = exponent_at(right, -1.0) if at_root else 0.0
        if far > near:
            total += _log_side(g, right, -1.0, near, far, q, num.quad_rel_tol)
        mid_hi = right - far

    if mid_hi > mid_lo:
        value, _err = quad(lambda s: float(g(s)), mid_lo, mid_hi, epsrel=num.quad_rel_tol, epsabs=0.0, limit=400)
        total += value
    return total


def cumulative_characteristic_integral(spec, root, xs, numerator, side="right") -> np.ndarray:
    """
    I(x) = integral of numerator/f from `root` to x for sorted points xs on one
    side of the root, sharing the work: the first point by
    spatial_characteristic_integral, the rest by 8-point Gauss-Legendre on
    each gap.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return xs.copy()
    order = np.argsort(xs) if side == "right" else np.argsort(-xs)
    ordered = xs[order]
    first = spatial_characteristic_integral(spec, root, ordered[0], numerator)
    a, b = ordered[:-1], ordered[1:]
    nodes, weights = _GL8
    half = 0.5 * (b - a)
    pts = 0.5 * (a + b)[:, None] + half[:, None] * nodes[None, :]
    vals = numerator.evaluate(pts.ravel()) / spec.f.evaluate(pts.ravel())
    gaps = (vals.reshape(pts.shape) * weights[None, :]).sum(axis=1) * half
    out = np.empty_like(ordered)
    out[0] = first
    out[1:] = first + np.cumsum(gaps)
    result = np.empty_like(out)
    result[order] = out
    return result
