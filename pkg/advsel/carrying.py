"""
Compartments and their carrying capacities.

A compartment is an interval between consecutive roots of f (or a plateau
where f vanishes identically) that meets the support of n0. Its mass grows
like S(t) = integral of n0(y) exp(int_0^t r(X(s, y)) ds) dy and its carrying
capacity is R(t) = S'(t) / S(t). `predict_R_limit` gives lim R(t) from the
root kinds, r at the roots, and how n0 vanishes at the unstable end.

Everything exponential is kept in log space; S(t) overflows a double long
before the horizons we integrate to.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, roots_legendre

from .characteristics import (
    BACKWARD,
    AnchoredNodes,
    distance_floor,
    flow_forward,
    flow_many,
    spatial_characteristic_integral,
)
from .errors import (
    DegenerateLimit,
    ExprDomainError,
    FitRefused,
    NonApplicableFormula,
    NotDifferentiable,
    NumericFailure,
    StepUnderflow,
)
from .expr import breakpoints
from .model import (
    EXACTLY_ZERO_NEARBY,
    MACHINE_FLOOR,
    NON_HYPERBOLIC,
    STABLE,
    USER_DECLARED,
    Equilibrium,
    VanishingOrder,
    _classify_slope,
    vanishing_order,
)

logger = logging.getLogger(__name__)

# limit-table case tags
INTO_STABLE_END = "into-stable-end"
OUT_OF_UNSTABLE_END = "out-of-unstable-end"
UNSTABLE_TO_STABLE = "unstable-to-stable"
NO_ROOT = "no-root"
PLATEAU = "plateau"

EXPONENTIAL = "exponential"
UNKNOWN = "unknown"

GL_ORDER = 8
UNIFORM_PANELS = 24
LOG_PANEL_WIDTH = 1.0
# exp(-36) relative depth below which source-side mass is dropped
SOURCE_DEPTH = 36.0


# ---------------------------------------------------------------------------
# Compartments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Compartment:
    index: int
    lo: float
    hi: float
    left: Equilibrium | None
    right: Equilibrium | None
    plateau: bool
    direction: int
    piece: tuple
    vanishing: VanishingOrder | None = None
    vanishing_error: str | None = None
    left_junction: bool = False
    right_junction: bool = False

    @property
    def source(self):
        if self.direction > 0:
            return self.left
        if self.direction < 0:
            return self.right
        return None

    @property
    def sink(self):
        if self.direction > 0:
            return self.right
        if self.direction < 0:
            return self.left
        return None

    @property
    def source_side(self):
        """Side of the source root on which the compartment lies."""
        return "right" if self.direction > 0 else "left"

    @property
    def sink_side(self):
        return "left" if self.direction > 0 else "right"

    @property
    def label(self):
        kind = "plateau " if self.plateau else ""
        return f"{kind}({self.lo:.6g}, {self.hi:.6g})"

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi) if not self.plateau else (x >= self.lo) & (x <= self.hi)


def _edge_equilibrium(spec, x, side):
    slope = spec.slope_at(x, side=side)
    return Equilibrium(float(x), float(slope), _classify_slope(slope, spec.numerics.tol_hyperbolic))


def _meets_support(spec, lo, hi):
    if not hi > lo:
        return False
    inner = np.linspace(lo, hi, 259)[1:-1]
    extra = [b for b in breakpoints(spec.n0) if lo < b < hi]
    pts = np.concatenate([inner, extra, [0.5 * (lo + hi)]])
    return bool(np.any(spec.n0.evaluate(pts) > MACHINE_FLOOR))


def _source_vanishing(spec, source, side, piece):
    """Vanishing data of n0 at a compartment's source root, or (None, reason)."""
    tol = spec.numerics.tol_root
    root = source.location
    hint = spec.hint_for(root, side)
    if hint is not None:
        return VanishingOrder(hint.alpha, hint.C, USER_DECLARED), None
    touches = abs((piece[0] if side == "right" else piece[1]) - root) <= max(tol, 1e-12 * spec.width)
    if not touches:
        return VanishingOrder(math.inf, 0.0, EXACTLY_ZERO_NEARBY), None
    try:
        return vanishing_order(spec.n0, root, side, spec.width, tol, spec.numerics.tol_fit), None
    except FitRefused as e:
        logger.warning("vanishing order at x=%.6g refused: %s", root, e)
        return None, str(e)


def build_compartments(spec, equilibria=None) -> list:
    """Intervals between consecutive roots (and plateaus) that meet the support of n0."""
    equilibria = sorted(spec.equilibria if equilibria is None else equilibria, key=lambda e: e.location)
    lo, hi = spec.domain
    segments = []
    cursor, left_eq, left_junction = lo, None, False
    for eq in equilibria:
        if eq.plateau is not None:
            a, b = eq.plateau
            segments.append((cursor, a, left_eq, _edge_equilibrium(spec, a, "left"), False, left_junction, True))
            segments.append((a, b, None, None, True, False, False))
            cursor, left_eq, left_junction = b, _edge_equilibrium(spec, b, "right"), True
        else:
            segments.append((cursor, eq.location, left_eq, eq, False, left_junction, False))
            cursor, left_eq, left_junction = eq.location, eq, False
    segments.append((cursor, hi, left_eq, None, False, left_junction, False))

    s_lo, s_hi = spec.support
    compartments = []
    for seg_lo, seg_hi, left, right, is_plateau, lj, rj in segments:
        if not seg_hi > seg_lo:
            continue
        piece = (max(seg_lo, s_lo), min(seg_hi, s_hi))
        if not _meets_support(spec, *piece):
            continue
        direction = 0
        if not is_plateau:
            direction = 1 if spec.f.evaluate(0.5 * (piece[0] + piece[1])) > 0 else -1
        comp = Compartment(len(compartments), float(seg_lo), float(seg_hi), left, right, is_plateau,
                           direction, (float(piece[0]), float(piece[1])), left_junction=lj, right_junction=rj)
        source = comp.source
        if source is not None:
            vanishing, error = _source_vanishing(spec, source, comp.source_side, comp.piece)
            comp = replace(comp, vanishing=vanishing, vanishing_error=error)
        compartments.append(comp)
    logger.debug("compartments: %s", ", ".join(c.label for c in compartments))
    return compartments


def initial_mass(spec, comp) -> float:
    """Integral of n0 over the compartment."""
    lo, hi = comp.piece
    points = [b for b in breakpoints(spec.n0) if lo < b < hi] or None
    value, _err = quad(lambda y: float(spec.n0.evaluate(y)), lo, hi, points=points,
                       epsrel=spec.numerics.quad_rel_tol, limit=400)
    return value


# ---------------------------------------------------------------------------
# Quadrature nodes
# ---------------------------------------------------------------------------

def gl_panels(a, b, panels):
    nodes, weights = roots_legendre(GL_ORDER)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    pts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wts = (half[:, None] * weights[None, :]).ravel()
    return pts, wts


def split_at(a, b, cuts):
    edges = [a] + sorted(c for c in cuts if a < c < b) + [b]
    return list(zip(edges[:-1], edges[1:]))


def source_anchor(spec, comp):
    """(root, orientation) when the piece starts on the compartment's source root."""
    source = comp.source
    if comp.plateau or source is None or source.slope == 0:
        return None
    root = source.location
    sign = 1.0 if comp.direction > 0 else -1.0
    edge = comp.piece[0] if sign > 0 else comp.piece[1]
    if abs(edge - root) > max(spec.numerics.tol_root, 1e-12 * spec.width):
        return None
    return root, sign


def source_density(spec, comp, root, sign, d):
    """
    n0(root + sign d) for distances d from the source root. Where root + sign d
    no longer resolves d to a few digits, n0 follows the vanishing law C d^alpha
    (or its one-sided value at the root when there is no law).
    """
    d = np.asarray(d, dtype=float)
    values = np.array(spec.n0.evaluate(root + sign * d), dtype=float, ndmin=1)
    lost = d < 1e3 * np.finfo(float).eps * abs(root)
    if np.any(lost):
        law = comp.vanishing
        if law is None:
            values[lost] = spec.n0.evaluate(root, side=comp.source_side)
        elif law.vanishes_identically:
            values[lost] = 0.0
        else:
            values[lost] = law.coefficient * d[lost] ** law.alpha
    return values


def quadrature_nodes(spec, comp, t_max):
    """
    Composite Gauss-Legendre nodes over the compartment's piece of support.
    Next to an unstable source the first panels are laid out in ln|y - a|
    down to a depth of exp(-(|f'(a)| t_max + 36)) times the piece width.
    Returns (AnchoredNodes, masses n0(y) w) with zero-mass nodes removed.
    """
    lo, hi = comp.piece
    width = hi - lo
    cuts = [b for b in breakpoints(spec.n0) if lo < b < hi]
    pts, wts, vals, logs = [], [], [], []
    anchor = source_anchor(spec, comp)
    if anchor is not None:
        root, sign = anchor
        slope = abs(comp.source.slope)
        d_split = 0.1 * width
        inner_cuts = [abs(c - root) for c in cuts if abs(c - root) < d_split]
        if inner_cuts:
            d_split = min(inner_cuts)
        d_min = width * math.exp(-(slope * t_max + SOURCE_DEPTH))
        u_lo, u_hi = math.log(d_min), math.log(d_split)
        panels = max(1, int(math.ceil((u_hi - u_lo) / LOG_PANEL_WIDTH)))
        u, wu = gl_panels(u_lo, u_hi, panels)
        d = np.exp(u)
        pts.append(root + sign * d)
        wts.append(wu * d)
        vals.append(source_density(spec, comp, root, sign, d))
        logs.append(u)
        if sign > 0:
            lo = root + d_split
        else:
            hi = root - d_split
    for a, b in split_at(lo, hi, cuts):
        panels = max(2, int(math.ceil(UNIFORM_PANELS * (b - a) / width)))
        p, w = gl_panels(a, b, panels)
        pts.append(p)
        wts.append(w)
        vals.append(spec.n0.evaluate(p))
        logs.append(np.full(p.size, np.nan))
    y = np.concatenate(pts)
    mass = np.concatenate(vals) * np.concatenate(wts)
    keep = mass > 0
    y, mass, log_dist = y[keep], mass[keep], np.concatenate(logs)[keep]
    if anchor is None:
        nodes = AnchoredNodes.build(spec, y, np.full_like(y, np.nan), np.ones_like(y))
    else:
        # uniform-panel nodes sit at least d_split from the root and encode exactly
        unset = np.isnan(log_dist)
        log_dist[unset] = np.log(anchor[1] * (y[unset] - anchor[0]))
        nodes = AnchoredNodes.build(spec, y, np.full_like(y, anchor[0]), np.full_like(y, anchor[1]), log_dist)
    return nodes, mass


def _plateau_nodes(spec, comp, panels=64):
    lo, hi = comp.piece
    cuts = [b for b in breakpoints(spec.n0) + breakpoints(spec.r) if lo < b < hi]
    pts, wts = [], []
    for a, b in split_at(lo, hi, cuts):
        p, w = gl_panels(a, b, max(4, int(math.ceil(panels * (b - a) / (hi - lo)))))
        pts.append(p)
        wts.append(w)
    y, w = np.concatenate(pts), np.concatenate(wts)
    mass = spec.n0.evaluate(y) * w
    keep = mass > 0
    return y[keep], mass[keep]


# ---------------------------------------------------------------------------
# S and R
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CarryingTable:
    """log S(t) and R(t) of one compartment on a time grid, with cubic interpolation."""

    compartment: int
    times: np.ndarray
    log_S: np.ndarray
    R: np.ndarray
    _spline: object = field(default=None, repr=False, compare=False)

    def R_at(self, t):
        if self._spline is None:
            return np.interp(t, self.times, self.R)
        return self._spline(t)


def _pullback(spec, comp, times):
    """Stacked forward flow of all quadrature nodes; returns (log S, R) on `times`."""
    times = np.asarray(times, dtype=float)
    t_max = float(times[-1])
    if comp.plateau:
        y, mass = _plateau_nodes(spec, comp)
        ry = spec.r.evaluate(y)
        log_s = np.array([logsumexp(ry * t, b=mass) for t in times])
        big = ry[None, :] * times[:, None]
        weights = np.exp(big - big.max(axis=1, keepdims=True)) * mass[None, :]
        R = (weights * ry[None, :]).sum(axis=1) / weights.sum(axis=1)
        return log_s, R

    nodes, mass = quadrature_nodes(spec, comp, t_max)
    n = nodes.start.size
    if n == 0:
        raise NumericFailure("no quadrature node carries mass", comp.index)
    if t_max == 0:
        r0 = spec.r.evaluate(nodes.start)
        return np.full(times.size, logsumexp(np.zeros(n), b=mass)), np.full(times.size, float(np.sum(mass * r0) / np.sum(mass)))

    def rhs(_t, state):
        qdot, x = nodes.velocity(spec, state[:n])
        return np.concatenate([qdot, spec.r.evaluate(x)])

    y0 = np.concatenate([nodes.initial_state(), np.zeros(n)])
    num = spec.numerics
    try:
        sol = solve_ivp(rhs, (0.0, t_max), y0, method="RK45", t_eval=times,
                        rtol=num.ode_rel_tol, atol=num.ode_abs_tol)
    except (ValueError, FloatingPointError) as e:
        raise NumericFailure(f"pullback flow failed: {e}", comp.index) from e
    if sol.status < 0:
        raise StepUnderflow(f"compartment {comp.index}: pullback flow failed: {sol.message}")
    q, A = sol.y[:n].T, sol.y[n:].T
    x = np.array([nodes.decode(row) for row in q])
    log_s = logsumexp(A, b=mass[None, :], axis=1)
    weights = np.exp(A - A.max(axis=1, keepdims=True)) * mass[None, :]
    R = (weights * spec.r.evaluate(x)).sum(axis=1) / weights.sum(axis=1)
    return log_s, R


def carrying_table(spec, comp, times) -> CarryingTable:
    """log S and R of a compartment on a time grid starting at 0, from one pullback integration."""
    times = np.asarray(times, dtype=float)
    log_s, R = _pullback(spec, comp, times)
    if not np.all(np.isfinite(log_s)) or not np.all(np.isfinite(R)):
        raise NumericFailure("S dropped below the positive floor", comp.index)
    spline = CubicSpline(times, R) if times.size >= 4 else None
    return CarryingTable(comp.index, times, log_s, R, spline)


def log_S_value(spec, comp, t) -> float:
    """log S(t) by the pullback form."""
    if t == 0:
        return math.log(initial_mass(spec, comp))
    log_s, _R = _pullback(spec, comp, [0.0, float(t)])
    return float(log_s[-1])


def _pushforward_log_S(spec, comp, t):
    """
    log S(t) as the integral over x of n0(Y(t, x)) exp(int r~/f from Y to x).
    Nodes cover X(t, piece), clustered in ln|x - b| at the sink b.
    """
    lo = flow_forward(spec, comp.piece[0], t, strict=False).endpoint
    hi = flow_forward(spec, comp.piece[1], t, strict=False).endpoint
    width = hi - lo
    pts, wts = [], []
    sink = comp.sink
    edge = hi if comp.direction > 0 else lo
    if sink is not None and sink.kind == STABLE and abs(edge - sink.location) < 0.1 * width:
        b = sink.location
        sign = -1.0 if comp.direction > 0 else 1.0
        d_min = max(width * math.exp(-(abs(sink.slope) * t + SOURCE_DEPTH)),
                    float(distance_floor(b)))
        d_split = 0.1 * width
        if d_min < d_split:
            u, wu = gl_panels(math.log(d_min), math.log(d_split),
                               max(1, int(math.ceil((math.log(d_split) - math.log(d_min)) / LOG_PANEL_WIDTH))))
            d = np.exp(u)
            pts.append(b + sign * d)
            wts.append(wu * d)
            if comp.direction > 0:
                hi = b - d_split
            else:
                lo = b + d_split
    p, w = gl_panels(lo, hi, UNIFORM_PANELS)
    pts.append(p)
    wts.append(w)
    x = np.concatenate(pts)
    w = np.concatenate(wts)

    bundle = flow_many(spec, x, [0.0, float(t)], BACKWARD, fields=[spec.r_tilde])
    Y = bundle.positions[-1]
    exponent = bundle.integrals[-1, :, 0].copy()
    for j in np.flatnonzero(~bundle.clamped):
        if Y[j] != x[j]:
            exponent[j] = spatial_characteristic_integral(spec, Y[j], x[j], spec.r_tilde)
    n0 = np.where(bundle.clamped, spec.n0.evaluate(Y, side=comp.source_side), spec.n0.evaluate(Y))
    return float(logsumexp(exponent, b=n0 * w))


def S_value(spec, comp, t, l=0.0, form="pullback") -> float:
    """S(t) exp(-l t) for a non-plateau compartment, by the pullback (y) or pushforward (x) form."""
    if comp.plateau:
        raise NonApplicableFormula(f"compartment {comp.index} is a plateau; use S_plateau")
    if t < 0:
        raise ValueError("t must be non-negative")
    if form == "pullback":
        log_s = log_S_value(spec, comp, t)
    elif form == "pushforward":
        log_s = _pushforward_log_S(spec, comp, t) if t > 0 else math.log(initial_mass(spec, comp))
    else:
        raise ValueError("form must be 'pullback' or 'pushforward'")
    return math.exp(log_s - l * t)


def S_plateau(spec, comp, t, l=0.0) -> float:
    """S(t) exp(-l t) = integral of n0 exp((r - l) t) over a plateau compartment."""
    if not comp.plateau:
        raise NonApplicableFormula(f"compartment {comp.index} is not a plateau")
    lo, hi = comp.piece
    xs = np.linspace(lo, hi, 2049)
    r_max = float(np.max(spec.r.evaluate(xs)))
    x_max = float(xs[np.argmax(spec.r.evaluate(xs))])
    points = sorted({x_max} | {b for b in breakpoints(spec.n0) + breakpoints(spec.r) if lo < b < hi})
    points = [p for p in points if lo < p < hi] or None

    def integrand(y):
        return float(spec.n0.evaluate(y)) * math.exp((float(spec.r.evaluate(y)) - r_max) * t)

    value, _err = quad(integrand, lo, hi, points=points, epsrel=spec.numerics.quad_rel_tol, epsabs=0.0, limit=400)
    if not value > 0:
        raise NumericFailure("S dropped below the positive floor", comp.index)
    return math.exp(math.log(value) + (r_max - l) * t)


def R_value(spec, comp, t) -> float:
    """Carrying capacity R(t) = S'(t) / S(t)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    _log_s, R = _pullback(spec, comp, [0.0, float(t)] if t > 0 else [0.0])
    value = float(R[-1])
    if not math.isfinite(value):
        raise NumericFailure("S dropped below the positive floor", comp.index)
    return value


# ---------------------------------------------------------------------------
# Limits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CarryingLimit:
    value: float
    speed: str
    case_tag: str
    branch: str
    formula: str
    origin: str
    location: float | None = None
    alpha: float | None = None

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class PlateauMaximum:
    location: float
    value: float
    position: str
    curvature: float | None


def plateau_maximum(spec, comp) -> PlateauMaximum:
    """
    Maximiser of r over the closed plateau piece. `position` is 'interior',
    'junction' (an end where f starts to flow out) or 'edge'. Raises
    DegenerateLimit when the maximum is attained at several points.
    """
    lo, hi = comp.piece
    xs = np.linspace(lo, hi, 2049)
    rx = spec.r.evaluate(xs)
    k = int(np.argmax(rx))
    r_max = float(rx[k])
    tie = spec.numerics.tie_tol * (1.0 + abs(r_max))
    spacing = xs[1] - xs[0]
    top = np.flatnonzero(rx >= r_max - tie)
    if np.any(rx[top[0]:top[-1] + 1] < r_max - tie):
        raise DegenerateLimit(f"r attains its maximum on the plateau {comp.label} at several points")
    x_m = float(xs[k])
    if 0 < k < len(xs) - 1:
        res = minimize_scalar(lambda y: -float(spec.r.evaluate(y)), bounds=(xs[k - 1], xs[k + 1]),
                              method="bounded", options={"xatol": 1e-12})
        if res.success and -res.fun >= r_max:
            x_m, r_max = float(res.x), float(-res.fun)
    near_lo = x_m - lo <= 2 * spacing
    near_hi = hi - x_m <= 2 * spacing
    if near_lo or near_hi:
        end = lo if near_lo else hi
        junction = _is_junction(spec, comp, end, "left" if near_lo else "right")
        return PlateauMaximum(end, float(spec.r.evaluate(end)), "junction" if junction else "edge", None)
    try:
        curvature = float(spec.r_second.evaluate(x_m))
    except (NotDifferentiable, ExprDomainError):
        curvature = None
    return PlateauMaximum(x_m, r_max, "interior", curvature)


def _is_junction(spec, comp, end, which):
    """True when the plateau ends at `end` and f flows out of it on the far side."""
    if which == "left":
        if abs(end - comp.lo) > 1e-12 * spec.width:
            return False
        slope = spec.slope_at(end, side="left")
        return slope > spec.numerics.tol_hyperbolic and spec.f.evaluate(end - 1e-6 * spec.width) < 0
    if abs(end - comp.hi) > 1e-12 * spec.width:
        return False
    slope = spec.slope_at(end, side="right")
    return slope > spec.numerics.tol_hyperbolic and spec.f.evaluate(end + 1e-6 * spec.width) > 0


def _require_hyperbolic(eq, role):
    if eq is not None and eq.kind == NON_HYPERBOLIC:
        raise DegenerateLimit(f"{role} root at x={eq.location:.6g} is non-hyperbolic (f'={eq.slope:.3g})")


def _alpha_of(comp):
    if comp.vanishing is None:
        raise DegenerateLimit(f"vanishing order of n0 at x={comp.source.location:.6g} refused: {comp.vanishing_error}")
    return comp.vanishing


def predict_R_limit(spec, comp) -> CarryingLimit:
    """
    lim R(t) for one compartment from the limit table. Raises DegenerateLimit
    for the equality cases, non-hyperbolic flanking roots, refused vanishing
    fits and plateau maxima that do not sit at a non-degenerate interior point.
    """
    tie_tol = spec.numerics.tie_tol
    r = spec.r

    if comp.plateau:
        top = plateau_maximum(spec, comp)
        if top.position != "interior":
            raise DegenerateLimit(f"r is maximal at the plateau end x={top.location:.6g}")
        if top.curvature is None or not top.curvature < -spec.numerics.tol_hyperbolic:
            raise DegenerateLimit(f"interior maximum of r at x={top.location:.6g} is not strict (r''>=0)")
        return CarryingLimit(top.value, UNKNOWN, PLATEAU, "interior-maximum", "max r on the plateau",
                             "plateau", top.location)

    source, sink = comp.source, comp.sink
    _require_hyperbolic(source, "source")
    _require_hyperbolic(sink, "sink")

    if source is None and sink is None:
        return CarryingLimit(0.0, UNKNOWN, NO_ROOT, "f of one sign", "0", "none")

    if source is None:
        b = sink.location
        return CarryingLimit(float(r.evaluate(b)), EXPONENTIAL, INTO_STABLE_END, "stable-end", "r(b)", "stable", b)

    a = source.location
    vanishing = _alpha_of(comp)
    if vanishing.vanishes_identically:
        if sink is None:
            return CarryingLimit(0.0, UNKNOWN, OUT_OF_UNSTABLE_END, "n0 zero near a", "0", "none")
        b = sink.location
        return CarryingLimit(float(r.evaluate(b)), EXPONENTIAL, UNSTABLE_TO_STABLE, "n0 zero near a", "r(b)",
                             "stable", b)

    alpha = vanishing.alpha
    unstable_value = float(r.evaluate(a)) - (1.0 + alpha) * abs(source.slope)
    formula = "r(a) - f'(a)" if alpha == 0 else "r(a) - (1+alpha) f'(a)"

    if sink is None:
        scale = tie_tol * (1.0 + abs(unstable_value))
        if abs(unstable_value) <= scale:
            raise DegenerateLimit(f"r(a) - (1+alpha) f'(a) = 0 at a={a:.6g}")
        if unstable_value < 0:
            return CarryingLimit(0.0, UNKNOWN, OUT_OF_UNSTABLE_END, "negative", "0", "none", None, alpha)
        return CarryingLimit(unstable_value, EXPONENTIAL, OUT_OF_UNSTABLE_END, "positive", formula,
                             "unstable", a, alpha)

    b = sink.location
    stable_value = float(r.evaluate(b))
    top = max(stable_value, unstable_value)
    if abs(stable_value - unstable_value) <= tie_tol * (1.0 + abs(top)):
        raise DegenerateLimit(f"tie between r(b)={stable_value:.6g} and {formula}={unstable_value:.6g}")
    if stable_value > unstable_value:
        return CarryingLimit(stable_value, EXPONENTIAL, UNSTABLE_TO_STABLE, "stable-end", "r(b)", "stable", b, alpha)
    return CarryingLimit(unstable_value, EXPONENTIAL, UNSTABLE_TO_STABLE, "unstable-end", formula, "unstable", a, alpha)
