"""
Long-time regime of the full problem.

`classify` compares the carrying-capacity limits of all compartments: the
compartment with the largest limit takes all the mass. Where that limit
comes from decides the shape of the limit:

    stable root b         -> r(b) delta_b
    plateau maximiser x_M -> r(x_M) delta_{x_M}
    unstable root a       -> explicit L1 profile with mass r(a) - (1+alpha) f'(a)
    every limit zero      -> extinction

`build_limit_profile` constructs the profile, `stationarity_residual` checks
it against the weak stationary equation and `score_against_prediction`
compares a simulation with a verdict.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from .carrying import (
    EXPONENTIAL,
    PLATEAU,
    UNKNOWN,
    CarryingLimit,
    build_compartments,
    gl_panels,
    plateau_maximum,
    predict_R_limit,
)
from .characteristics import cumulative_characteristic_integral
from .dynamics import density_snapshot, mass_share
from .errors import DegenerateLimit, NonApplicableFormula, NonIntegrableEndpoint
from .expr import X

logger = logging.getLogger(__name__)

DIRAC = "dirac"
PROFILE = "profile"
EXTINCTION = "extinction"
DEGENERATE = "degenerate"

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

DEFAULT_TOLERANCES = {
    "rho_abs": 0.02,
    "dirac_share": 0.99,
    "profile_l1_rel": 0.05,
    "extinction_rho": 0.01,
    "drift_rel": 1e-3,
}


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimePrediction:
    verdict: str
    provenance: str
    location: float | None = None
    mass: float | None = None
    interval: tuple | None = None
    anchor: float | None = None
    alpha: float | None = None
    rho_inf: float | None = None
    formula: str | None = None
    compartments: tuple = ()
    limits: tuple = ()
    reason: str | None = None

    @property
    def limit(self):
        """Predicted lim rho(t), when the verdict has one."""
        if self.verdict == DIRAC:
            return self.mass
        if self.verdict == PROFILE:
            return self.rho_inf
        if self.verdict == EXTINCTION:
            return 0.0
        return None

    def summary(self):
        if self.verdict == DIRAC:
            return f"Dirac mass {self.mass:.6g} at x={self.location:.6g} ({self.provenance})"
        if self.verdict == PROFILE:
            lo, hi = self.interval
            return (f"L1 profile on ({lo:.6g}, {hi:.6g}) from x={self.anchor:.6g}, "
                    f"alpha={self.alpha:g}, rho_inf={self.rho_inf:.6g} = {self.formula}")
        if self.verdict == EXTINCTION:
            return f"extinction: every carrying capacity tends to 0 ({self.provenance})"
        return f"degenerate: {self.reason}"

    def to_dict(self):
        out = {"verdict": self.verdict, "provenance": self.provenance}
        if self.verdict == DIRAC:
            out.update(location=self.location, mass=self.mass)
        elif self.verdict == PROFILE:
            out.update(interval=list(self.interval), anchor=self.anchor, alpha=self.alpha,
                       rho_inf=self.rho_inf, formula=self.formula)
        elif self.verdict == DEGENERATE:
            out["degenerate_reason"] = self.reason
        out["compartments"] = list(self.compartments)
        out["limits"] = [lim.to_dict() for lim in self.limits]
        return out


def _degenerate(reason, limits=()):
    logger.info("degenerate verdict: %s", reason)
    return RegimePrediction(DEGENERATE, "degenerate", limits=tuple(limits), reason=reason)


def compartment_limit(spec, comp) -> CarryingLimit:
    """predict_R_limit, plus the plateau-junction case where r peaks where f starts to flow out."""
    if comp.plateau:
        top = plateau_maximum(spec, comp)
        if top.position == "junction":
            return CarryingLimit(top.value, UNKNOWN, PLATEAU, "junction-maximum", "r(a)", "junction", top.location)
    return predict_R_limit(spec, comp)


def _same_origin(a, b, tol):
    if a.origin != b.origin:
        return False
    if a.location is None or b.location is None:
        return a.location is None and b.location is None
    return abs(a.location - b.location) <= tol


def classify(spec, compartments=None) -> RegimePrediction:
    """Predict the regime from the limits of all compartments."""
    compartments = build_compartments(spec) if compartments is None else compartments
    if not compartments:
        return _degenerate("no compartment meets the support of n0")
    limits = []
    for comp in compartments:
        try:
            limits.append(compartment_limit(spec, comp))
        except DegenerateLimit as e:
            return _degenerate(f"compartment {comp.label}: {e.reason}", limits)

    values = np.array([lim.value for lim in limits])
    top = float(values.max())
    tie = spec.numerics.tie_tol * (1.0 + abs(top))
    if top <= tie:
        return RegimePrediction(EXTINCTION, "all carrying capacities tend to 0",
                                compartments=tuple(c.index for c in compartments), limits=tuple(limits))

    winners = [k for k, v in enumerate(values) if v >= top - tie]
    best = limits[winners[0]]
    for k in winners[1:]:
        if not _same_origin(best, limits[k], spec.numerics.tol_root):
            return _degenerate(
                f"tie between compartments {compartments[winners[0]].label} and {compartments[k].label} "
                f"(limits {best.value:.9g} and {limits[k].value:.9g})", limits)
    provenance = f"{best.case_tag}/{best.branch}"
    chosen = tuple(compartments[k].index for k in winners)

    if best.origin in ("stable", "plateau", "junction"):
        return RegimePrediction(DIRAC, provenance, location=best.location, mass=best.value,
                                formula=best.formula, compartments=chosen, limits=tuple(limits))

    lo = min(compartments[k].lo for k in winners)
    hi = max(compartments[k].hi for k in winners)
    return RegimePrediction(PROFILE, provenance, interval=(lo, hi), anchor=best.location, alpha=best.alpha,
                            rho_inf=best.value, formula=best.formula, compartments=chosen, limits=tuple(limits))


# ---------------------------------------------------------------------------
# Limit profiles
# ---------------------------------------------------------------------------

PROFILE_DEPTH = 40.0


@dataclass
class _Side:
    """One side of the anchor: the profile on the open interval between a and `end`."""

    sign: float
    end: float
    end_is_root: bool
    exponent: float
    weight: float
    mid: float
    constant: float = 1.0
    phi_mid: float = 0.0
    psi_mid: float = 0.0


@dataclass
class LimitProfile:
    """
    n(x) = D |x - a|^alpha exp(int_a^x (r~ - rho_inf)/f - alpha/(s - a) ds)
    on one or both sides of the unstable root a.
    """

    spec: object = field(repr=False)
    interval: tuple
    anchor: float
    alpha: float
    rho_inf: float
    sides: list = field(repr=False)
    xs: np.ndarray = field(default=None, repr=False)
    values: np.ndarray = field(default=None, repr=False)

    @property
    def end_exponents(self):
        """Exponent of |x - end| at each stable end, keyed by end location."""
        return {s.end: s.exponent for s in self.sides if s.end_is_root}

    @property
    def normalization(self):
        return self.sides[0].constant

    @property
    def endpoint_behaviour(self):
        out = {}
        for s in self.sides:
            if not s.end_is_root:
                out[s.end] = "truncated"
            elif s.exponent > 0:
                out[s.end] = "zero"
            elif s.exponent == 0:
                out[s.end] = "finite"
            else:
                out[s.end] = "infinite"
        return out

    # numerators of the log-derivative; the second has the pole at `end` removed
    def _numerator(self):
        a, alpha = self.anchor, self.alpha
        g = self.spec.r_tilde - self.rho_inf
        if alpha:
            g = g - alpha * self.spec.f / (X - a)
        return g

    def _regular_numerator(self, side):
        return self._numerator() - side.exponent * self.spec.f / (X - side.end)

    def _log_shape(self, side, xs):
        """log of |x - a|^alpha exp(int_a^x ...) for xs strictly between a and side.end."""
        a = self.anchor
        out = np.empty_like(xs)
        if side.end_is_root:
            near = np.abs(xs - a) <= abs(side.mid - a)
        else:
            near = np.ones(xs.shape, bool)
        away = "right" if side.sign > 0 else "left"
        if np.any(near):
            out[near] = cumulative_characteristic_integral(self.spec, a, xs[near], self._numerator(), side=away)
        far = ~near
        if np.any(far):
            # int_mid^x of the log-derivative: pole term in closed form, remainder integrated from the end
            toward = "left" if side.sign > 0 else "right"
            psi = cumulative_characteristic_integral(self.spec, side.end, xs[far], self._regular_numerator(side),
                                                     side=toward)
            pole = side.exponent * (np.log(np.abs(xs[far] - side.end)) - math.log(abs(side.mid - side.end)))
            out[far] = side.phi_mid + pole + psi - side.psi_mid
        if self.alpha:
            out += self.alpha * np.log(np.abs(xs - a))
        return out

    def _phi(self, side, x):
        away = "right" if side.sign > 0 else "left"
        return float(cumulative_characteristic_integral(self.spec, self.anchor, np.array([x]), self._numerator(),
                                                        side=away)[0])

    def _prepare(self, side):
        side.phi_mid = self._phi(side, side.mid)
        if side.end_is_root:
            toward = "left" if side.sign > 0 else "right"
            side.psi_mid = float(cumulative_characteristic_integral(
                self.spec, side.end, np.array([side.mid]), self._regular_numerator(side), side=toward)[0])

    def _shape_mass(self, side):
        """Integral of the unnormalised profile over one side."""
        a, b = self.anchor, side.end
        length = abs(b - a)
        floor = 4 * np.finfo(float).eps
        total = 0.0
        # log panels at a
        d_lo = max(length * math.exp(-PROFILE_DEPTH / (self.alpha + 1.0)), floor * max(1.0, abs(a)))
        d_hi = 0.1 * length
        u, w = gl_panels(math.log(d_lo), math.log(d_hi), max(1, int(math.ceil(math.log(d_hi / d_lo)))))
        d = np.exp(u)
        vals = np.exp(self._log_shape(side, a + side.sign * d))
        total += float(np.sum(vals * d * w))
        total += float(vals[0]) * d[0] / (self.alpha + 1.0)
        inner_lo = a + side.sign * d_hi
        # log panels at the stable end
        if side.end_is_root:
            q = side.exponent
            e_lo = max(length * math.exp(-PROFILE_DEPTH / max(q + 1.0, 0.05)), floor * max(1.0, abs(b)))
            e_hi = 0.1 * length
            u, w = gl_panels(math.log(e_lo), math.log(e_hi), max(1, int(math.ceil(math.log(e_hi / e_lo)))))
            e = np.exp(u)
            vals = np.exp(self._log_shape(side, b - side.sign * e))
            total += float(np.sum(vals * e * w))
            total += float(vals[0]) * e[0] / (q + 1.0)
            inner_hi = b - side.sign * e_hi
        else:
            inner_hi = b
        x, w = gl_panels(min(inner_lo, inner_hi), max(inner_lo, inner_hi), 64)
        total += float(np.sum(np.exp(self._log_shape(side, x)) * w))
        return total

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).astype(float)
        out = np.zeros_like(flat)
        for side in self.sides:
            lo, hi = sorted((self.anchor, side.end))
            inside = (flat > lo) & (flat < hi)
            if np.any(inside):
                out[inside] = side.constant * np.exp(self._log_shape(side, flat[inside]))
        at_anchor = flat == self.anchor
        if np.any(at_anchor) and self.alpha == 0:
            out[at_anchor] = max(s.constant for s in self.sides)
        return out if x.ndim else float(out[0])


def _stable_end_exponent(spec, end, rho_inf):
    """(r(b) - rho_inf) / f'(b) - 1 at a stable end b."""
    slope = spec.slope_at(end)
    return (float(spec.r.evaluate(end)) - rho_inf) / slope - 1.0


def build_limit_profile(spec, pred: RegimePrediction, grid=401) -> LimitProfile:
    """Construct and normalise the L1 limit profile of a Profile verdict."""
    if pred.verdict != PROFILE:
        raise NonApplicableFormula(f"no L1 limit profile; verdict is {pred.verdict.capitalize()}")
    compartments = {c.index: c for c in build_compartments(spec)}
    a, alpha, rho_inf = pred.anchor, pred.alpha or 0.0, pred.rho_inf
    tol = spec.numerics.tol_root
    sides = []
    for idx in pred.compartments:
        comp = compartments[idx]
        sign = 1.0 if comp.hi > a + tol else -1.0
        end = comp.hi if sign > 0 else comp.lo
        sink = comp.sink
        end_is_root = sink is not None and abs(sink.location - end) <= tol
        exponent = _stable_end_exponent(spec, end, rho_inf) if end_is_root else 0.0
        if end_is_root and exponent <= -1.0:
            raise NonIntegrableEndpoint(end, exponent)
        coefficient = comp.vanishing.coefficient if comp.vanishing is not None else 0.0
        weight = coefficient if coefficient and math.isfinite(coefficient) and coefficient > 0 else 1.0
        sides.append(_Side(sign, end, end_is_root, exponent, weight, 0.5 * (a + end)))

    profile = LimitProfile(spec, pred.interval, a, alpha, rho_inf, sides)
    for side in sides:
        profile._prepare(side)
    masses = [profile._shape_mass(side) for side in sides]
    scale = rho_inf / sum(s.weight * m for s, m in zip(sides, masses))
    for side in sides:
        side.constant = scale * side.weight
    logger.debug("profile constants: %s", [s.constant for s in sides])

    lo, hi = pred.interval
    k = np.arange(grid)
    xs = 0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(math.pi * (k + 0.5) / grid)
    profile.xs = xs
    profile.values = profile(xs)
    return profile


# ---------------------------------------------------------------------------
# Stationarity
# ---------------------------------------------------------------------------

def _bumps(lo, hi, count):
    """(center, half-width) pairs of (1 - u^2)^3 bumps at three scales inside [lo, hi]."""
    length = hi - lo
    out = []
    scales = (4, 8, 16)
    per = max(1, count // len(scales))
    for s in scales:
        half = length / (2 * s)
        centers = np.linspace(lo + half, hi - half, per)
        out.extend((float(c), half) for c in centers)
    return out[:count] if len(out) >= count else out


def _bump(u):
    return np.where(np.abs(u) < 1, (1 - u * u) ** 3, 0.0)


def _bump_prime(u, half):
    return np.where(np.abs(u) < 1, -6 * u * (1 - u * u) ** 2 / half, 0.0)


def stationarity_residual(spec, profile, test_fn_count=None) -> float:
    """
    max over test bumps phi of |int (f phi' + (r - rho_inf) phi) n dx| / (sup phi * rho_inf).
    `profile` needs `interval`, `rho_inf` and to be callable on arrays.
    """
    count = spec.numerics.stationarity_tests if test_fn_count is None else int(test_fn_count)
    lo, hi = profile.interval
    margin = 0.02 * (hi - lo)
    bumps = _bumps(lo + margin, hi - margin, count)
    pts, wts = [], []
    for c, h in bumps:
        x, w = gl_panels(c - h, c + h, 64)
        pts.append(x)
        wts.append(w)
    allx = np.concatenate(pts)
    n = profile(allx)
    fx = spec.f.evaluate(allx)
    rx = spec.r.evaluate(allx)
    worst = 0.0
    offset = 0
    for (c, h), x, w in zip(bumps, pts, wts):
        sl = slice(offset, offset + x.size)
        offset += x.size
        u = (x - c) / h
        integrand = (fx[sl] * _bump_prime(u, h) + (rx[sl] - profile.rho_inf) * _bump(u)) * n[sl]
        worst = max(worst, abs(float(np.sum(integrand * w))))
    return worst / profile.rho_inf


def dirac_stationarity_residual(spec, location, mass, test_fn_count=None) -> float:
    """Weak residual of mass * delta_location for bumps whose support contains the point."""
    count = spec.numerics.stationarity_tests if test_fn_count is None else int(test_fn_count)
    fx = float(spec.f.evaluate(location))
    rx = float(spec.r.evaluate(location))
    worst = 0.0
    for k in range(count):
        half = 0.05 * spec.width * (1 + k) / count
        c = location + 0.5 * half * (k % 3 - 1)
        u = (location - c) / half
        value = mass * (fx * float(_bump_prime(u, half)) + (rx - mass) * float(_bump(u)))
        worst = max(worst, abs(value))
    return worst / max(mass, np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

# rate fit outcomes
FITTED = "fitted"
FITTED_EARLY = "fitted before window"
CONVERGED_EARLY = "converged before fit window"
TOO_FEW_POINTS = "too few points"

MIN_FIT_POINTS = 5


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: int
    status: str = FITTED

    @property
    def fitted(self):
        return self.status in (FITTED, FITTED_EARLY)

    def summary(self):
        if not self.fitted:
            return self.status
        return f"rate {self.slope:.4g} (R^2 {self.r_squared:.3f}, {self.points} points, {self.status})"


def _decaying_run(t, gap, floor, t_start):
    """Indices from t_start up to the first time the gap drops into the noise floor."""
    usable = (t >= t_start) & (gap > floor)
    idx = np.flatnonzero(usable)
    if idx.size:
        stop = np.flatnonzero(~usable[idx[0]:])
        if stop.size:
            idx = idx[: stop[0]]
    return idx


def exponential_rate_fit(trajectory, rho_inf, start_fraction=0.25) -> RateFit:
    """
    Linear fit of log|rho(t) - rho_inf| over the decaying tail, above the solver
    noise floor. When the gap reaches the floor before start_fraction of the
    horizon, the window shrinks to the later half of the run before the floor.
    """
    t, rho = trajectory.times, trajectory.rho
    gap = np.abs(rho - rho_inf)
    floor = 1e-7 * (1.0 + abs(rho_inf))
    status = FITTED
    idx = _decaying_run(t, gap, floor, start_fraction * t[-1])
    if idx.size < MIN_FIT_POINTS and start_fraction > 0:
        early = _decaying_run(t, gap, floor, 0.0)
        early = early[early.size // 2:]
        if early.size >= MIN_FIT_POINTS:
            idx, status = early, FITTED_EARLY
    if idx.size < MIN_FIT_POINTS:
        status = CONVERGED_EARLY if gap[-1] <= floor else TOO_FEW_POINTS
        return RateFit(math.nan, math.nan, 0.0, int(idx.size), status)
    tt, yy = t[idx], np.log(gap[idx])
    slope, intercept = np.polyfit(tt, yy, 1)
    resid = yy - (slope * tt + intercept)
    ss_tot = float(np.sum((yy - yy.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return RateFit(float(slope), float(intercept), r2, int(idx.size), status)


@dataclass(frozen=True)
class ScoreReport:
    status: str
    verdict: str
    metrics: dict
    tolerances: dict
    notes: tuple = ()

    @property
    def passed(self):
        return self.status == PASS

    def to_dict(self):
        return {"status": self.status, "verdict": self.verdict, "metrics": dict(self.metrics),
                "tolerances": dict(self.tolerances), "notes": list(self.notes)}


def relative_drift(trajectory, fraction=0.1):
    tail = trajectory.rho[trajectory.tail(fraction)]
    scale = max(abs(float(trajectory.rho[-1])), np.finfo(float).tiny)
    return float((tail.max() - tail.min()) / scale)


def _l1_distance(spec, trajectory, profile, T):
    lo, hi = profile.interval
    x, w = gl_panels(lo, hi, 128)
    numeric = density_snapshot(spec, trajectory, T, x)
    return float(np.sum(np.abs(numeric - profile(x)) * w))


def score_against_prediction(spec, pred, sim, tolerances=None) -> ScoreReport:
    """Compare a finished simulation with a verdict."""
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    traj = sim.trajectory
    T = traj.horizon
    rho_T = float(traj.rho[-1])
    metrics = {"T": T, "rho_T": rho_T}

    if pred.verdict == DEGENERATE:
        return ScoreReport(INCONCLUSIVE, pred.verdict, metrics, tol, (f"degenerate: {pred.reason}",))

    if pred.verdict == EXTINCTION:
        threshold = max(tol["extinction_rho"], 2.0 / T) if T > 0 else tol["extinction_rho"]
        tail = traj.rho[traj.tail(0.1)]
        monotone = bool(np.all(np.diff(tail) <= 1e-12 * (1.0 + tail[:-1])))
        metrics.update(threshold=threshold, non_increasing=monotone)
        ok = rho_T <= threshold and monotone
        return ScoreReport(PASS if ok else FAIL, pred.verdict, metrics, tol)

    drift = relative_drift(traj)
    metrics["drift"] = drift
    if drift >= tol["drift_rel"]:
        return ScoreReport(INCONCLUSIVE, pred.verdict, metrics, tol,
                           (f"rho still moving: drift {drift:.3g} over the last 10%; increase T",))

    fit = exponential_rate_fit(traj, pred.limit)
    metrics.update(rate=fit.slope if fit.fitted else None, rate_fit=fit.status)

    if pred.verdict == DIRAC:
        if sim.ensemble is None:
            raise ValueError("Dirac scoring needs the particle ensemble")
        radius = spec.numerics.dirac_radius_fraction * spec.width
        share = mass_share(sim.ensemble, pred.location, radius)
        err = abs(rho_T - pred.mass)
        metrics.update(share=share, radius=radius, rho_error=err)
        ok = share >= tol["dirac_share"] and err <= tol["rho_abs"]
        return ScoreReport(PASS if ok else FAIL, pred.verdict, metrics, tol)

    profile = build_limit_profile(spec, pred)
    l1 = _l1_distance(spec, traj, profile, T)
    err = abs(rho_T - pred.rho_inf)
    metrics.update(l1=l1, rho_error=err)
    ok = l1 <= tol["profile_l1_rel"] * pred.rho_inf and err <= tol["rho_abs"]
    return ScoreReport(PASS if ok else FAIL, pred.verdict, metrics, tol)


def speed_of(pred) -> str:
    """Speed tag of the winning limit."""
    for lim in pred.limits:
        if pred.limit is not None and lim.value == pred.limit:
            return lim.speed
    return UNKNOWN


__all__ = [
    "DIRAC", "PROFILE", "EXTINCTION", "DEGENERATE", "PASS", "FAIL", "INCONCLUSIVE", "EXPONENTIAL",
    "FITTED", "FITTED_EARLY", "CONVERGED_EARLY", "TOO_FEW_POINTS",
    "RegimePrediction", "LimitProfile", "RateFit", "ScoreReport",
    "classify", "compartment_limit", "build_limit_profile", "stationarity_residual",
    "dirac_stationarity_residual", "exponential_rate_fit", "relative_drift", "score_against_prediction",
    "speed_of",
]
