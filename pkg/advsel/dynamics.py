"""
Time integration of the full problem by two independent routes.

Particles: Lagrangian cells y_j moving with x' = f(x), each carrying the
mass w_j of n over its cell; w_j' = (r(x_j) - rho) w_j with rho = sum w_j.
The divergence term never appears because the cell itself stretches.

Compartments: rho_i' = (R_i(t) - rho) rho_i with R_i from carrying.py.

Both record rho on the same uniform output grid so they can be compared
point by point. The density itself comes from the semi-explicit formula
n(t, x) = n0(Y(t, x)) exp(int_0^t r~(Y(s, x)) ds - int_0^t rho).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .carrying import SOURCE_DEPTH, build_compartments, carrying_table, source_anchor, source_density, split_at
from .characteristics import BACKWARD, AnchoredNodes, flow_backward, flow_many
from .errors import NumericFailure, StepUnderflow
from .expr import breakpoints

logger = logging.getLogger(__name__)

PARTICLES = "particles"
COMPARTMENTS = "compartments"

MIN_PARTICLES = 16
LOG_NODE_SHARE = 2.0 / 3.0


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    masses: np.ndarray
    initial_nodes: np.ndarray
    time: float
    compartment: np.ndarray

    @property
    def total_mass(self):
        return float(np.sum(self.masses))


@dataclass(frozen=True)
class RhoTrajectory:
    """rho(t), per-compartment rho_i(t) and P(t) = int_0^t rho on a time grid."""

    times: np.ndarray
    rho: np.ndarray
    parts: np.ndarray
    integral: np.ndarray
    route: str
    labels: tuple = ()

    @property
    def horizon(self):
        return float(self.times[-1])

    @cached_property
    def _integral_spline(self):
        return CubicSpline(self.times, self.integral) if self.times.size >= 4 else None

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ValueError(f"t outside the trajectory span [0, {self.horizon}]")
        return t

    def rho_at(self, t):
        t = self._check(t)
        return np.interp(t, self.times, self.rho)

    def integral_at(self, t):
        """int_0^t rho(s) ds."""
        t = self._check(t)
        if self._integral_spline is None:
            out = np.interp(t, self.times, self.integral)
        else:
            out = self._integral_spline(t)
        return float(out) if np.ndim(out) == 0 else out

    def tail(self, fraction=0.1):
        """Indices of the output times in the last `fraction` of the run."""
        return np.flatnonzero(self.times >= (1.0 - fraction) * self.horizon)


@dataclass(frozen=True)
class Simulation:
    ensemble: ParticleEnsemble | None
    particles: RhoTrajectory | None
    compartments: RhoTrajectory | None = None

    @property
    def trajectory(self):
        return self.particles if self.particles is not None else self.compartments


def output_grid(spec, T):
    return np.linspace(0.0, float(T), int(spec.numerics.r_grid_points))


def mass_bound(spec, rho0, positions=None):
    """Upper bound on rho(t): max(sup r over the domain and the particle positions, rho(0))."""
    lo, hi = spec.domain
    r_sup = float(np.max(spec.r.evaluate(np.linspace(lo, hi, spec.numerics.grid_n))))
    if positions is not None and np.size(positions):
        r_sup = max(r_sup, float(np.max(spec.r.evaluate(np.asarray(positions)))))
    return max(r_sup, float(rho0))


# ---------------------------------------------------------------------------
# Particle route
# ---------------------------------------------------------------------------

def _midpoint_cells(a, b, count):
    edges = np.linspace(a, b, count + 1)
    return 0.5 * (edges[:-1] + edges[1:]), np.diff(edges)


def particle_nodes(spec, compartments, N, T):
    """
    Midpoint cells over each compartment's piece of support. Next to an
    unstable source, two thirds of a compartment's cells are uniform in
    ln|y - a|. Returns (AnchoredNodes, masses, compartment index per node).
    """
    lengths = np.array([c.piece[1] - c.piece[0] for c in compartments])
    counts = np.maximum(8, np.floor(N * lengths / lengths.sum()).astype(int))
    starts, masses, anchors, orients, logs, owner = [], [], [], [], [], []
    for comp, count in zip(compartments, counts):
        lo, hi = comp.piece
        width = hi - lo
        cuts = [b for b in breakpoints(spec.n0) if lo < b < hi]
        ys, ms, us = [], [], []
        anchor, orient = np.nan, 1.0
        anchored = None if comp.plateau else source_anchor(spec, comp)
        if anchored is not None:
            anchor, orient = anchored
            d_split = 0.1 * width
            near_cuts = [abs(c - anchor) for c in cuts if abs(c - anchor) < d_split]
            if near_cuts:
                d_split = min(near_cuts)
            d_min = width * math.exp(-(abs(comp.source.slope) * T + SOURCE_DEPTH))
            n_log = int(round(LOG_NODE_SHARE * count))
            u_mid, du = _midpoint_cells(math.log(d_min), math.log(d_split), n_log)
            d = np.exp(u_mid)
            ys.append(anchor + orient * d)
            ms.append(source_density(spec, comp, anchor, orient, d) * d * du)
            us.append(u_mid)
            count -= n_log
            if orient > 0:
                lo = anchor + d_split
            else:
                hi = anchor - d_split
        for a, b in split_at(lo, hi, cuts):
            y_mid, dy = _midpoint_cells(a, b, max(2, int(round(count * (b - a) / (hi - lo)))))
            ys.append(y_mid)
            ms.append(spec.n0.evaluate(y_mid) * dy)
            us.append(np.log(orient * (y_mid - anchor)) if anchored is not None else np.full(y_mid.size, np.nan))
        y = np.concatenate(ys)
        m = np.concatenate(ms)
        keep = m > 0
        starts.append(y[keep])
        masses.append(m[keep])
        anchors.append(np.full(keep.sum(), anchor))
        orients.append(np.full(keep.sum(), orient))
        logs.append(np.concatenate(us)[keep])
        owner.append(np.full(keep.sum(), comp.index))
    nodes = AnchoredNodes.build(spec, np.concatenate(starts), np.concatenate(anchors), np.concatenate(orients),
                                np.concatenate(logs))
    return nodes, np.concatenate(masses), np.concatenate(owner)


def simulate_particles(spec, T=None, N=None, t_eval=None):
    """
    Run the particle scheme to time T with about N cells.
    Returns (ParticleEnsemble at T, RhoTrajectory).
    """
    num = spec.numerics
    T = num.t_horizon if T is None else float(T)
    N = num.particles if N is None else int(N)
    if N < MIN_PARTICLES:
        raise ValueError(f"need at least {MIN_PARTICLES} particles (got {N})")
    if T < 0:
        raise ValueError("T must be non-negative")
    compartments = build_compartments(spec)
    nodes, masses, owner = particle_nodes(spec, compartments, N, max(T, 1.0))
    n = nodes.start.size
    times = output_grid(spec, T) if t_eval is None else np.asarray(t_eval, dtype=float)
    labels = tuple(c.label for c in compartments)

    if T == 0:
        ensemble = ParticleEnsemble(nodes.start.copy(), masses.copy(), nodes.start.copy(), 0.0, owner)
        rho0 = masses.sum()
        parts = np.array([[masses[owner == c.index].sum() for c in compartments]])
        return ensemble, RhoTrajectory(np.zeros(1), np.array([rho0]), parts, np.zeros(1), PARTICLES, labels)

    def rhs(_t, state):
        q, logw = state[:n], state[n:2 * n]
        qdot, x = nodes.velocity(spec, q)
        rho = np.sum(np.exp(logw))
        return np.concatenate([qdot, spec.r.evaluate(x) - rho, [rho]])

    y0 = np.concatenate([nodes.initial_state(), np.log(masses), [0.0]])
    try:
        sol = solve_ivp(rhs, (0.0, T), y0, method="RK45", t_eval=times, rtol=num.ode_rel_tol, atol=num.ode_abs_tol)
    except (ValueError, FloatingPointError) as e:
        raise NumericFailure(f"particle integration failed: {e}") from e
    if sol.status < 0:
        raise StepUnderflow(f"particle integration failed: {sol.message}")

    q, logw, P = sol.y[:n].T, sol.y[n:2 * n].T, sol.y[2 * n]
    w = np.exp(logw)
    rho = w.sum(axis=1)
    parts = np.stack([w[:, owner == c.index].sum(axis=1) for c in compartments], axis=1)
    positions = np.array([nodes.decode(row) for row in q])

    bound = mass_bound(spec, rho[0], positions)
    slack = 1e-9 + 10 * num.ode_rel_tol * bound
    if np.any(rho > bound + slack):
        k = int(np.argmax(rho - bound))
        raise NumericFailure(
            f"mass bound violated at t={sol.t[k]:.6g}: rho={rho[k]:.12g} > {bound:.12g}"
        )

    order = nodes.order()
    if np.any(np.diff(positions[-1][order]) < -1e-9 * spec.width):
        logger.warning("particle order not preserved at t=%.6g (solver tolerance too loose?)", T)

    ensemble = ParticleEnsemble(positions[-1], w[-1], nodes.start.copy(), float(sol.t[-1]), owner)
    logger.debug("particles: %d cells, rho(%.3g) = %.12g", n, T, rho[-1])
    return ensemble, RhoTrajectory(sol.t, rho, parts, P, PARTICLES, labels)


# ---------------------------------------------------------------------------
# Compartment route
# ---------------------------------------------------------------------------

def simulate_compartments(spec, compartments=None, T=None, t_eval=None) -> RhoTrajectory:
    """Integrate rho_i' = (R_i(t) - sum rho_j) rho_i in log variables."""
    num = spec.numerics
    T = num.t_horizon if T is None else float(T)
    if T < 0:
        raise ValueError("T must be non-negative")
    compartments = build_compartments(spec) if compartments is None else compartments
    times = output_grid(spec, T) if t_eval is None else np.asarray(t_eval, dtype=float)
    labels = tuple(c.label for c in compartments)
    if T == 0:
        tables = [carrying_table(spec, c, np.zeros(1)) for c in compartments]
        rho0 = np.exp([tb.log_S[0] for tb in tables])
        return RhoTrajectory(np.zeros(1), np.array([rho0.sum()]), rho0[None, :], np.zeros(1), COMPARTMENTS, labels)

    grid = output_grid(spec, T)
    tables = []
    for comp in compartments:
        try:
            tables.append(carrying_table(spec, comp, grid))
        except NumericFailure:
            raise
        except Exception as e:
            raise NumericFailure(f"carrying capacity evaluation failed: {e}", comp.index) from e
    k = len(tables)
    z0 = np.array([tb.log_S[0] for tb in tables])

    def rhs(t, state):
        z = state[:k]
        rho = np.sum(np.exp(z))
        R = np.array([tb.R_at(t) for tb in tables])
        return np.concatenate([R - rho, [rho]])

    try:
        sol = solve_ivp(rhs, (0.0, T), np.concatenate([z0, [0.0]]), method="RK45", t_eval=times,
                        rtol=num.ode_rel_tol, atol=num.ode_abs_tol)
    except (ValueError, FloatingPointError) as e:
        raise NumericFailure(f"compartment system failed: {e}") from e
    if sol.status < 0:
        raise StepUnderflow(f"compartment system failed: {sol.message}")
    parts = np.exp(sol.y[:k].T)
    if np.any(parts <= 0):
        raise NumericFailure("a compartment mass reached zero")
    return RhoTrajectory(sol.t, parts.sum(axis=1), parts, sol.y[k], COMPARTMENTS, labels)


def route_discrepancy(a: RhoTrajectory, b: RhoTrajectory) -> float:
    """max |rho_a - rho_b| / (1 + rho) over the common time grid."""
    t = a.times[a.times <= min(a.horizon, b.horizon)]
    ra, rb = a.rho_at(t), b.rho_at(t)
    return float(np.max(np.abs(ra - rb) / (1.0 + np.abs(ra))))


# ---------------------------------------------------------------------------
# Density
# ---------------------------------------------------------------------------

def _n0_at(spec, Y, clamped, xs):
    """n0 at the feet of backward characteristics; zero outside the support."""
    s_lo, s_hi = spec.support
    Y = np.atleast_1d(np.asarray(Y, dtype=float))
    inside = (Y >= s_lo) & (Y <= s_hi)
    out = np.zeros_like(Y)
    if np.any(inside):
        out[inside] = spec.n0.evaluate(Y[inside])
    for j in np.flatnonzero(inside & clamped):
        side = "right" if xs[j] > Y[j] else "left"
        out[j] = spec.n0.evaluate(Y[j], side=side)
    return out


def evaluate_density(spec, rho, t, x) -> float:
    """n(t, x) from the semi-explicit formula, using P(t) from the trajectory."""
    P = rho.integral_at(t)
    res = flow_backward(spec, x, t, fields=[spec.r_tilde], strict=False)
    value = _n0_at(spec, res.endpoint, np.array([res.clamped_to is not None]), np.array([x]))[0]
    if value == 0.0:
        return 0.0
    return float(value * math.exp(res.path_integrals[str(spec.r_tilde)] - P))


def density_snapshot(spec, rho, t, xs) -> np.ndarray:
    """Vectorised evaluate_density over many points."""
    xs = np.asarray(xs, dtype=float)
    P = rho.integral_at(t)
    if t == 0:
        return _n0_at(spec, xs, np.zeros(xs.size, bool), xs)
    bundle = flow_many(spec, xs, [0.0, float(t)], BACKWARD, fields=[spec.r_tilde])
    Y = bundle.positions[-1]
    n0 = _n0_at(spec, Y, bundle.clamped, xs)
    with np.errstate(over="ignore", under="ignore"):
        return np.where(n0 > 0, n0 * np.exp(bundle.integrals[-1, :, 0] - P), 0.0)


# ---------------------------------------------------------------------------
# Concentration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConcentrationReport:
    radius: float
    shares: tuple
    outside: float

    def share_at(self, location):
        for loc, share in self.shares:
            if loc == location:
                return share
        raise KeyError(location)


def mass_share(ensemble, location, radius):
    total = ensemble.total_mass
    if total <= 0:
        return 0.0
    near = np.abs(ensemble.positions - location) <= radius
    return float(ensemble.masses[near].sum() / total)


def concentration_report(ensemble, equilibria, radius) -> ConcentrationReport:
    """Fraction of the total mass within `radius` of each equilibrium, and outside all of them."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    locations = [getattr(e, "location", e) for e in equilibria]
    total = ensemble.total_mass
    if total <= 0:
        return ConcentrationReport(radius, tuple((loc, 0.0) for loc in locations), 1.0)
    covered = np.zeros(ensemble.positions.size, bool)
    shares = []
    for loc in locations:
        near = np.abs(ensemble.positions - loc) <= radius
        covered |= near
        shares.append((float(loc), float(ensemble.masses[near].sum() / total)))
    outside = float(ensemble.masses[~covered].sum() / total)
    return ConcentrationReport(radius, tuple(shares), outside)
