"""
advsel command line.

Subcommands:
  validate    check a problem config
  simulate    run the particle and/or compartment route, write rho(t) and n(t, x)
  classify    predict the long-time regime
  limit       write the L1 limit profile of a Profile verdict
  verify      classify, simulate and score the run against the prediction
  sweep       classify a config template over a parameter grid
  suite       verify every problem of a suite from problems/index.yaml
  trajectory  write one characteristic X(t, x0) or Y(t, x0)
  carrying    write log S(t) and R(t) of every compartment

Exit codes:
  0 ok (a Degenerate verdict is a finding, not an error)
  1 verify failed or unexpected error    2 I/O error
  3 validation failure                   4 no limit profile for the verdict
  5 expression parse error               6 numeric failure
  7 verify inconclusive (horizon too short)

Numerics can be overridden from the environment: ADVSEL_<FIELD>=value,
e.g. ADVSEL_TOL_ROOT=1e-9 (environment > config file > defaults).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np
import yaml

from .asymptotics import (
    DIRAC,
    FAIL,
    INCONCLUSIVE,
    PASS,
    build_limit_profile,
    classify,
    compartment_limit,
    speed_of,
)
from .budget import RunBudget
from .carrying import build_compartments, carrying_table
from .characteristics import BACKWARD, FORWARD, build_flow_cache
from .dynamics import (
    density_snapshot,
    output_grid,
    route_discrepancy,
    simulate_compartments,
    simulate_particles,
)
from .errors import (
    AdvselError,
    BudgetExceeded,
    DegenerateLimit,
    ExprError,
    ExprSyntaxError,
    FlowError,
    IntegralError,
    NonApplicableFormula,
    NumericFailure,
    UnknownIdentifier,
    ValidationFailed,
)
from .model import NumericConfig, load_config, validate
from .outputs import (
    RunManifest,
    dumps,
    format_value,
    write_carrying,
    write_characteristic,
    write_csv,
    write_density,
    write_json,
    write_profile,
    write_trajectory,
)
from .runner import LabRunner, verify_spec
from .validator import validate_all

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_IO = 2
EXIT_INVALID = 3
EXIT_NO_PROFILE = 4
EXIT_PARSE = 5
EXIT_NUMERIC = 6
EXIT_INCONCLUSIVE = 7

ROUTE_AGREEMENT = 5e-3
PROJECT_ROOT = Path(__file__).resolve().parents[1]


def exit_code_for(exc):
    """Map an exception onto the documented exit-code taxonomy."""
    if isinstance(exc, ValidationFailed):
        return EXIT_INVALID
    if isinstance(exc, (ExprSyntaxError, UnknownIdentifier)):
        return EXIT_PARSE
    if isinstance(exc, NonApplicableFormula):
        return EXIT_NO_PROFILE
    if isinstance(exc, (ExprError, FlowError, IntegralError, NumericFailure, DegenerateLimit)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, yaml.YAMLError, json.JSONDecodeError)):
        return EXIT_IO
    return EXIT_FAILED


def _load(args):
    config = load_config(args.config, env=os.environ)
    return config, validate(config)


def _horizon(args, spec):
    return spec.numerics.t_horizon if getattr(args, "T", None) is None else float(args.T)


# ── validate ─────────────────────────────────────────────────────────────────

def cmd_validate(args):
    if os.path.isdir(args.config):
        return EXIT_OK if validate_all(args.config) else EXIT_INVALID
    config = load_config(args.config, env=os.environ)
    spec = validate(config)
    print(f"✅ {config.name}: valid")
    print(f"   domain [{spec.domain[0]:.6g}, {spec.domain[1]:.6g}], "
          f"support [{spec.support[0]:.6g}, {spec.support[1]:.6g}]")
    for eq in spec.equilibria:
        where = f"plateau [{eq.plateau[0]:.6g}, {eq.plateau[1]:.6g}]" if eq.plateau else f"x={eq.location:.6g}"
        print(f"   equilibrium {where}: {eq.kind} (f'={eq.slope:.6g})")
    for w in spec.warnings:
        print(f"   ⚠️  {w.kind}: {w.message}")
    return EXIT_OK


# ── simulate ─────────────────────────────────────────────────────────────────

def cmd_simulate(args):
    config, spec = _load(args)
    T = _horizon(args, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("simulate", config.to_mapping(), spec.numerics.as_dict())
    start = time.perf_counter()

    particles = compartments = None
    if args.route in ("particles", "both"):
        _ensemble, particles = simulate_particles(spec, T, args.N)
        manifest.add(write_trajectory(out / "trajectory_particles.csv", particles))
        print(f"[Simulate] particles: rho({T:g}) = {particles.rho[-1]:.10g}")
    if args.route in ("compartments", "both"):
        compartments = simulate_compartments(spec, T=T)
        manifest.add(write_trajectory(out / "trajectory_compartments.csv", compartments))
        print(f"[Simulate] compartments: rho({T:g}) = {compartments.rho[-1]:.10g}")
    if particles is not None and compartments is not None:
        gap = route_discrepancy(particles, compartments)
        mark = "✅" if gap <= ROUTE_AGREEMENT else "❌"
        print(f"[Simulate] {mark} route discrepancy {gap:.3e} (tolerance {ROUTE_AGREEMENT:g})")

    trajectory = particles if particles is not None else compartments
    xs = np.linspace(spec.domain[0], spec.domain[1], args.grid)
    for t in (args.snap or [T]):
        if not 0 <= t <= T:
            print(f"[Simulate] ⏭️  snapshot t={t:g} outside [0, {T:g}]")
            continue
        values = density_snapshot(spec, trajectory, t, xs)
        manifest.add(write_density(out / f"density_t{format_value(float(t))}.csv", xs, values))

    manifest.wall_clock = time.perf_counter() - start
    manifest.write(out / "manifest.json")
    print(f"[Simulate] wrote {len(manifest.outputs)} files to {out}")
    return EXIT_OK


# ── classify ─────────────────────────────────────────────────────────────────

def cmd_classify(args):
    _config, spec = _load(args)
    pred = classify(spec)
    doc = pred.to_dict()
    doc["speed"] = speed_of(pred)
    if args.out:
        write_json(args.out, doc)
    if args.json:
        sys.stdout.write(dumps(doc))
    else:
        print(f"[Classify] {pred.summary()}")
        for comp_limit in pred.limits:
            print(f"   {comp_limit.case_tag:<20} {comp_limit.branch:<18} limit {comp_limit.value:.9g} "
                  f"({comp_limit.formula})")
    return EXIT_OK


# ── limit ────────────────────────────────────────────────────────────────────

def cmd_limit(args):
    _config, spec = _load(args)
    pred = classify(spec)
    print(f"[Limit] {pred.summary()}")
    profile = build_limit_profile(spec, pred, grid=args.grid)
    path = write_profile(args.out, profile)
    ends = ", ".join(f"x={end:.6g}: {kind}" for end, kind in profile.endpoint_behaviour.items())
    print(f"[Limit] ✅ wrote {args.grid} samples to {path} (D={profile.normalization:.10g}; {ends})")
    return EXIT_OK


# ── verify ───────────────────────────────────────────────────────────────────

def cmd_verify(args):
    _config, spec = _load(args)
    T = _horizon(args, spec)
    pred, _sim, score = verify_spec(spec, T, args.N)
    print(f"[Verify] prediction: {pred.summary()}")
    for key, value in sorted(score.metrics.items()):
        print(f"   {key:<16} {format_value(value)}")
    for note in score.notes:
        print(f"   {note}")
    if args.json:
        write_json(args.json, {"prediction": pred.to_dict(), "score": score.to_dict()})
    symbol = {PASS: "✅", FAIL: "❌", INCONCLUSIVE: "❔"}[score.status]
    print(f"[Verify] {symbol} {score.status.upper()}")
    if score.status == PASS:
        return EXIT_OK
    if score.status == INCONCLUSIVE:
        return EXIT_INCONCLUSIVE
    return EXIT_FAILED


# ── sweep ────────────────────────────────────────────────────────────────────

SWEEP_COLUMNS = ["verdict", "limit", "location", "alpha", "provenance", "reason"]


def parse_param(text):
    """'c=0.1:5:50' -> ('c', array of 50 values); count 0 gives an empty range."""
    try:
        name, rng = text.split("=", 1)
        start, stop, count = rng.split(":")
        values = np.linspace(float(start), float(stop), int(count))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NAME=START:STOP:COUNT, got {text!r}")
    if not name.isidentifier():
        raise argparse.ArgumentTypeError(f"parameter name {name!r} is not an identifier")
    return name, values


def sweep_point(config, names, values):
    """Classify one point of a sweep; picklable for process pools."""
    row = list(values)
    try:
        spec = validate(config.substitute(dict(zip(names, values))))
        pred = classify(spec)
    except (AdvselError, KeyError, ValueError) as e:
        return row + ["error", None, None, None, None, f"{type(e).__name__}: {e}"]
    where = pred.location if pred.verdict == DIRAC else pred.anchor
    return row + [pred.verdict, pred.limit, where, pred.alpha, pred.provenance, pred.reason]


def run_sweep(config, params, jobs=1, ordered=True):
    """Rows in grid order, or in completion order when `ordered` is false."""
    names = [name for name, _ in params]
    points = [tuple(float(v) for v in combo) for combo in itertools.product(*(vals for _, vals in params))]
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            if ordered:
                rows = list(pool.map(sweep_point, itertools.repeat(config), itertools.repeat(names), points))
            else:
                futures = [pool.submit(sweep_point, config, names, p) for p in points]
                rows = [fut.result() for fut in as_completed(futures)]
    else:
        rows = [sweep_point(config, names, p) for p in points]
    return names, rows


def cmd_sweep(args):
    config = load_config(args.config, env=os.environ)
    ordered = NumericConfig.from_mapping(dict(config.numerics)).deterministic
    names, rows = run_sweep(config, args.param, args.jobs, ordered)
    path = write_csv(args.out, names + SWEEP_COLUMNS, rows)
    counts = {}
    for row in rows:
        counts[row[len(names)]] = counts.get(row[len(names)], 0) + 1
    summary = ", ".join(f"{k}: {v}" for k, v in sorted(counts.items())) or "empty range"
    print(f"[Sweep] {len(rows)} points ({summary}) -> {path}")
    return EXIT_OK


# ── suite ────────────────────────────────────────────────────────────────────

def cmd_suite(args):
    budget = RunBudget(max_run_seconds=args.run_seconds, max_suite_seconds=args.suite_seconds)
    runner = LabRunner(base_dir=args.base_dir, budget=budget, T=args.T, N=args.N, env=os.environ)
    try:
        results = runner.run_suite(args.suite, save_report_file=args.save_report)
    except KeyError:
        print(f"❌ Suite '{args.suite}' not found in {runner.problems_dir}/index.yaml")
        return EXIT_IO
    if all(r["status"] in ("PASS", "SKIP") for r in results):
        return EXIT_OK
    if all(r["status"] in ("PASS", "SKIP", "INCONCLUSIVE") for r in results):
        return EXIT_INCONCLUSIVE
    return EXIT_FAILED


# ── trajectory / carrying ────────────────────────────────────────────────────

def cmd_trajectory(args):
    _config, spec = _load(args)
    T = _horizon(args, spec)
    cache = build_flow_cache(spec, args.x0, T, args.direction)
    times = np.linspace(0.0, T, args.points)
    path = write_characteristic(args.out, times, cache.position(times), cache.log_jacobian(times))
    print(f"[Trajectory] {args.direction} from x0={args.x0:g}: x({T:g}) = {cache.position(T):.12g} -> {path}")
    return EXIT_OK


def cmd_carrying(args):
    _config, spec = _load(args)
    T = _horizon(args, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = output_grid(spec, T)
    for comp in build_compartments(spec):
        table = carrying_table(spec, comp, grid)
        path = write_carrying(out / f"carrying_{comp.index}.csv", table)
        try:
            lim = compartment_limit(spec, comp)
            predicted = f"predicted {lim.value:.9g} ({lim.case_tag}/{lim.branch})"
        except DegenerateLimit as e:
            predicted = f"degenerate ({e.reason})"
        print(f"[Carrying] {comp.label}: R({T:g}) = {table.R[-1]:.9g}, {predicted} -> {path}")
    return EXIT_OK


# ── parser ───────────────────────────────────────────────────────────────────

def build_parser():
    parser = argparse.ArgumentParser(
        prog="advsel",
        description="Advection-selection lab: simulate, classify and verify long-time regimes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="Check a problem config, or every config under a directory")
    p.add_argument("config")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("simulate", help="Integrate rho(t) and write density snapshots")
    p.add_argument("config")
    p.add_argument("--T", type=float, default=None, help="Horizon (default: numerics.t_horizon)")
    p.add_argument("--N", type=int, default=None, help="Particle count (default: numerics.particles)")
    p.add_argument("--route", choices=["particles", "compartments", "both"], default="particles")
    p.add_argument("--snap", type=float, action="append", help="Snapshot time; repeatable (default: T)")
    p.add_argument("--grid", type=int, default=401, help="Points per density snapshot")
    p.add_argument("--out", default="out", help="Output directory")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("classify", help="Predict the long-time regime")
    p.add_argument("config")
    p.add_argument("--json", action="store_true", help="Print the verdict document as JSON")
    p.add_argument("--out", default=None, help="Also write the verdict document here")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("limit", help="Write the limit profile of a Profile verdict")
    p.add_argument("config")
    p.add_argument("--grid", type=int, default=401)
    p.add_argument("--out", default="profile.csv")
    p.set_defaults(handler=cmd_limit)

    p = sub.add_parser("verify", help="Classify, simulate and score")
    p.add_argument("config")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--json", default=None, help="Write prediction and score to this file")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("sweep", help="Classify a template over a parameter grid")
    p.add_argument("config", help="Config with {name} placeholders in f, r or n0")
    p.add_argument("--param", type=parse_param, action="append", required=True,
                   help="NAME=START:STOP:COUNT; repeatable (grid is the product)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("suite", help="Verify every problem of a suite")
    p.add_argument("suite", nargs="?", default="core")
    p.add_argument("--base-dir", default=str(PROJECT_ROOT), help="Directory holding problems/")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--run-seconds", type=float, default=120)
    p.add_argument("--suite-seconds", type=float, default=1800)
    p.add_argument("--save-report", action="store_true", help="Save session report to reports/")
    p.set_defaults(handler=cmd_suite)

    p = sub.add_parser("trajectory", help="Write one characteristic")
    p.add_argument("config")
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--direction", choices=[FORWARD, BACKWARD], default=FORWARD)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out", default="trajectory.csv")
    p.set_defaults(handler=cmd_trajectory)

    p = sub.add_parser("carrying", help="Write S and R of every compartment")
    p.add_argument("config")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(handler=cmd_carrying)
    return parser


def configure_logging(verbose=False):
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("[%(module)s] %(message)s"))
    root = logging.getLogger("advsel")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)
    root.propagate = False


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ValidationFailed as e:
        print("❌ Validation failed:")
        for v in e.violations:
            where = f" at x={v.x:.6g}" if v.x is not None else ""
            print(f"   {v.kind}{where}: {v.message}")
        return EXIT_INVALID
    except NonApplicableFormula as e:
        print(f"❌ {e}")
        return EXIT_NO_PROFILE
    except BudgetExceeded as e:
        print(f"❌ {e}")
        return EXIT_FAILED
    except (AdvselError, OSError, yaml.YAMLError, ValueError) as e:
        code = exit_code_for(e)
        print(f"❌ {type(e).__name__}: {e}")
        return code


if __name__ == "__main__":
    if hasattr(sys.stdout, "reconfigure"):
        sys.stdout.reconfigure(encoding="utf-8", errors="replace")
    if hasattr(sys.stderr, "reconfigure"):
        sys.stderr.reconfigure(encoding="utf-8", errors="replace")
    sys.exit(main())
