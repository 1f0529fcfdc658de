"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 infeasible search, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, NoFeasiblePoint, NumericalFailure
from .hybrid import DelayPolicy, build_orbit, simulate
from .models import ModelConfig, load_model
from .ode import IntegratorSettings
from .poincare import check_assumptions, default_curve
from .search import H1_MAX, is_contracting, minimize_msd, scan_csv, scan_h2, section_distances

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 2, 3, 4, 5

_GLOBAL_DEFAULTS = {
    "model": None,
    "out": None,
    "format": "csv",
    "rel_tol": None,
    "abs_tol": None,
    "event_tol": None,
    "horizon": None,
}


def format_sig(x: float, digits: int = 10) -> str:
    """Positional decimal with a fixed number of significant digits."""
    return np.format_float_positional(x, precision=digits, unique=False, fractional=False, trim="k")


def _point(text: str) -> tuple[float, float]:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    if len(parts) != 2 or not all(math.isfinite(v) for v in parts):
        raise argparse.ArgumentTypeError(f"expected two comma-separated finite numbers, got {text!r}")
    return parts[0], parts[1]


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text!r}")
    return v


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"must be a non-negative number, got {text!r}")
    return v


def _common_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("global options")
    g.add_argument("--model", default=argparse.SUPPRESS, help="built-in model name or JSON config path")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output file (default: standard output)")
    g.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS)
    g.add_argument("--rel-tol", type=_positive, default=argparse.SUPPRESS)
    g.add_argument("--abs-tol", type=_positive, default=argparse.SUPPRESS)
    g.add_argument("--event-tol", type=_positive, default=argparse.SUPPRESS, help="event time tolerance (s)")
    g.add_argument("--horizon", type=_positive, default=argparse.SUPPRESS, help="search horizon (s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msdelay", description="Maximum stable delay of bi-modal hybrid automata.")
    _common_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate exact or delayed switching")
    _common_flags(p)
    p.add_argument("--mode", type=int, choices=(1, 2), help="initial mode (default: from the guard sign)")
    p.add_argument("--x0", type=_point, default=(1.0, 0.0), help="initial state x1,x2")
    p.add_argument("--T", type=_positive, default=3.0, help="simulated time (s)")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--exact", action="store_true", help="switch at the guard crossing (default)")
    kind.add_argument("--delay", type=_nonneg, help="delay of free-flight exits (s)")
    kind.add_argument("--schedule", help="JSON file with a list of per-transition delays")
    p.add_argument("--delay-h1", type=_nonneg, default=0.0, help="delay of contact exits, with --delay (s)")
    p.add_argument("--sample-dt", type=_positive, default=1e-3, help="CSV sampling interval (s)")
    p.add_argument("--bounces", type=int, default=3, help="section crossings used for the verdict")

    p = sub.add_parser("scan", help="tabulate h2* over anchors")
    _common_flags(p)
    p.add_argument("--h1", type=_nonneg, default=0.0)
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)
    p.add_argument("--n", type=int, default=33)

    p = sub.add_parser("msd", help="minimise the closing delay")
    _common_flags(p)
    p.add_argument("--accuracy", type=float, default=1e-8)
    p.add_argument("--h1-max", type=_nonneg, default=H1_MAX)
    p.add_argument("--fix-h1", type=_nonneg)
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)

    p = sub.add_parser("verify", help="residual of a candidate closed orbit")
    _common_flags(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--h1", type=_nonneg, default=0.0)
    p.add_argument("--h2", type=_nonneg, required=True)
    p.add_argument("--tol", type=_positive, default=1e-6)

    p = sub.add_parser("check-assumptions", help="sampled check of the standing assumptions")
    _common_flags(p)
    p.add_argument("--n", type=int, default=200)
    return parser


def _settings(args, cfg: ModelConfig) -> IntegratorSettings:
    changes = {"horizon": args.horizon if args.horizon is not None else cfg.horizon()}
    if args.rel_tol is not None:
        changes["rel_tol"] = args.rel_tol
    if args.abs_tol is not None:
        changes["abs_tol"] = args.abs_tol
    if args.event_tol is not None:
        changes["event_time_tol"] = args.event_tol
    try:
        return IntegratorSettings(**changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _window(args, cfg: ModelConfig) -> tuple[float, float]:
    lo, hi = cfg.search_window()
    lo = lo if args.p_min is None else args.p_min
    hi = hi if args.p_max is None else args.p_max
    if not lo < hi:
        raise ConfigError(f"empty anchor interval [{lo}, {hi}]")
    return lo, hi


def cmd_simulate(args, cfg, settings) -> int:
    a = cfg.automaton()
    if args.bounces < 3:
        raise ConfigError("--bounces must be at least 3")
    if args.schedule:
        try:
            delays = json.loads(Path(args.schedule).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read schedule {args.schedule}: {exc}") from exc
        if not isinstance(delays, list):
            raise ConfigError("schedule must be a JSON list of delays")
        try:
            policy = DelayPolicy.schedule(delays)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from exc
    elif args.delay is not None:
        policy = DelayPolicy.fixed(args.delay, args.delay_h1)
    else:
        policy = DelayPolicy.exact()
    mode = args.mode or (1 if a.guard(args.x0) < 0 else 2)
    traj = simulate(a, mode, args.x0, args.T, policy, settings)
    curve = default_curve(a, settings)
    _, dists = section_distances(traj, curve, settings, args.bounces)
    summary = {
        "compressions": dists,
        "verdict": "contracting" if is_contracting(dists) else "non-contracting",
        "transitions": len(traj.transitions),
        "final_state": list(traj.final_state),
    }
    if args.format == "json":
        body = {"samples": traj.sample(args.sample_dt), "transitions": [t.as_dict() for t in traj.transitions]}
        _emit(args, json.dumps(body) + "\n")
    else:
        _emit(args, traj.to_csv(args.sample_dt))
    if args.out:
        log = Path(args.out).with_suffix(".transitions.json")
        log.write_text(traj.transitions_json() + "\n")
        print(json.dumps(summary))
    else:
        print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def cmd_scan(args, cfg, settings) -> int:
    if args.n < 1:
        raise ConfigError("--n must be at least 1 (empty grid)")
    a = cfg.automaton()
    curve = default_curve(a, settings)
    lo, hi = _window(args, cfg)
    grid = [float(p) for p in np.linspace(lo, hi, args.n)] if args.n > 1 else [0.5 * (lo + hi)]
    rows = scan_h2(a, curve, grid, args.h1, settings)
    if args.format == "json":
        _emit(args, json.dumps([{"p": p, "h1": args.h1, "h2_star": h} for p, h in rows]) + "\n")
    else:
        _emit(args, scan_csv(rows, args.h1))
    return EXIT_OK


def cmd_msd(args, cfg, settings) -> int:
    if not (math.isfinite(args.accuracy) and args.accuracy > 0):
        raise ConfigError(f"--accuracy must be positive, got {args.accuracy}")
    a = cfg.automaton()
    curve = default_curve(a, settings)
    window = _window(args, cfg)
    h1_bounds = (args.fix_h1, args.fix_h1) if args.fix_h1 is not None else (0.0, args.h1_max)
    res = minimize_msd(a, curve, window, h1_bounds, args.accuracy, settings)
    if args.out:
        Path(args.out).write_text(json.dumps(res.as_dict(), indent=2) + "\n")
    print(format_sig(res.sigma_hat))
    return EXIT_OK


def cmd_verify(args, cfg, settings) -> int:
    a = cfg.automaton()
    curve = default_curve(a, settings)
    if not curve.contains_param(args.p):
        raise ConfigError(f"--p {args.p} is outside the section range {curve.param_range}")
    cand = build_orbit(a, curve.section, curve.point(args.p), args.h1, args.h2, settings)
    print(f"residual {cand.residual:.6e}")
    return EXIT_OK if cand.residual < args.tol else EXIT_VERIFY


def cmd_check(args, cfg, settings) -> int:
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    a = cfg.automaton()
    curve = default_curve(a, settings)
    report = check_assumptions(a, curve, args.n, settings)
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.name}: {c.checked} checked, {len(c.witnesses)} witnesses")
    if args.out:
        Path(args.out).write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return EXIT_OK if report.all_passed else EXIT_VERIFY


COMMANDS = {
    "simulate": cmd_simulate,
    "scan": cmd_scan,
    "msd": cmd_msd,
    "verify": cmd_verify,
    "check-assumptions": cmd_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        cfg = load_model(args.model)
        settings = _settings(args, cfg)
        return COMMANDS[args.command](args, cfg, settings)
    except ConfigError as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoFeasiblePoint as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalFailure as exc:
        print(f"error: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
