"""Minimal closing delay over anchors and mode-1 delays, and delayed-stability probes.

The objective ``max(h1, h2*(p, h1))`` is the longest delay needed to close
a loop through the anchor ``p`` when leaving mode 1 is delayed by ``h1``.
Its infimum is the smallest delay bound that admits a closed orbit.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import NoFeasiblePoint, NumericalFailure
from .hybrid import BimodalAutomaton, DelayPolicy, build_orbit, simulate, spatial_hits
from .ode import IntegratorSettings, Point
from .poincare import PoincareCurve, h2_star

__all__ = [
    "MsdResult",
    "ProbeResult",
    "minimize_msd",
    "scan_h2",
    "scan_csv",
    "stability_probe",
    "worker_count",
]

GRID = (33, 9)
H1_MAX = 0.01
GOLDEN = (math.sqrt(5) - 1) / 2
# Relative decrease below which successive compressions count as equal.
CONTRACTION_MARGIN = 1e-9


def worker_count() -> int:
    """Parallel workers: CPU count capped by ``MSD_THREADS``."""
    n = os.cpu_count() or 1
    cap = os.environ.get("MSD_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def _h2_or_none(args) -> float | None:
    a, curve, p, h1, settings = args
    try:
        return h2_star(a, curve, curve.point(p), h1, settings)[0]
    except NumericalFailure:
        return None


def _evaluate(tasks: list, workers: int | None) -> list[float | None]:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(tasks) < 2:
        return [_h2_or_none(t) for t in tasks]
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_h2_or_none, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    except (OSError, RuntimeError):
        return [_h2_or_none(t) for t in tasks]


def scan_h2(
    a: BimodalAutomaton,
    curve: PoincareCurve,
    p_grid,
    h1: float,
    settings: IntegratorSettings,
    workers: int | None = None,
) -> list[tuple[float, float | None]]:
    """``(p, h2*)`` rows ordered by ``p``; anchors where the loop cannot close give ``None``."""
    ps = sorted(float(p) for p in p_grid)
    values = _evaluate([(a, curve, p, h1, settings) for p in ps], workers)
    return list(zip(ps, values))


def scan_csv(rows, h1: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "h1", "h2_star"])
    for p, h2 in rows:
        w.writerow([repr(p), repr(h1), "" if h2 is None else repr(h2)])
    return buf.getvalue()


@dataclass(frozen=True)
class MsdResult:
    sigma_hat: float
    x_star_param: float
    h1_star: float
    h2_star: float
    evaluations: int
    residual_at_opt: float
    anchor: Point
    method: str
    scan_table: tuple[tuple[float, float, float], ...] | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "sigma_hat": self.sigma_hat,
            "p_star": self.x_star_param,
            "h1_star": self.h1_star,
            "h2_star": self.h2_star,
            "residual": self.residual_at_opt,
            "evaluations": self.evaluations,
        }


class _Objective:
    """Counts and caches ``max(h1, h2*)`` evaluations."""

    def __init__(self, a, curve, settings):
        self.a, self.curve, self.settings = a, curve, settings
        self.cache: dict[tuple[float, float], float | None] = {}
        self.evaluations = 0

    def h2(self, p: float, h1: float) -> float | None:
        key = (p, h1)
        if key not in self.cache:
            self.evaluations += 1
            self.cache[key] = _h2_or_none((self.a, self.curve, p, h1, self.settings))
        return self.cache[key]

    def __call__(self, p: float, h1: float) -> float:
        h2 = self.h2(p, h1)
        return math.inf if h2 is None else max(h1, h2)

    def preload(self, keys, values) -> None:
        for k, v in zip(keys, values):
            self.evaluations += 1
            self.cache[k] = v


def _golden(fun, lo: float, hi: float, xtol: float, max_iter: int = 200) -> tuple[float, float]:
    """Bounded golden-section minimisation of a unimodal function."""
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if hi - lo <= xtol:
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = fun(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def _grid_bracket(ps: list[float], values: list[float]) -> tuple[float, float]:
    i = int(np.argmin(values))
    return ps[max(i - 1, 0)], ps[min(i + 1, len(ps) - 1)]


def minimize_msd(
    a: BimodalAutomaton,
    curve: PoincareCurve,
    p_bounds: tuple[float, float],
    h1_bounds: tuple[float, float],
    accuracy: float,
    settings: IntegratorSettings,
    grid: tuple[int, int] = GRID,
    workers: int | None = None,
    xtol: float = 1e-9,
) -> MsdResult:
    """Minimise ``max(h1, h2*(p, h1))`` over the given box.

    A coarse grid locates the basin.  With a degenerate ``h1`` interval the
    refinement is a golden-section search in ``p``; otherwise Nelder-Mead
    runs in box-normalised coordinates and is followed by a golden-section
    polish in ``p`` at the optimal ``h1``.
    """
    if not (accuracy > 0 and math.isfinite(accuracy)):
        raise ValueError("accuracy must be a positive number")
    p_lo, p_hi = map(float, p_bounds)
    h_lo, h_hi = map(float, h1_bounds)
    if not (p_lo < p_hi) or not (0 <= h_lo <= h_hi):
        raise ValueError("invalid search bounds")
    n_p, n_h = grid
    obj = _Objective(a, curve, settings)
    ps = [float(p) for p in np.linspace(p_lo, p_hi, n_p)]
    hs = [h_lo] if h_lo == h_hi else [float(h) for h in np.linspace(h_lo, h_hi, n_h)]
    keys = [(float(p), float(h)) for h in hs for p in ps]
    obj.preload(keys, _evaluate([(a, curve, p, h, settings) for p, h in keys], workers))
    table = tuple((p, h, obj(p, h)) for p, h in keys)
    finite = [row for row in table if math.isfinite(row[2])]
    if not finite:
        raise NoFeasiblePoint("no grid point admits a closed delayed loop")
    best_p, best_h, _ = min(finite, key=lambda r: r[2])

    if h_lo == h_hi:
        lo, hi = _grid_bracket(ps, [obj(p, h_lo) for p in ps])
        p_opt, _ = _golden(lambda p: obj(p, h_lo), lo, hi, xtol)
        h_opt = h_lo
        method = "grid+golden"
    else:
        dp, dh = p_hi - p_lo, h_hi - h_lo

        def f(u):
            return obj(p_lo + u[0] * dp, h_lo + u[1] * dh)

        u0 = np.array([(best_p - p_lo) / dp, (best_h - h_lo) / dh])
        cell = np.array([1.0 / (n_p - 1), 1.0 / (n_h - 1)])
        simplex = [u0, u0 + [cell[0], 0.0], u0 + [0.0, cell[1]]]
        simplex = np.clip(np.array(simplex), 0.0, 1.0)
        if np.allclose(simplex[1], simplex[0]):
            simplex[1] = u0 - [cell[0], 0.0]
        if np.allclose(simplex[2], simplex[0]):
            simplex[2] = u0 - [0.0, cell[1]]
        res = minimize(
            f,
            u0,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0), (0.0, 1.0)],
            options={"initial_simplex": simplex, "fatol": accuracy, "xatol": xtol / dp, "maxfev": 2000},
        )
        p_nm, h_nm = p_lo + float(res.x[0]) * dp, h_lo + float(res.x[1]) * dh
        width = dp / (n_p - 1)
        p_opt, _ = _golden(lambda p: obj(p, h_nm), max(p_lo, p_nm - width), min(p_hi, p_nm + width), xtol)
        if obj(p_opt, h_nm) > obj(p_nm, h_nm):
            p_opt = p_nm
        h_opt = h_nm
        method = "grid+nelder-mead"

    h2_opt = obj.h2(p_opt, h_opt)
    if h2_opt is None:
        raise NoFeasiblePoint("optimiser ended on an infeasible point")
    anchor = curve.point(p_opt)
    residual = build_orbit(a, curve.section, anchor, h_opt, h2_opt, settings).residual
    return MsdResult(
        sigma_hat=float(max(h_opt, h2_opt)),
        x_star_param=float(p_opt),
        h1_star=float(h_opt),
        h2_star=float(h2_opt),
        evaluations=obj.evaluations,
        residual_at_opt=residual,
        anchor=anchor,
        method=method,
        scan_table=table,
    )


@dataclass(frozen=True)
class ProbeResult:
    contracting: bool
    distances: tuple[float, ...]
    crossings: tuple[Point, ...]

    @property
    def verdict(self) -> str:
        return "contracting" if self.contracting else "non-contracting"


def section_distances(traj, curve: PoincareCurve, settings: IntegratorSettings, n: int | None = None):
    """Mode-1 upward crossings of the section, with their distances to the equilibrium."""
    hits = [
        h
        for h in spatial_hits(traj, curve.section, traj.t_min, settings, direction=1)
        if h.mode == 1 and curve.contains_param(curve.param(h.x))
    ]
    if n is not None:
        hits = hits[:n]
    return [h.x for h in hits], [curve.distance(h.x) for h in hits]


def is_contracting(distances) -> bool:
    """Strict decrease across the last three values."""
    if len(distances) < 3:
        return False
    d = distances[-3:]
    return all(d1 < d0 * (1 - CONTRACTION_MARGIN) for d0, d1 in zip(d, d[1:]))


def stability_probe(
    a: BimodalAutomaton,
    curve: PoincareCurve,
    H: float,
    x0,
    n_bounces: int,
    settings: IntegratorSettings,
    h1: float = 0.0,
) -> ProbeResult:
    """Simulate with every free-flight exit delayed by ``H`` and judge the compressions.

    ``h1`` optionally delays contact exits as well.  The verdict looks at
    the first ``n_bounces`` section crossings.
    """
    if H < 0 or h1 < 0:
        raise ValueError("delays must be non-negative")
    if n_bounces < 3:
        raise ValueError("at least three crossings are needed for a verdict")
    q0 = 1 if a.guard(x0) < 0 else 2
    policy = DelayPolicy.fixed(H, h1)
    traj = simulate(a, q0, x0, settings.horizon, policy, settings, stop_after=2 * n_bounces + 2)
    points, dists = section_distances(traj, curve, settings, n_bounces)
    return ProbeResult(is_contracting(dists), tuple(dists), tuple(points))
