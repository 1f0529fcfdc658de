"""Poincare sections, the delayed return map and the closing delay h2*.

A section ``S_p`` is a curve ``{s = 0}`` crossed transversally by the
mode-1 flow, disjoint from the switching surface and accumulating at the
equilibrium.  For an anchor ``x`` on ``S_p`` and a mode-1 exit delay ``h1``,
``h2_star`` finds the smallest mode-2 delay that makes the delayed loop
return exactly to ``x``.  The loop closes precisely when the delayed
free-flight path meets the mode-1 trajectory that leads from the switching
surface into ``x``, so the search is a curve-intersection problem.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CurveInvalid,
    GuardNotReached,
    NoIntersection,
    NumericalFailure,
    PreconditionViolated,
)
from .hybrid import BimodalAutomaton, DelayedMapResult, delay_leg, delayed_chain, guard_exit
from .ode import (
    DenseSegment,
    IntegratorSettings,
    Point,
    Surface,
    flow,
    integrate_until,
    linear_surface,
)

__all__ = [
    "AssumptionCheck",
    "AssumptionReport",
    "DelayedMapResult",
    "PoincareCurve",
    "ReferenceSegment",
    "check_assumptions",
    "default_curve",
    "delayed_map",
    "guard_inflow_samples",
    "h2_star",
    "hpcmap",
    "line_curve",
    "reference_segment",
    "sp_tilde_contains",
    "t2_estimate",
]

H2_TOL = 1e-12
COARSE_DIVISIONS = 200
REFINE_FACTOR = 10
# The flight leg may wander this far (relative to the reference segment's
# bounding box) before the search gives up.
BOX_MARGIN = 0.5
MAX_DURATION_RATIO = 10.0
D_DELAY_CAP = 0.01


class _LineParam:
    """``p -> origin + p * direction`` and its inverse (orthogonal projection)."""

    def __init__(self, origin: Point, direction: Point) -> None:
        self.origin = (float(origin[0]), float(origin[1]))
        self.direction = (float(direction[0]), float(direction[1]))
        self.n2 = self.direction[0] ** 2 + self.direction[1] ** 2
        if self.n2 == 0:
            raise ValueError("direction must be non-zero")

    def point(self, p: float) -> Point:
        return (self.origin[0] + p * self.direction[0], self.origin[1] + p * self.direction[1])

    def param(self, x: Sequence[float]) -> float:
        d0, d1 = x[0] - self.origin[0], x[1] - self.origin[1]
        return (d0 * self.direction[0] + d1 * self.direction[1]) / self.n2


@dataclass(frozen=True)
class PoincareCurve:
    """Section ``{s = 0}`` with a scalar coordinate ``p`` on it.

    ``p_star`` is the coordinate of the equilibrium (the closure point of
    the section); ``distance`` measures how far a section point is from it.
    """

    section: Surface
    line: _LineParam
    param_range: tuple[float, float]
    p_star: float
    description: str = ""

    def point(self, p: float) -> Point:
        return self.line.point(p)

    def param(self, x: Sequence[float]) -> float:
        return self.line.param(x)

    def distance(self, x: Sequence[float] | float) -> float:
        p = x if isinstance(x, (int, float)) else self.param(x)
        return abs(p - self.p_star)

    def contains_param(self, p: float) -> bool:
        lo, hi = self.param_range
        return lo <= p <= hi

    def samples(self, n: int, lo: float | None = None, hi: float | None = None) -> list[float]:
        """``n`` cell-centred coordinates strictly inside ``[lo, hi]``."""
        lo = self.param_range[0] if lo is None else lo
        hi = self.param_range[1] if hi is None else hi
        return [lo + (i + 0.5) * (hi - lo) / n for i in range(n)]

    def transversality(self, a: BimodalAutomaton, p: float) -> float:
        return self.section.lie(a.f1, self.point(p))

    def validate(self, a: BimodalAutomaton, settings: IntegratorSettings, n: int = 100) -> None:
        """Raise :class:`CurveInvalid` unless sampled points are transversal and off the guard."""
        for p in self.samples(n):
            x = self.point(p)
            if abs(a.guard(x)) <= settings.event_value_tol:
                raise CurveInvalid(f"section meets the switching surface at p={p!r}")
            if not self.transversality(a, p) > 0:
                raise CurveInvalid(f"mode-1 flow is not transversal to the section at p={p!r}")


def line_curve(
    section: tuple[float, float, float],
    origin: Point,
    direction: Point,
    param_range: tuple[float, float],
    p_star: float,
    description: str = "",
) -> PoincareCurve:
    """Straight section ``a1*x1 + a2*x2 + b = 0`` parameterised along ``direction``."""
    s = linear_surface(*section)
    return PoincareCurve(s, _LineParam(origin, direction), tuple(param_range), float(p_star), description or s.description)


def default_curve(a: BimodalAutomaton, settings: IntegratorSettings | None = None) -> PoincareCurve:
    """Zero-velocity section ``x2 = 0`` below the equilibrium, parameterised by ``x1``.

    There the mode-1 acceleration is positive, so the flow crosses it
    upward at each point of maximum compression.
    """
    settings = settings or IntegratorSettings()
    x_eq = a.equilibrium
    lo = a.domain_box[0][0]
    curve = PoincareCurve(
        linear_surface(0.0, 1.0, 0.0, "x2"),
        _LineParam((0.0, x_eq[1]), (1.0, 0.0)),
        (lo, x_eq[0]),
        x_eq[0],
        "x2 = 0, x1 < equilibrium",
    )
    curve.validate(a, settings)
    return curve


def sp_tilde_contains(a: BimodalAutomaton, curve: PoincareCurve, x: Sequence[float], settings: IntegratorSettings) -> bool:
    """True if the mode-1 flow from ``x`` leaves ``Dom(1)`` transversally."""
    if abs(curve.section(x)) > settings.event_value_tol:
        raise PreconditionViolated(f"{tuple(x)} is not on the section")
    try:
        hit = guard_exit(a, curve.section, x, settings)
    except NumericalFailure:
        return False
    return a.guard.lie(a.f1, hit.x) > settings.event_value_tol


@dataclass(frozen=True)
class ReferenceSegment:
    """Mode-1 trajectory from ``y`` on the guard to the anchor ``x``, timed from 0 at ``y``."""

    segments: tuple[DenseSegment, ...]
    y: Point
    x: Point
    field_fn: Callable[[float, float], Point]
    _t0s: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _poly: np.ndarray = field(init=False, repr=False, compare=False)
    _times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_t0s", tuple(s.t0 for s in self.segments))
        pts = [self.y]
        times = [0.0]
        for seg in self.segments:
            for k in range(1, 9):
                t = seg.t0 + (seg.t1 - seg.t0) * k / 8
                pts.append(seg.x_end if k == 8 else seg(t))
                times.append(t)
        object.__setattr__(self, "_poly", np.array(pts))
        object.__setattr__(self, "_times", np.array(times))

    @property
    def duration(self) -> float:
        return self.segments[-1].t1

    @property
    def polyline(self) -> np.ndarray:
        """Vertices ``(n, 2)`` sampled along the segment."""
        return self._poly

    @property
    def polyline_times(self) -> np.ndarray:
        return self._times

    def __call__(self, sigma: float) -> Point:
        i = bisect.bisect_right(self._t0s, sigma) - 1
        seg = self.segments[min(max(i, 0), len(self.segments) - 1)]
        return seg(sigma)

    def bbox(self, margin: float = 0.0) -> tuple[float, float, float, float]:
        lo = self._poly.min(axis=0)
        hi = self._poly.max(axis=0)
        pad = margin * (hi - lo)
        return lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1]

    def project(self, z: Point) -> float:
        """Time of the point of the segment nearest to ``z``."""
        d = self._poly - np.asarray(z)
        k = int(np.argmin(np.einsum("ij,ij->i", d, d)))
        sigma = float(self._times[k])
        tau = self.duration
        for _ in range(20):
            p = self(sigma)
            v = self.field_fn(p[0], p[1])
            vv = v[0] * v[0] + v[1] * v[1]
            if vv == 0:
                break
            step = (v[0] * (z[0] - p[0]) + v[1] * (z[1] - p[1])) / vv
            new = min(max(sigma + step, 0.0), tau)
            if abs(new - sigma) <= 1e-16 * max(1.0, tau):
                sigma = new
                break
            sigma = new
        return sigma

    def side(self, z: Point) -> float:
        """Signed offset of ``z`` from the segment (cross product with the local tangent)."""
        sigma = self.project(z)
        p = self(sigma)
        v = self.field_fn(p[0], p[1])
        return v[0] * (z[1] - p[1]) - v[1] * (z[0] - p[0])


def reference_segment(
    a: BimodalAutomaton, curve: PoincareCurve, x: Sequence[float], settings: IntegratorSettings
) -> ReferenceSegment:
    """Integrate mode 1 backward from ``x`` to the guard and return the forward path."""
    x0 = (float(x[0]), float(x[1]))
    back = a.f1.negated()
    events = [(a.guard, 1), (curve.section, -1)]
    segs, hit = integrate_until(back, x0, settings.horizon, events, settings)
    if hit is None:
        raise GuardNotReached(f"backward mode-1 flow from {x0} did not reach the guard")
    if hit.index != 0:
        raise GuardNotReached(f"backward mode-1 flow from {x0} returned to the section first")
    tau = hit.t
    fwd = tuple(s.reversed(tau) for s in reversed(segs))
    return ReferenceSegment(fwd, hit.x, x0, a.f1.func)


def _first_chord_crossing(chords: np.ndarray, poly: np.ndarray, skip_start: bool) -> int | None:
    """Index of the first chord ``z_k -> z_{k+1}`` that meets the polyline, or None."""
    p = chords[:-1, None, :]
    r = (chords[1:] - chords[:-1])[:, None, :]
    q = poly[None, :-1, :]
    s = (poly[1:] - poly[:-1])[None, :, :]
    rxs = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / rxs
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / rxs
    ok = (rxs != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    if skip_start:
        ok[0] &= t[0] > 0
    rows = np.flatnonzero(ok.any(axis=1))
    return int(rows[0]) if rows.size else None


def _flight_intersection(
    a: BimodalAutomaton,
    ref: ReferenceSegment,
    x3: Point,
    settings: IntegratorSettings,
    h2_tol: float,
    divisions: int,
    factor: int,
) -> float:
    tau = ref.duration
    dt = tau / divisions
    x_lo, x_hi, y_lo, y_hi = ref.bbox(BOX_MARGIN)
    t_cap = MAX_DURATION_RATIO * tau
    poly = ref.polyline
    f2 = a.f2
    # Coarse pass: chords of the flight path at spacing dt, in batches.
    batch = 25
    k0 = 0
    z = x3
    bracket = None
    while bracket is None:
        pts = [z]
        for _ in range(batch):
            z = flow(f2, z, dt, settings)
            pts.append(z)
        chords = np.array(pts)
        hit = _first_chord_crossing(chords, poly, skip_start=(k0 == 0))
        if hit is not None:
            bracket = ((k0 + hit) * dt, (k0 + hit + 1) * dt, pts[hit])
            break
        k0 += batch
        if k0 * dt > t_cap:
            raise NoIntersection(f"flight path did not meet the reference segment within {t_cap:.3g} s")
        if not (x_lo <= z[0] <= x_hi and y_lo <= z[1] <= y_hi):
            raise NoIntersection("flight path left the neighbourhood of the reference segment")
    ta, tb, za = bracket
    # Widen by one coarse step each side so that a crossing near a chord end is not lost.
    if ta > 0:
        ta -= dt
        za = flow(f2, x3, ta, settings)
        n_sub = 3 * factor
    else:
        n_sub = 2 * factor
    tb = ta + n_sub * dt / factor
    side_a = ref.side(za)
    if side_a == 0:
        return ta
    step = dt / factor
    while True:
        found = False
        z_prev = za
        for i in range(1, n_sub + 1):
            zi = flow(f2, za, i * step, settings)
            si = ref.side(zi)
            if si == 0 or (si > 0) != (side_a > 0):
                ta = ta + (i - 1) * step
                za = z_prev
                tb = ta + step
                found = True
                break
            z_prev = zi
        if not found:
            raise NoIntersection("side function shows no sign change inside the coarse bracket")
        if tb - ta <= h2_tol or step <= h2_tol:
            return 0.5 * (ta + tb)
        n_sub = factor
        step = (tb - ta) / factor


def h2_star(
    a: BimodalAutomaton,
    curve: PoincareCurve,
    x: Sequence[float],
    h1: float,
    settings: IntegratorSettings,
    h2_tol: float = H2_TOL,
    divisions: int = COARSE_DIVISIONS,
    factor: int = REFINE_FACTOR,
) -> tuple[float, DelayedMapResult]:
    """Smallest mode-2 delay closing the delayed loop at ``x`` for mode-1 delay ``h1``."""
    if not h2_tol > 0:
        raise ValueError("h2_tol must be positive")
    if h1 < 0:
        raise PreconditionViolated("h1 must be non-negative")
    x0 = (float(x[0]), float(x[1]))
    hit1 = guard_exit(a, curve.section, x0, settings)
    x2, _ = delay_leg(a.f1, hit1.x, h1, (a.guard, -1), settings, "h1 exceeds the mode-1 return time to the guard")
    _, hit3 = integrate_until(a.f2, x2, settings.horizon, [(a.guard, -1)], settings)
    if hit3 is None:
        raise GuardNotReached("mode-2 flow did not return to the guard")
    ref = reference_segment(a, curve, x0, settings)
    h2 = _flight_intersection(a, ref, hit3.x, settings, h2_tol, divisions, factor)
    return h2, delayed_chain(a, curve.section, x0, h1, h2, settings)


def delayed_map(
    a: BimodalAutomaton, curve: PoincareCurve, x: Sequence[float], h1: float, h2: float, settings: IntegratorSettings
) -> DelayedMapResult:
    """Full chain of the delayed return map."""
    return delayed_chain(a, curve.section, x, h1, h2, settings)


def hpcmap(
    a: BimodalAutomaton, curve: PoincareCurve, x: Sequence[float], h1: float, h2: float, settings: IntegratorSettings
) -> Point:
    """Image of ``x`` under the delayed return map."""
    return delayed_chain(a, curve.section, x, h1, h2, settings).x5


def _box_events(box) -> list:
    (x_lo, x_hi), (v_lo, v_hi) = box
    return [
        (linear_surface(1.0, 0.0, -x_lo), -1),
        (linear_surface(1.0, 0.0, -x_hi), 1),
        (linear_surface(0.0, 1.0, -v_lo), -1),
        (linear_surface(0.0, 1.0, -v_hi), 1),
    ]


def guard_inflow_samples(a: BimodalAutomaton, n: int) -> list[Point]:
    """Up to ``n`` points of the guard, inside the domain box, where mode 2 flows into ``Dom(1)``."""
    (x_lo, x_hi), (v_lo, v_hi) = a.domain_box
    seeds = []
    m = max(4 * n, 16)
    for i in range(m):
        u = (i + 0.5) / m
        seeds.append((x_lo + u * (x_hi - x_lo), v_lo + u * (v_hi - v_lo)))
        seeds.append((x_lo + u * (x_hi - x_lo), v_hi - u * (v_hi - v_lo)))
    found = []
    for z in seeds:
        for _ in range(50):
            gv = a.guard(z)
            gr = a.guard.gradient(z)
            nn = gr[0] ** 2 + gr[1] ** 2
            if nn == 0:
                break
            z = (z[0] - gv * gr[0] / nn, z[1] - gv * gr[1] / nn)
            if abs(gv) < 1e-15:
                break
        if not (x_lo <= z[0] <= x_hi and v_lo <= z[1] <= v_hi):
            continue
        if abs(a.guard(z)) > 1e-12 or not a.guard.lie(a.f2, z) < 0:
            continue
        if any(abs(z[0] - w[0]) + abs(z[1] - w[1]) < 1e-12 for w in found):
            continue
        found.append(z)
    found.sort()
    if len(found) > n:
        idx = [round(i * (len(found) - 1) / max(n - 1, 1)) for i in range(n)] if n > 1 else [len(found) // 2]
        found = [found[i] for i in idx]
    return found


def _return_to_section(a, curve, z, settings) -> float:
    """Mode-2 flow time from ``z`` to a point of the section, or infinity."""
    events = [(curve.section, 0)] + _box_events(a.domain_box)
    t0 = 0.0
    while t0 < settings.horizon:
        segs, hit = integrate_until(a.f2, z, settings.horizon - t0, events, settings, t_start=t0)
        if hit is None or hit.index != 0:
            return math.inf
        if curve.contains_param(curve.param(hit.x)):
            return hit.t
        z, t0 = hit.x, hit.t
    return math.inf


def t2_estimate(a: BimodalAutomaton, curve: PoincareCurve, n_samples: int, settings: IntegratorSettings) -> float:
    """Least mode-2 travel time from the inflow part of the guard to the section."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    best = math.inf
    for z in guard_inflow_samples(a, n_samples):
        best = min(best, _return_to_section(a, curve, z, settings))
    return best


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    checked: int
    witnesses: tuple = ()
    detail: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "checked": c.checked,
                    "witnesses": [list(map(_jsonable, w)) for w in c.witnesses],
                    "detail": c.detail,
                }
                for c in self.checks
            ],
        }


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _check_section(a, curve, n, settings) -> AssumptionCheck:
    """Disjointness from the guard, transversality, and monotone distance to the equilibrium."""
    witnesses = []
    ps = curve.samples(n)
    dists = []
    for p in ps:
        x = curve.point(p)
        if abs(a.guard(x)) <= settings.event_value_tol:
            witnesses.append(("meets guard", p))
        if not curve.transversality(a, p) > 0:
            witnesses.append(("not transversal", p))
        dists.append(math.hypot(x[0] - a.equilibrium[0], x[1] - a.equilibrium[1]))
    trend = 1 if len(dists) > 1 and dists[-1] > dists[0] else -1
    for p, d0, d1 in zip(ps[1:], dists, dists[1:]):
        if not (d1 - d0) * trend > 0:
            witnesses.append(("distance not monotone", p))
    return AssumptionCheck(
        "A1 section", not witnesses, len(ps), tuple(witnesses),
        "section disjoint from guard, transversal, distance to equilibrium strictly monotone",
    )


def _check_swept_region(a, curve, n, settings) -> AssumptionCheck:
    """Points reached by delayed free flight must fall back onto the section before exiting."""
    t2 = t2_estimate(a, curve, min(n, 50), settings)
    cap = min(t2, D_DELAY_CAP)
    inflow = guard_inflow_samples(a, n)
    witnesses = []
    golden = (math.sqrt(5) - 1) / 2
    checked = 0
    events = [(curve.section, 1), (a.guard, 1)]
    for i in range(n):
        if not inflow:
            break
        base = inflow[i % len(inflow)]
        h = cap * ((i * golden) % 1.0)
        try:
            z = flow(a.f2, base, h, settings)
            _, hit = integrate_until(a.f1, z, settings.horizon, events, settings)
        except NumericalFailure as exc:
            witnesses.append((base, h, type(exc).__name__))
            continue
        checked += 1
        if hit is None or hit.index != 0 or not curve.contains_param(curve.param(hit.x)):
            witnesses.append((base, h, "guard before section" if hit is not None else "no return"))
    detail = f"T2={t2!r}; mode-1 return to the section precedes guard exit on sampled swept points"
    return AssumptionCheck("A2 swept region", not witnesses and checked > 0, checked, tuple(witnesses), detail)


def _check_transversal_switching(a, curve, n, settings) -> tuple[AssumptionCheck, AssumptionCheck]:
    w3, w4 = [], []
    c3 = c4 = 0
    vt = settings.event_value_tol
    for p in curve.samples(n):
        x = curve.point(p)
        try:
            hit = guard_exit(a, curve.section, x, settings)
        except GuardNotReached:
            continue
        except NumericalFailure as exc:
            w3.append((p, type(exc).__name__))
            continue
        c3 += 1
        lie1 = a.guard.lie(a.f1, hit.x)
        if not abs(lie1) > vt:
            w3.append((p, lie1))
            continue
        try:
            _, back = integrate_until(a.f2, hit.x, settings.horizon, [(a.guard, -1)], settings)
        except NumericalFailure as exc:
            w4.append((p, type(exc).__name__))
            continue
        if back is None:
            continue
        c4 += 1
        lie2 = a.guard.lie(a.f2, back.x)
        if not abs(lie2) > vt:
            w4.append((p, lie2))
    a3 = AssumptionCheck("A3 mode-1 exit transversal", not w3 and c3 > 0, c3, tuple(w3), "|dg/dt| under f1 at guard exits")
    a4 = AssumptionCheck("A4 mode-2 entry transversal", not w4 and c4 > 0, c4, tuple(w4), "|dg/dt| under f2 at guard entries")
    return a3, a4


def check_assumptions(
    a: BimodalAutomaton, curve: PoincareCurve, n_samples: int, settings: IntegratorSettings
) -> AssumptionReport:
    """Sampled numerical evidence for the four standing assumptions."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    a1 = _check_section(a, curve, n_samples, settings)
    a2 = _check_swept_region(a, curve, n_samples, settings)
    a3, a4 = _check_transversal_switching(a, curve, n_samples, settings)
    return AssumptionReport((a1, a2, a3, a4))
