"""Bi-modal hybrid automata: exact and transition-delayed simulation.

Mode 1 owns ``Dom(1) = {g <= 0}`` and mode 2 owns ``{g >= 0}``.  Resets are
the identity.  A transition is triggered when the flow leaves the domain of
its mode through the guard surface ``G = {g = 0}``; under a delay policy the
pre-transition field keeps driving the state for the delay before the mode
actually switches.  A pending transition is never cancelled, even if the
delayed state re-crosses ``G``.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import (
    GuardNotReached,
    MismatchError,
    PreconditionViolated,
    RangeError,
    SectionNotReached,
    ZenoSuspected,
)
from .ode import (
    DenseSegment,
    IntegratorSettings,
    Point,
    Surface,
    VectorField,
    bisect_crossing,
    integrate_until,
)

__all__ = [
    "BimodalAutomaton",
    "DelayPolicy",
    "DelayedMapResult",
    "HybridTrajectory",
    "OrbitCandidate",
    "SurfaceHit",
    "Transition",
    "build_orbit",
    "delayed_chain",
    "join",
    "simulate",
    "slice_trajectory",
    "spatial_hits",
    "verify_closed_orbit",
    "within_delay_bound",
]

MAX_TRANSITIONS = 100_000
JOIN_TOL = 1e-9

Box = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class BimodalAutomaton:
    """Two planar vector fields sharing the switching surface ``{g = 0}``.

    ``domain_box`` bounds the region used for sampling and sanity checks;
    it does not constrain simulation.
    """

    f1: VectorField
    f2: VectorField
    guard: Surface
    equilibrium: Point
    domain_box: Box
    name: str = "bimodal"

    def __post_init__(self) -> None:
        xs = self.equilibrium
        if not self.guard(xs) < 0:
            raise ValueError("equilibrium must lie strictly inside Dom(1)")
        d = self.f1(xs)
        if max(abs(d[0]), abs(d[1])) > 1e-10:
            raise ValueError(f"f1 does not vanish at the equilibrium: {d}")

    def field(self, mode: int) -> VectorField:
        if mode == 1:
            return self.f1
        if mode == 2:
            return self.f2
        raise ValueError(f"mode must be 1 or 2, got {mode!r}")

    def exit_direction(self, mode: int) -> int:
        """Sign of the guard crossing that leaves the domain of ``mode``."""
        return 1 if mode == 1 else -1

    def in_domain(self, mode: int, x: Sequence[float], tol: float = 0.0) -> bool:
        gv = self.guard(x)
        return gv <= tol if mode == 1 else gv >= -tol


@dataclass(frozen=True)
class DelayPolicy:
    """How long each transition waits after its guard crossing.

    ``exact`` fires at the crossing.  ``fixed`` applies a per-source-mode
    delay: ``h1`` to transitions leaving mode 1 and ``h2`` to transitions
    leaving mode 2.  ``schedule`` gives the k-th transition the k-th delay;
    missing entries mean zero.
    """

    kind: str = "exact"
    h1: float = 0.0
    h2: float = 0.0
    delays: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("exact", "fixed", "schedule"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        for h in (self.h1, self.h2, *self.delays):
            if not (math.isfinite(h) and h >= 0):
                raise ValueError(f"delays must be finite and non-negative, got {h!r}")

    @classmethod
    def exact(cls) -> DelayPolicy:
        return cls("exact")

    @classmethod
    def fixed(cls, h2: float, h1: float = 0.0) -> DelayPolicy:
        return cls("fixed", h1=float(h1), h2=float(h2))

    @classmethod
    def uniform(cls, H: float) -> DelayPolicy:
        return cls("fixed", h1=float(H), h2=float(H))

    @classmethod
    def schedule(cls, delays: Iterable[float]) -> DelayPolicy:
        return cls("schedule", delays=tuple(float(h) for h in delays))

    def delay(self, k: int, source: int) -> float:
        """Delay of the ``k``-th transition (0-based) leaving mode ``source``."""
        if self.kind == "exact":
            return 0.0
        if self.kind == "fixed":
            return self.h1 if source == 1 else self.h2
        return self.delays[k] if k < len(self.delays) else 0.0

    @property
    def bound(self) -> tuple[float, float]:
        """Largest delay this policy can apply, per source mode."""
        if self.kind == "exact":
            return 0.0, 0.0
        if self.kind == "fixed":
            return self.h1, self.h2
        top = max(self.delays, default=0.0)
        return top, top


@dataclass(frozen=True)
class Transition:
    t: float
    source: int
    target: int
    delay: float
    crossing_time: float

    def as_dict(self) -> dict:
        return {"t": self.t, "from": self.source, "to": self.target, "delay": self.delay}


@dataclass(frozen=True)
class SurfaceHit:
    mode: int
    t: float
    x: Point
    direction: int


@dataclass(frozen=True)
class HybridTrajectory:
    """Mode-tagged dense segments with the transitions between them."""

    pieces: tuple[tuple[int, DenseSegment], ...] = ()
    transitions: tuple[Transition, ...] = ()
    _t0s: tuple[float, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_t0s", tuple(seg.t0 for _, seg in self.pieces))

    @classmethod
    def empty(cls) -> HybridTrajectory:
        return cls()

    @property
    def is_empty(self) -> bool:
        return not self.pieces

    @property
    def t_min(self) -> float:
        return self.pieces[0][1].t0

    @property
    def t_max(self) -> float:
        return self.pieces[-1][1].t1

    @property
    def initial_mode(self) -> int:
        return self.pieces[0][0]

    @property
    def final_mode(self) -> int:
        return self.pieces[-1][0]

    @property
    def initial_state(self) -> Point:
        return self.pieces[0][1].x_start

    @property
    def final_state(self) -> Point:
        return self.pieces[-1][1].x_end

    def locate(self, t: float) -> tuple[int, DenseSegment]:
        if self.is_empty or not (self.t_min <= t <= self.t_max):
            raise RangeError(f"t={t!r} outside trajectory span")
        i = bisect.bisect_right(self._t0s, t) - 1
        return self.pieces[max(i, 0)]

    def state(self, t: float) -> tuple[int, Point]:
        """Mode and state at ``t``; at a switching instant the new mode is reported."""
        mode, seg = self.locate(t)
        if t == seg.t1:
            return mode, seg.x_end
        if t == seg.t0:
            return mode, seg.x_start
        return mode, seg(t)

    def sample(self, dt: float) -> list[tuple[int, float, float, float]]:
        """Rows ``(mode, t, x1, x2)`` every ``dt`` seconds, always including both ends."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        if self.is_empty:
            return []
        t0, t1 = self.t_min, self.t_max
        n = int(math.floor((t1 - t0) / dt + 1e-9))
        times = [t0 + k * dt for k in range(n + 1)]
        if t1 - times[-1] > 1e-12:
            times.append(t1)
        else:
            times[-1] = t1
        rows = []
        for t in times:
            mode, x = self.state(t)
            rows.append((mode, t, x[0], x[1]))
        return rows

    def to_csv(self, dt: float) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "t", "x1", "x2"])
        for mode, t, a, b in self.sample(dt):
            w.writerow([mode, repr(t), repr(a), repr(b)])
        return buf.getvalue()

    def transitions_json(self) -> str:
        return json.dumps([tr.as_dict() for tr in self.transitions], indent=2)

    def slice(self, t_lo: float, t_hi: float) -> HybridTrajectory:
        return slice_trajectory(self, t_lo, t_hi)

    def join(self, other: HybridTrajectory) -> HybridTrajectory:
        return join(self, other)


def slice_trajectory(traj: HybridTrajectory, t_lo: float, t_hi: float) -> HybridTrajectory:
    """Restriction of ``traj`` to ``[t_lo, t_hi]``; transitions strictly inside are kept."""
    if traj.is_empty or not (traj.t_min <= t_lo < t_hi <= traj.t_max):
        raise RangeError(f"window [{t_lo!r}, {t_hi!r}] outside trajectory span")
    if t_lo == traj.t_min and t_hi == traj.t_max:
        return traj
    pieces = []
    for mode, seg in traj.pieces:
        if seg.t1 <= t_lo or seg.t0 >= t_hi:
            continue
        pieces.append((mode, seg.restrict(t_lo, t_hi)))
    trans = tuple(tr for tr in traj.transitions if t_lo < tr.t < t_hi)
    return HybridTrajectory(tuple(pieces), trans)


def join(first: HybridTrajectory, second: HybridTrajectory) -> HybridTrajectory:
    """Concatenate ``second`` after ``first``, shifting it to start at ``first.t_max``."""
    if first.is_empty:
        return second
    if second.is_empty:
        return first
    a, b = first.final_state, second.initial_state
    if math.hypot(a[0] - b[0], a[1] - b[1]) > JOIN_TOL:
        raise MismatchError(f"endpoint states differ: {a} vs {b}")
    shift = first.t_max - second.t_min
    pieces = first.pieces + tuple((m, s.shifted(shift)) for m, s in second.pieces)
    trans = list(first.transitions)
    last = first.transitions[-1] if first.transitions else None
    switched = last is not None and last.t == first.t_max and last.target == second.initial_mode
    if first.final_mode != second.initial_mode and not switched:
        t = first.t_max
        trans.append(Transition(t, first.final_mode, second.initial_mode, 0.0, t))
    trans.extend(
        Transition(tr.t + shift, tr.source, tr.target, tr.delay, tr.crossing_time + shift)
        for tr in second.transitions
    )
    return HybridTrajectory(pieces, tuple(trans))


def simulate(
    a: BimodalAutomaton,
    q0: int,
    x0: Sequence[float],
    T: float,
    policy: DelayPolicy,
    settings: IntegratorSettings,
    max_transitions: int = MAX_TRANSITIONS,
    stop_after: int | None = None,
) -> HybridTrajectory:
    """Simulate the (possibly delayed) automaton from ``(q0, x0)`` over ``[0, T]``.

    ``stop_after`` ends the run right after that many transitions.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    x = (float(x0[0]), float(x0[1]))
    a.field(q0)
    if not a.in_domain(q0, x, settings.event_value_tol):
        raise PreconditionViolated(f"x0={x} is not in the domain of mode {q0}")
    pieces: list[tuple[int, DenseSegment]] = []
    trans: list[Transition] = []
    t, mode = 0.0, q0
    while t < T:
        f = a.field(mode)
        event = (a.guard, a.exit_direction(mode))
        segs, hit = integrate_until(f, x, T - t, [event], settings, t_start=t)
        pieces.extend((mode, s) for s in segs)
        if hit is None:
            break
        h = policy.delay(len(trans), mode)
        t_cross = hit.t
        x = hit.x
        t = t_cross
        if h > 0:
            span = min(h, T - t)
            if span > 0:
                segs, _ = integrate_until(f, x, span, [], settings, t_start=t)
                pieces.extend((mode, s) for s in segs)
                x = segs[-1].x_end
                t = segs[-1].t1
            if t_cross + h > T:
                break
            t = t_cross + h
        if trans and t - trans[-1].t < settings.event_time_tol:
            raise ZenoSuspected(f"transitions accumulate near t={t!r}")
        target = 3 - mode
        trans.append(Transition(t, mode, target, h, t_cross))
        if len(trans) > max_transitions:
            raise ZenoSuspected(f"more than {max_transitions} transitions")
        mode = target
        if stop_after is not None and len(trans) >= stop_after:
            break
    return HybridTrajectory(tuple(pieces), tuple(trans))


def within_delay_bound(traj: HybridTrajectory, h1: float, h2: float | None = None, tol: float = 1e-12) -> bool:
    """True if no transition waited longer than its bound (``h1`` from mode 1, ``h2`` from mode 2)."""
    h2 = h1 if h2 is None else h2
    for tr in traj.transitions:
        bound = h1 if tr.source == 1 else h2
        if tr.t - tr.crossing_time > bound + tol:
            return False
    return True


_SCAN_SUBDIV = 4


def spatial_hits(
    traj: HybridTrajectory,
    surface: Surface,
    after: float,
    settings: IntegratorSettings,
    direction: int = 0,
) -> list[SurfaceHit]:
    """Chronological crossings of ``{surface = 0}`` strictly after ``after``."""
    hits: list[SurfaceHit] = []
    if traj.is_empty or after >= traj.t_max:
        return hits
    prev = None
    for mode, seg in traj.pieces:
        if seg.t1 <= after:
            continue
        lo = max(seg.t0, after)
        h = seg.t1 - lo
        ta = lo
        if prev is None:
            prev = surface(seg(lo) if lo > seg.t0 else seg.x_start)
        for i in range(1, _SCAN_SUBDIV + 1):
            tb = seg.t1 if i == _SCAN_SUBDIV else lo + h * i / _SCAN_SUBDIV
            eb = surface(seg.x_end if i == _SCAN_SUBDIV else seg(tb))
            sense = 0
            if prev < 0.0 <= eb and direction >= 0:
                sense = 1
            elif prev > 0.0 >= eb and direction <= 0:
                sense = -1
            if sense:
                tr = bisect_crossing(seg, surface, ta, tb, sense, settings.event_time_tol)
                if tr > after:
                    hits.append(SurfaceHit(mode, tr, seg(tr), sense))
            prev = eb
            ta = tb
    return hits


@dataclass(frozen=True)
class DelayedMapResult:
    """Points of the delayed return chain ``x -> x1 -> ... -> x5``.

    ``times`` holds the leg durations keyed ``"x1"`` .. ``"x5"``.
    """

    x0: Point
    x1: Point
    x2: Point
    x3: Point
    x4: Point
    x5: Point
    h1: float
    h2_used: float
    times: dict

    @property
    def residual(self) -> float:
        return math.hypot(self.x5[0] - self.x0[0], self.x5[1] - self.x0[1])


def _horizon_hit(f, x, events, settings, what, exc):
    _, hit = integrate_until(f, x, settings.horizon, events, settings)
    if hit is None:
        raise exc(f"{what}: no crossing within {settings.horizon:g} s")
    return hit


def guard_exit(a: BimodalAutomaton, section: Surface, x: Sequence[float], settings: IntegratorSettings):
    """First rising guard crossing of the mode-1 flow from ``x``.

    Fails if the flow comes back to ``section`` first, since it then spirals
    into the equilibrium without leaving ``Dom(1)``.
    """
    hit = _horizon_hit(
        a.f1, x, [(a.guard, 1), (section, 1)], settings, "mode-1 flow to the guard", GuardNotReached
    )
    if hit.index != 0:
        raise GuardNotReached("mode-1 flow returned to the section before reaching the guard")
    return hit


def delayed_chain(
    a: BimodalAutomaton,
    section: Surface,
    x: Sequence[float],
    h1: float,
    h2: float,
    settings: IntegratorSettings,
) -> DelayedMapResult:
    """Five-leg delayed return from a section point back to the section."""
    if h1 < 0 or h2 < 0:
        raise PreconditionViolated("delays must be non-negative")
    x0 = (float(x[0]), float(x[1]))
    hit1 = guard_exit(a, section, x0, settings)
    x1 = hit1.x
    x2, t2 = delay_leg(a.f1, x1, h1, (a.guard, -1), settings, "h1 exceeds the mode-1 return time to the guard")
    hit3 = _horizon_hit(a.f2, x2, [(a.guard, -1)], settings, "mode-2 flow to the guard", GuardNotReached)
    x3 = hit3.x
    x4, t4 = delay_leg(a.f2, x3, h2, (section, 0), settings, "h2 exceeds the mode-2 return time to the section")
    hit5 = _horizon_hit(a.f1, x4, [(section, 1)], settings, "mode-1 flow to the section", SectionNotReached)
    times = {"x1": hit1.t, "x2": t2, "x3": hit3.t, "x4": t4, "x5": hit5.t}
    return DelayedMapResult(x0, x1, x2, x3, x4, hit5.x, h1, h2, times)


def delay_leg(f: VectorField, x: Point, h: float, forbidden, settings, message) -> tuple[Point, float]:
    """Flow for ``h`` seconds, failing if ``forbidden`` is crossed on the way."""
    if h == 0:
        return x, 0.0
    segs, hit = integrate_until(f, x, h, [forbidden], settings)
    if hit is not None:
        raise PreconditionViolated(f"{message} (crossed after {hit.t:.6g} s)")
    return segs[-1].x_end, h


@dataclass(frozen=True)
class OrbitCandidate:
    """Anchor point and delays of a possible closed orbit."""

    x: Point
    h1: float
    h2: float
    residual: float | None = None
    trajectory: HybridTrajectory | None = None

    def __post_init__(self) -> None:
        if self.h1 < 0 or self.h2 < 0:
            raise ValueError("delays must be non-negative")
        if self.residual is not None and not self.residual >= 0:
            raise ValueError("residual must be non-negative")


def build_orbit(
    a: BimodalAutomaton,
    section: Surface,
    x: Sequence[float],
    h1: float,
    h2: float,
    settings: IntegratorSettings,
) -> OrbitCandidate:
    """Simulate one delayed loop from ``x`` in mode 1 and measure how far it lands from ``x``.

    The loop runs the hybrid simulator with a two-entry delay schedule,
    then follows mode 1 back to ``section``.
    """
    x0 = (float(x[0]), float(x[1]))
    if abs(section(x0)) > settings.event_value_tol:
        raise PreconditionViolated(f"anchor {x0} is not on the section")
    if h1 < 0 or h2 < 0:
        raise PreconditionViolated("delays must be non-negative")
    guard_exit(a, section, x0, settings)
    policy = DelayPolicy.schedule([h1, h2])
    loop = simulate(a, 1, x0, settings.horizon, policy, settings, stop_after=2)
    if len(loop.transitions) < 2:
        raise GuardNotReached("delayed loop did not complete both transitions")
    last = loop.final_state
    segs, hit = integrate_until(a.f1, last, settings.horizon, [(section, 1)], settings, t_start=loop.t_max)
    if hit is None:
        raise SectionNotReached("mode-1 flow to the section: no crossing within horizon")
    tail = HybridTrajectory(tuple((1, s) for s in segs))
    traj = join(loop, tail)
    x5 = hit.x
    residual = math.hypot(x5[0] - x0[0], x5[1] - x0[1])
    return OrbitCandidate(x0, h1, h2, residual, traj)


def verify_closed_orbit(a: BimodalAutomaton, curve, cand: OrbitCandidate, settings: IntegratorSettings) -> float:
    """Euclidean distance between the anchor and its image under the delayed loop.

    ``curve`` is anything exposing a ``section`` surface.
    """
    return build_orbit(a, curve.section, cand.x, cand.h1, cand.h2, settings).residual
