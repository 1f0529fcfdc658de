"""Adaptive Dormand-Prince 5(4) integration of planar autonomous ODEs.

The state is a pair of Python floats.  For two-dimensional systems plain
float arithmetic is several times faster than per-step numpy calls, and the
search routines evaluate many thousands of short flows.

Every accepted step carries the quartic continuous extension of the pair, so
trajectories can be queried at arbitrary times and scalar events can be
bracketed and bisected on the interpolant.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence, Union

from .errors import NonFiniteState, StepFailure, TangencyUnresolved

Point = tuple[float, float]

__all__ = [
    "DenseSegment",
    "EventHit",
    "IntegratorSettings",
    "Point",
    "Surface",
    "VectorField",
    "find_events",
    "flow",
    "integrate_dense",
    "integrate_until",
    "linear_surface",
    "locate_event",
]

MIN_STEP = 1e-14
STATE_LIMIT = 1e6

# Dormand-Prince 5(4) tableau.
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

# Continuous extension: y(t0 + th*h) = y0 + h * sum_j k_j * sum_i P[j][i] th^(i+1).
# Row 1 (k2) is identically zero and omitted.
_P = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)


@dataclass(frozen=True)
class IntegratorSettings:
    """Tolerances shared by every numerical routine.

    ``max_step`` is an upper bound; a vector field may carry a tighter
    ``max_step`` of its own.  ``horizon`` bounds every open-ended search
    (return times, guard crossings).
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 1e-2
    event_time_tol: float = 1e-12
    event_value_tol: float = 1e-9
    horizon: float = 10.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{f.name} must be a finite positive number, got {value!r}")
        if self.event_time_tol > self.max_step:
            raise ValueError("event_time_tol must not exceed max_step")

    def replace(self, **changes: float) -> IntegratorSettings:
        return dataclasses.replace(self, **changes)


class _Negated:
    __slots__ = ("func",)

    def __init__(self, func: Callable[[float, float], Point]) -> None:
        self.func = func

    def __call__(self, x1: float, x2: float) -> Point:
        d1, d2 = self.func(x1, x2)
        return -d1, -d2

    def __reduce__(self):
        return (_Negated, (self.func,))


@dataclass(frozen=True)
class VectorField:
    """Planar vector field ``f(x1, x2) -> (dx1, dx2)``.

    ``max_step`` is an optional step bound reflecting the field's fastest
    time scale.
    """

    func: Callable[[float, float], Point]
    description: str = ""
    max_step: float | None = None

    def __call__(self, x: Sequence[float]) -> Point:
        return self.func(x[0], x[1])

    def negated(self) -> VectorField:
        return VectorField(_Negated(self.func), f"-({self.description})", self.max_step)


class _Affine:
    __slots__ = ("a1", "a2", "b")

    def __init__(self, a1: float, a2: float, b: float) -> None:
        self.a1, self.a2, self.b = a1, a2, b

    def __call__(self, x1: float, x2: float) -> float:
        return self.a1 * x1 + self.a2 * x2 + self.b

    def gradient(self, x1: float, x2: float) -> Point:
        return self.a1, self.a2

    def __reduce__(self):
        return (_Affine, (self.a1, self.a2, self.b))


@dataclass(frozen=True)
class Surface:
    """Scalar function on the plane together with its gradient."""

    func: Callable[[float, float], float]
    grad: Callable[[float, float], Point]
    description: str = ""

    def __call__(self, x: Sequence[float]) -> float:
        return self.func(x[0], x[1])

    def gradient(self, x: Sequence[float]) -> Point:
        return self.grad(x[0], x[1])

    def lie(self, field: VectorField, x: Sequence[float]) -> float:
        """Directional derivative of the surface function along ``field`` at ``x``."""
        d1, d2 = field(x)
        g1, g2 = self.gradient(x)
        return g1 * d1 + g2 * d2


def linear_surface(a1: float, a2: float, b: float = 0.0, description: str = "") -> Surface:
    """Surface ``a1*x1 + a2*x2 + b``."""
    fn = _Affine(float(a1), float(a2), float(b))
    return Surface(fn, fn.gradient, description or f"{a1}*x1 + {a2}*x2 + {b}")


@dataclass(frozen=True, slots=True)
class DenseSegment:
    """One accepted step with its polynomial interpolant.

    The state at time ``t`` is ``base + sum_i coef_i * th**i`` with
    ``th = (t - t_ref) / scale``.  Restricting, shifting and time reversal
    only change the affine map from ``t`` to ``th``.
    """

    t0: float
    t1: float
    x_start: Point
    x_end: Point
    t_ref: float
    scale: float
    base: Point
    coef: tuple[float, float, float, float, float, float, float, float]

    def __call__(self, t: float) -> Point:
        th = (t - self.t_ref) / self.scale
        c = self.coef
        b = self.base
        return (
            b[0] + th * (c[0] + th * (c[1] + th * (c[2] + th * c[3]))),
            b[1] + th * (c[4] + th * (c[5] + th * (c[6] + th * c[7]))),
        )

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def restrict(self, lo: float, hi: float) -> DenseSegment:
        lo = max(lo, self.t0)
        hi = min(hi, self.t1)
        if not lo < hi:
            raise ValueError("empty restriction")
        xs = self.x_start if lo == self.t0 else self(lo)
        xe = self.x_end if hi == self.t1 else self(hi)
        return dataclasses.replace(self, t0=lo, t1=hi, x_start=xs, x_end=xe)

    def shifted(self, dt: float) -> DenseSegment:
        return dataclasses.replace(self, t0=self.t0 + dt, t1=self.t1 + dt, t_ref=self.t_ref + dt)

    def reversed(self, t_total: float) -> DenseSegment:
        """Segment of the time-reversed path ``t -> t_total - t``."""
        return DenseSegment(
            t0=t_total - self.t1,
            t1=t_total - self.t0,
            x_start=self.x_end,
            x_end=self.x_start,
            t_ref=t_total - self.t_ref,
            scale=-self.scale,
            base=self.base,
            coef=self.coef,
        )


def _dp_step(fn, t: float, y1: float, y2: float, k1a: float, k1b: float, h: float):
    """One Dormand-Prince step; returns (segment, y_new, f(y_new), scaled error parts)."""
    k2a, k2b = fn(y1 + h * _A21 * k1a, y2 + h * _A21 * k1b)
    k3a, k3b = fn(y1 + h * (_A31 * k1a + _A32 * k2a), y2 + h * (_A31 * k1b + _A32 * k2b))
    k4a, k4b = fn(
        y1 + h * (_A41 * k1a + _A42 * k2a + _A43 * k3a),
        y2 + h * (_A41 * k1b + _A42 * k2b + _A43 * k3b),
    )
    k5a, k5b = fn(
        y1 + h * (_A51 * k1a + _A52 * k2a + _A53 * k3a + _A54 * k4a),
        y2 + h * (_A51 * k1b + _A52 * k2b + _A53 * k3b + _A54 * k4b),
    )
    k6a, k6b = fn(
        y1 + h * (_A61 * k1a + _A62 * k2a + _A63 * k3a + _A64 * k4a + _A65 * k5a),
        y2 + h * (_A61 * k1b + _A62 * k2b + _A63 * k3b + _A64 * k4b + _A65 * k5b),
    )
    n1 = y1 + h * (_B1 * k1a + _B3 * k3a + _B4 * k4a + _B5 * k5a + _B6 * k6a)
    n2 = y2 + h * (_B1 * k1b + _B3 * k3b + _B4 * k4b + _B5 * k5b + _B6 * k6b)
    k7a, k7b = fn(n1, n2)
    e1 = h * (_E1 * k1a + _E3 * k3a + _E4 * k4a + _E5 * k5a + _E6 * k6a + _E7 * k7a)
    e2 = h * (_E1 * k1b + _E3 * k3b + _E4 * k4b + _E5 * k5b + _E6 * k6b + _E7 * k7b)
    ka = (k1a, k3a, k4a, k5a, k6a, k7a)
    kb = (k1b, k3b, k4b, k5b, k6b, k7b)
    coef = []
    for ks in (ka, kb):
        for i in range(4):
            coef.append(h * sum(k * row[i] for k, row in zip(ks, _P)))
    seg = DenseSegment(t, t + h, (y1, y2), (n1, n2), t, h, (y1, y2), tuple(coef))
    return seg, n1, n2, k7a, k7b, e1, e2


def _check_state(y1: float, y2: float) -> None:
    if not (abs(y1) <= STATE_LIMIT and abs(y2) <= STATE_LIMIT):
        raise NonFiniteState(f"state ({y1!r}, {y2!r}) left the finite range")


def _initial_step(fn, y1, y2, f1, f2, rtol, atol, h_cap) -> float:
    s1 = atol + rtol * abs(y1)
    s2 = atol + rtol * abs(y2)
    d0 = math.hypot(y1 / s1, y2 / s2) / math.sqrt(2)
    d1 = math.hypot(f1 / s1, f2 / s2) / math.sqrt(2)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, h_cap)
    g1, g2 = fn(y1 + h0 * f1, y2 + h0 * f2)
    d2 = math.hypot((g1 - f1) / s1, (g2 - f2) / s2) / math.sqrt(2) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, h_cap)


def _steps(
    field: VectorField, x0: Sequence[float], t_start: float, t_end: float, settings: IntegratorSettings
) -> Iterator[DenseSegment]:
    """Yield accepted steps covering ``[t_start, t_end]``; the last one lands on ``t_end``."""
    fn = field.func
    rtol, atol = settings.rel_tol, settings.abs_tol
    h_max = settings.max_step if field.max_step is None else min(settings.max_step, field.max_step)
    t = t_start
    y1, y2 = float(x0[0]), float(x0[1])
    _check_state(y1, y2)
    k1a, k1b = fn(y1, y2)
    h = _initial_step(fn, y1, y2, k1a, k1b, rtol, atol, min(h_max, t_end - t))
    rejected = False
    while t < t_end:
        remaining = t_end - t
        last = h >= remaining
        if last:
            h = remaining
        seg, n1, n2, k7a, k7b, e1, e2 = _dp_step(fn, t, y1, y2, k1a, k1b, h)
        s1 = atol + rtol * max(abs(y1), abs(n1))
        s2 = atol + rtol * max(abs(y2), abs(n2))
        err = math.sqrt(0.5 * ((e1 / s1) ** 2 + (e2 / s2) ** 2))
        if err <= 1.0:
            _check_state(n1, n2)
            if last:
                seg = dataclasses.replace(seg, t1=t_end)
                t = t_end
            else:
                t = seg.t1
            yield seg
            y1, y2, k1a, k1b = n1, n2, k7a, k7b
            factor = 10.0 if err == 0 else min(10.0, 0.9 * err**-0.2)
            if rejected:
                factor = min(factor, 1.0)
            rejected = False
            h = min(h * factor, h_max)
        else:
            if not math.isfinite(err):
                factor = 0.2
            else:
                factor = max(0.2, 0.9 * err**-0.2)
            h *= factor
            rejected = True
            if h < MIN_STEP:
                raise StepFailure(f"step size underflow at t={t!r}")


def _oriented(field: VectorField, T: float) -> tuple[VectorField, float]:
    if T < 0:
        return field.negated(), -T
    return field, T


def flow(field: VectorField, x0: Sequence[float], T: float, settings: IntegratorSettings) -> Point:
    """State reached from ``x0`` after time ``T`` (negative ``T`` flows backward)."""
    if not (math.isfinite(x0[0]) and math.isfinite(x0[1])):
        raise NonFiniteState("initial state is not finite")
    if T == 0:
        return float(x0[0]), float(x0[1])
    f, span = _oriented(field, T)
    seg = None
    for seg in _steps(f, x0, 0.0, span, settings):
        pass
    return seg.x_end


def integrate_dense(
    field: VectorField, x0: Sequence[float], T: float, settings: IntegratorSettings
) -> list[DenseSegment]:
    """Dense-output segments covering ``[0, T]`` (or ``[T, 0]`` for negative ``T``)."""
    if T == 0:
        return []
    f, span = _oriented(field, T)
    segs = list(_steps(f, x0, 0.0, span, settings))
    if T < 0:
        segs = [s.reversed(0.0) for s in reversed(segs)]
    return segs


@dataclass(frozen=True)
class EventHit:
    t: float
    x: Point
    index: int
    direction: int


EventSpec = tuple[Callable[[Point], float], int]

_DIRECTIONS = {"rising": 1, "falling": -1, "any": 0, 1: 1, -1: -1, 0: 0}

# Sub-intervals per accepted step for sign scanning.
_SUBDIV = 4


def _direction(d: Union[str, int]) -> int:
    try:
        return _DIRECTIONS[d]
    except KeyError:
        raise ValueError(f"unknown event direction {d!r}") from None


def _crossing(ea: float, eb: float, direction: int) -> int:
    if ea < 0.0 <= eb and direction >= 0:
        return 1
    if ea > 0.0 >= eb and direction <= 0:
        return -1
    return 0


def bisect_crossing(
    path: Callable[[float], Point],
    event: Callable[[Point], float],
    a: float,
    b: float,
    sense: int,
    time_tol: float,
) -> float:
    """Shrink ``[a, b]`` around a crossing of ``event`` along ``path``; return the after-side end."""
    while b - a > time_tol:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        em = event(path(m))
        after = em >= 0.0 if sense > 0 else em <= 0.0
        if after:
            b = m
        else:
            a = m
    return b


def _restep(field: VectorField, seg: DenseSegment, t_hit: float) -> DenseSegment:
    """Fresh step from the start of ``seg`` landing exactly on ``t_hit``."""
    y1, y2 = seg.x_start
    k1a, k1b = field.func(y1, y2)
    h = t_hit - seg.t0
    new, *_ = _dp_step(field.func, seg.t0, y1, y2, k1a, k1b, h)
    return dataclasses.replace(new, t1=t_hit)


def integrate_until(
    field: VectorField,
    x0: Sequence[float],
    duration: float,
    events: Sequence[EventSpec],
    settings: IntegratorSettings,
    t_start: float = 0.0,
) -> tuple[list[DenseSegment], EventHit | None]:
    """Integrate forward until the earliest event or until ``duration`` elapses.

    Each event is ``(function, direction)`` with direction +1 (rising),
    -1 (falling) or 0 (either).  An event whose value at ``x0`` is within
    ``event_value_tol`` of zero counts as starting on its surface; only
    later crossings are reported.  The segment list ends exactly at the hit.
    """
    x0 = (float(x0[0]), float(x0[1]))
    if not (math.isfinite(x0[0]) and math.isfinite(x0[1])):
        raise NonFiniteState("initial state is not finite")
    if duration <= 0:
        return [], None
    specs = [(fn, _direction(d)) for fn, d in events]
    vtol = settings.event_value_tol
    prev = []
    for fn, _ in specs:
        e = fn(x0)
        prev.append(0.0 if abs(e) <= vtol else e)
    segments: list[DenseSegment] = []
    t_end = t_start + duration
    for seg in _steps(field, x0, t_start, t_end, settings):
        hit = _scan_segment(seg, specs, prev, settings) if specs else None
        if hit is None:
            segments.append(seg)
            continue
        t_hit, idx, sense = hit
        _check_tangency(seg, specs[idx][0], t_hit, sense, settings)
        if t_hit <= seg.t0:
            x_hit = seg.x_start
        else:
            seg = _restep(field, seg, t_hit)
            segments.append(seg)
            x_hit = seg.x_end
        return segments, EventHit(t_hit, x_hit, idx, sense)
    return segments, None


def _scan_segment(seg: DenseSegment, specs, prev: list[float], settings: IntegratorSettings):
    """Earliest crossing inside one step, or None; updates ``prev`` in place."""
    n = _SUBDIV
    h = seg.t1 - seg.t0
    ta = seg.t0
    for i in range(1, n + 1):
        tb = seg.t1 if i == n else seg.t0 + h * i / n
        xb = seg.x_end if i == n else seg(tb)
        best = None
        vals = []
        for j, (fn, direction) in enumerate(specs):
            eb = fn(xb)
            vals.append(eb)
            sense = _crossing(prev[j], eb, direction)
            if sense:
                t_root = bisect_crossing(seg, fn, ta, tb, sense, settings.event_time_tol)
                if best is None or t_root < best[0]:
                    best = (t_root, j, sense)
        if best is not None:
            return best
        prev[:] = vals
        ta = tb
    return None


def _check_tangency(seg, fn, t_hit, sense, settings) -> None:
    """Raise if the event reverses within two time tolerances on either side of the hit.

    The crossing lies somewhere in ``[t_hit - tol, t_hit]``, so probes on the
    before side start past that bracket.
    """
    tol = settings.event_time_tol
    vtol = settings.event_value_tol
    for k in (1, 2, 3, 4):
        for t, wrong in ((t_hit - (1 + 0.5 * k) * tol, sense), (t_hit + 0.5 * k * tol, -sense)):
            if not seg.t0 <= t <= seg.t1:
                continue
            e = fn(seg(t))
            if e * wrong > vtol:
                raise TangencyUnresolved(f"event crosses again within {2 * tol:g} s of t={t_hit!r}")


def find_events(
    field: VectorField,
    x0: Sequence[float],
    events: Sequence[EventSpec],
    settings: IntegratorSettings,
    t_max: float | None = None,
) -> EventHit | None:
    """Earliest crossing among ``events`` within ``(0, t_max]``."""
    span = settings.horizon if t_max is None else t_max
    _, hit = integrate_until(field, x0, span, events, settings)
    return hit


def locate_event(
    field: VectorField,
    x0: Sequence[float],
    event: Callable[[Point], float],
    direction: Union[str, int],
    settings: IntegratorSettings,
    t_max: float | None = None,
) -> tuple[float, Point] | None:
    """First crossing of ``event`` in the given direction, as ``(t, x)``, or None."""
    hit = find_events(field, x0, [(event, direction)], settings, t_max)
    if hit is None:
        return None
    return hit.t, hit.x
