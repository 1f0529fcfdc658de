"""Bundled bouncing-ball automata and their JSON configuration.

State ``x = (x1, x2)`` is the height of the ball's centre and its vertical
velocity.  Mode 2 is free flight, mode 1 is contact with a spring-damper
floor; the switch happens when the centre is one radius above the floor.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import ConfigError
from .hybrid import BimodalAutomaton
from .ode import VectorField, linear_surface

__all__ = [
    "BouncingBallParams",
    "ModelConfig",
    "MODELS",
    "bouncing_ball",
    "bouncing_ball_affine",
    "energy",
    "load_model",
]

CONTACT_MAX_STEP = 1e-3
FLIGHT_MAX_STEP = 1e-2
DEFAULT_D_A_LIN = 1e-6


@dataclass(frozen=True)
class BouncingBallParams:
    """Physical constants in SI units.

    ``d_c`` is the contact damping (N s/m) and ``d_a`` the quadratic air
    drag coefficient (N s^2/m^2).
    """

    r: float = 0.25
    m: float = 0.650
    c: float = 40000.0
    d_c: float = 10.0
    d_a: float = 0.0136
    g: float = 9.81

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"parameter {f.name} must be a finite number, got {v!r}")
            if f.name in ("d_c", "d_a"):
                if v < 0:
                    raise ConfigError(f"parameter {f.name} must be non-negative, got {v!r}")
            elif v <= 0:
                raise ConfigError(f"parameter {f.name} must be positive, got {v!r}")

    @property
    def equilibrium(self) -> tuple[float, float]:
        return (self.r - self.m * self.g / self.c, 0.0)


class _Flight:
    """Free flight with drag ``-(k/m) * v * |v|`` (quadratic) or ``-(k/m) * v`` (linear)."""

    def __init__(self, p: BouncingBallParams, drag: float, quadratic: bool) -> None:
        self.k = drag / p.m
        self.g = p.g
        self.quadratic = quadratic

    def __call__(self, x1: float, x2: float) -> tuple[float, float]:
        drag = self.k * x2 * abs(x2) if self.quadratic else self.k * x2
        return x2, -drag - self.g


class _Contact:
    """Flight dynamics plus the floor's spring and damper."""

    def __init__(self, p: BouncingBallParams, drag: float, quadratic: bool) -> None:
        self.k = drag / p.m
        self.g = p.g
        self.quadratic = quadratic
        self.stiff = p.c / p.m
        self.damp = p.d_c / p.m
        self.r = p.r

    def __call__(self, x1: float, x2: float) -> tuple[float, float]:
        drag = self.k * x2 * abs(x2) if self.quadratic else self.k * x2
        return x2, self.stiff * (self.r - x1) - self.damp * x2 - drag - self.g


def _box(p: BouncingBallParams) -> tuple[tuple[float, float], tuple[float, float]]:
    return ((p.r - 1.25, p.r + 1.0), (-5.0, 5.0))


def _build(p: BouncingBallParams, drag: float, quadratic: bool, name: str) -> BimodalAutomaton:
    label = "v|v|" if quadratic else "v"
    f1 = VectorField(_Contact(p, drag, quadratic), f"contact, drag ~ {label}", CONTACT_MAX_STEP)
    f2 = VectorField(_Flight(p, drag, quadratic), f"free flight, drag ~ {label}", FLIGHT_MAX_STEP)
    guard = linear_surface(1.0, 0.0, -p.r, f"x1 - {p.r}")
    return BimodalAutomaton(f1, f2, guard, p.equilibrium, _box(p), name)


def bouncing_ball(params: BouncingBallParams | None = None) -> BimodalAutomaton:
    """Ball with quadratic air drag in both modes."""
    p = params or BouncingBallParams()
    return _build(p, p.d_a, True, "bouncing_ball")


def bouncing_ball_affine(params: BouncingBallParams | None = None, d_a_lin: float = DEFAULT_D_A_LIN) -> BimodalAutomaton:
    """Ball whose drag is linear in velocity, making both modes affine."""
    if not (math.isfinite(d_a_lin) and d_a_lin >= 0):
        raise ConfigError(f"d_a_lin must be finite and non-negative, got {d_a_lin!r}")
    p = params or BouncingBallParams()
    return _build(p, d_a_lin, False, "bouncing_ball_affine")


def energy(p: BouncingBallParams, x) -> float:
    """Kinetic plus gravitational plus spring energy."""
    compression = max(0.0, p.r - x[0])
    return 0.5 * p.m * x[1] ** 2 + p.m * p.g * x[0] + 0.5 * p.c * compression**2


@dataclass(frozen=True)
class _ModelEntry:
    build: Callable[[BouncingBallParams, Mapping[str, float]], BimodalAutomaton]
    extra: tuple[str, ...]
    window: Callable[[BouncingBallParams], tuple[float, float]]
    horizon: float


def _nonlinear_window(p: BouncingBallParams) -> tuple[float, float]:
    return (p.r - 0.01, p.equilibrium[0])


def _affine_window(p: BouncingBallParams) -> tuple[float, float]:
    return (p.r - 1.25, p.r - 0.25)


MODELS: dict[str, _ModelEntry] = {
    "bouncing_ball": _ModelEntry(lambda p, e: bouncing_ball(p), (), _nonlinear_window, 10.0),
    "bouncing_ball_affine": _ModelEntry(
        lambda p, e: bouncing_ball_affine(p, e.get("d_a_lin", DEFAULT_D_A_LIN)), ("d_a_lin",), _affine_window, 100.0
    ),
}

_PARAM_KEYS = tuple(f.name for f in dataclasses.fields(BouncingBallParams))


@dataclass(frozen=True)
class ModelConfig:
    """A built-in model name with parameter overrides."""

    model: str = "bouncing_ball"
    params: BouncingBallParams = BouncingBallParams()
    extra: tuple[tuple[str, float], ...] = ()

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> ModelConfig:
        if not isinstance(data, Mapping):
            raise ConfigError("model config must be a JSON object")
        unknown = set(data) - {"model", "params"}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        name = data.get("model", "bouncing_ball")
        if name not in MODELS:
            raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")
        raw = data.get("params", {}) or {}
        if not isinstance(raw, Mapping):
            raise ConfigError("params must be a JSON object")
        entry = MODELS[name]
        allowed = set(_PARAM_KEYS) | set(entry.extra)
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown parameter key(s) for {name}: {', '.join(sorted(unknown))}")
        for k, v in raw.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"parameter {k} must be a number, got {v!r}")
        params = BouncingBallParams(**{k: float(raw[k]) for k in _PARAM_KEYS if k in raw})
        extra = tuple(sorted((k, float(raw[k])) for k in entry.extra if k in raw))
        return cls(name, params, extra)

    @classmethod
    def from_json(cls, path: str | Path) -> ModelConfig:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read model config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model config {path} is not valid JSON: {exc}") from exc
        return cls.from_mapping(data)

    def automaton(self) -> BimodalAutomaton:
        return MODELS[self.model].build(self.params, dict(self.extra))

    def search_window(self) -> tuple[float, float]:
        """Default anchor-parameter interval for orbit searches."""
        return MODELS[self.model].window(self.params)

    def horizon(self) -> float:
        """Search horizon long enough for the flights that start in the search window."""
        return MODELS[self.model].horizon


def load_model(source: str | Path | None) -> ModelConfig:
    """Resolve a built-in model name or a JSON config path."""
    if source is None:
        return ModelConfig()
    if str(source) in MODELS:
        return ModelConfig(str(source))
    return ModelConfig.from_json(source)
