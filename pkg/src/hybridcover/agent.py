"""Per-agent three-mode hybrid automaton: vector fields, guards, localisation.

Mode 1 (coverage) follows the normalised coverage gradient at full speed,
Mode 2 (to-charging) flies straight to the station at the origin at the
speed the station assigns, Mode 3 (in-charging) rests at the origin and
charges linearly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coverage import MissionSpace, ascent_velocity, evaluate_field
from .errors import HybridCoverError

TOL_EVENT = 1e-10
TOL_POSITION = 1e-9


class AgentMode(enum.IntEnum):
    COVERAGE = 1
    TO_CHARGING = 2
    IN_CHARGING = 3

    def next(self) -> "AgentMode":
        return AgentMode(self % 3 + 1)


class EventKind(str, enum.Enum):
    GUARD12 = "Guard12"
    GUARD23 = "Guard23"
    GUARD31 = "Guard31"
    SPEED_CHANGE = "SchedulerSpeedChange"
    HORIZON = "Horizon"

    @property
    def endogenous(self) -> bool:
        return self in (EventKind.GUARD12, EventKind.GUARD23, EventKind.GUARD31)

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class GuardEvent:
    kind: EventKind
    time: float
    agent: int


@dataclass
class AgentState:
    """Hybrid state of one agent.

    ``heading`` is the last Mode-1 heading (fallback when the gradient
    vanishes); ``frozen_heading`` is the unit vector s(τ₂)/‖s(τ₂)‖ fixed at
    the Mode-1 to Mode-2 switch, so Mode-2 velocity is -speed * frozen_heading.
    """

    position: np.ndarray
    soc: float
    mode: AgentMode = AgentMode.COVERAGE
    speed: float = 0.0
    heading: tuple[float, float] = (1.0, 0.0)
    frozen_heading: tuple[float, float] | None = None
    index: int = 0
    extras: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.mode = AgentMode(self.mode)

    @property
    def distance(self) -> float:
        return float(math.hypot(self.position[0], self.position[1]))


class ModeError(HybridCoverError):
    """A mode operation was applied to an agent in the wrong mode or state."""


def _require(state: AgentState, mode: AgentMode):
    if state.mode != mode:
        raise ModeError(f"agent in {state.mode.name}, expected {mode.name}")


def mode1_field(state: AgentState, positions, space: MissionSpace, sensors,
                v_max: float, alpha: float, active=None,
                smoothing: float = 0.0) -> tuple[float, float, float]:
    """(dx/dt, dy/dt, dq/dt) of a coverage-mode agent.

    Velocity is v_max along the normalised gradient of H with respect to the
    agent's own position (see ``ascent_velocity`` for ``smoothing``), with
    the outward component removed on Ω's edges.
    """
    _require(state, AgentMode.COVERAGE)
    ev = evaluate_field(positions, space, sensors, active=active, hessian=False)
    vx, vy = ascent_velocity(ev.gradient[state.index], v_max, smoothing, state.heading)
    x, y = state.position
    if (x <= 0 and vx < 0) or (x >= space.x_extent and vx > 0):
        vx = 0.0
    if (y <= 0 and vy < 0) or (y >= space.y_extent and vy > 0):
        vy = 0.0
    return vx, vy, -alpha * v_max ** 2


def guard12_residual(state: AgentState, v_max: float, alpha: float) -> float:
    """q - v α ‖s‖: charge left over after a full-speed straight run home."""
    return float(state.soc - v_max * alpha * state.distance)


def mode2_field(state: AgentState, alpha: float) -> tuple[float, float, float]:
    _require(state, AgentMode.TO_CHARGING)
    if state.frozen_heading is None:
        raise ModeError("to-charging agent has no frozen heading")
    if not state.speed > 0:
        raise ModeError("to-charging speed must be positive")
    hx, hy = state.frozen_heading
    return -state.speed * hx, -state.speed * hy, -alpha * state.speed ** 2


def guard23_residual(state: AgentState) -> float:
    return state.distance


def mode3_field(state: AgentState, beta: float) -> tuple[float, float, float]:
    _require(state, AgentMode.IN_CHARGING)
    if state.distance > TOL_POSITION:
        raise ModeError(f"charging agent away from the station at {tuple(state.position)}")
    return 0.0, 0.0, beta


def guard31_residual(state: AgentState, theta_i: float) -> float:
    return float(theta_i - state.soc)


def locate_event(residual_fn: Callable[[float], float], t_lo: float, t_hi: float,
                 tol: float = TOL_EVENT, max_iter: int = 200) -> float | None:
    """Earliest-bracket zero of a residual that starts nonnegative.

    Uses the Illinois variant of regula falsi with a bisection safeguard.
    Returns a time t with residual(t) ≤ 0 and t - t_true ≤ tol, or None if
    the residual stays positive on the bracket.  ``residual_fn`` is expected
    to interpolate the integrator state (e.g. a partial RK step).
    """
    f_lo = residual_fn(t_lo)
    if f_lo <= 0:
        return t_lo
    f_hi = residual_fn(t_hi)
    if f_hi > 0:
        return None
    a, fa, b, fb = t_lo, f_lo, t_hi, f_hi
    side = 0
    for _ in range(max_iter):
        if b - a <= tol:
            break
        c = (a * fb - b * fa) / (fb - fa)
        # keep the secant point strictly inside and force progress
        width = b - a
        if not (a + 0.01 * width < c < b - 0.01 * width):
            c = 0.5 * (a + b)
        fc = residual_fn(c)
        if fc > 0:
            a, fa = c, fc
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            b, fb = c, fc
            if side == -1:
                fa *= 0.5
            side = -1
    return b


__all__ = [
    "AgentMode", "AgentState", "EventKind", "GuardEvent", "ModeError",
    "mode1_field", "guard12_residual", "mode2_field", "guard23_residual",
    "mode3_field", "guard31_residual", "locate_event", "TOL_EVENT",
]
