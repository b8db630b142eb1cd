"""Infinitesimal perturbation analysis of the hybrid coverage system.

Sensitivities of every agent's state with respect to the threshold vector θ
are carried as N x N matrices (row i holds ∂x_i/∂θ etc.).  Between events
they obey linear ODEs; at an endogenous event with time derivative τ' the
state derivative jumps by (f⁻ - f⁺) τ', where f± are the vector fields on
either side.

Two treatments of the to-charging leg are provided:

``exogenous``
    x', y', q' are frozen in Modes 2 and 3 and station-imposed speed
    changes count as exogenous (τ' = 0).  Cheap, but it ignores that the
    frozen direction s(τ₂)/‖s(τ₂)‖ and queue-induced speeds depend on θ.

``exact``
    Carries u' (derivative of the frozen direction) and v' (derivative of
    the assigned speed) and treats speed changes as occurring at the
    requester's switch time.  This is the derivative of the simulated
    trajectory and matches finite differences.

``off`` skips sensitivities altogether (plain simulation).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularEventError

SINGULAR_TOL = 1e-14


class IpaMode(str, enum.Enum):
    EXACT = "exact"
    EXOGENOUS = "exogenous"
    OFF = "off"

    def __str__(self):
        return self.value


@dataclass
class IpaDerivatives:
    """Row i of each matrix is the derivative of agent i's x, y or q w.r.t. θ."""

    x_prime: np.ndarray
    y_prime: np.ndarray
    q_prime: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "IpaDerivatives":
        return cls(np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n)))

    @property
    def n(self) -> int:
        return self.x_prime.shape[0]

    def s_prime(self, i: int) -> np.ndarray:
        """(2, N) derivative of agent i's position."""
        return np.vstack((self.x_prime[i], self.y_prime[i]))

    def copy(self) -> "IpaDerivatives":
        return IpaDerivatives(self.x_prime.copy(), self.y_prime.copy(), self.q_prime.copy())

    def max_abs(self) -> float:
        return float(max(np.abs(self.x_prime).max(initial=0.0),
                         np.abs(self.y_prime).max(initial=0.0),
                         np.abs(self.q_prime).max(initial=0.0)))


def unit(k: int, n: int) -> np.ndarray:
    e = np.zeros(n)
    e[k] = 1.0
    return e


# -- continuous propagation -------------------------------------------------

def mode1_rates(derivs: IpaDerivatives, agent: int, heading_jac: np.ndarray,
                v_max: float) -> tuple[np.ndarray, np.ndarray]:
    """d/dt of x'_i and y'_i for a coverage agent.

    ``heading_jac`` is ∂(cos w_i, sin w_i)/∂s with shape (2, N, 2).
    """
    sx = heading_jac[:, :, 0] @ derivs.x_prime + heading_jac[:, :, 1] @ derivs.y_prime
    return v_max * sx[0], v_max * sx[1]


def propagate_mode1(derivs: IpaDerivatives, agents, heading_jacs, v_max: float,
                    dt: float) -> IpaDerivatives:
    """Advance the Mode-1 rows over dt with the Jacobians held fixed (RK4).

    The simulator integrates these rows together with the state; this
    stand-alone form is for analysis and tests.  q' is untouched.
    """
    out = derivs.copy()
    agents = list(agents)

    def rate(d):
        gx = np.zeros_like(d.x_prime)
        gy = np.zeros_like(d.y_prime)
        for a, jac in zip(agents, heading_jacs):
            gx[a], gy[a] = mode1_rates(d, a, jac, v_max)
        return gx, gy

    def shifted(kx, ky, h):
        return IpaDerivatives(out.x_prime + h * kx, out.y_prime + h * ky, out.q_prime)

    k1 = rate(out)
    k2 = rate(shifted(*k1, dt / 2))
    k3 = rate(shifted(*k2, dt / 2))
    k4 = rate(shifted(*k3, dt))
    out.x_prime = out.x_prime + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    out.y_prime = out.y_prime + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return out


def propagate_mode2_mode3(derivs: IpaDerivatives) -> IpaDerivatives:
    """Under the exogenous treatment sensitivities are constant in Modes 2 and 3."""
    return derivs


# -- event-time derivatives and jumps ----------------------------------------

def jump_guard12(agent: int, position, soc: float, heading_before, v_max: float,
                 v_after: float, alpha: float, derivs: IpaDerivatives,
                 velocity_before=None) -> np.ndarray:
    """Coverage to to-charging switch at the zero of q - vα‖s‖.

    Uses the squared guard q² - v²α²(x² + y²).  The pre-event velocity is
    v·heading_before unless ``velocity_before`` is given.  Mutates
    ``derivs`` to the post-event values and returns τ₂'.
    """
    i = agent
    x, y = float(position[0]), float(position[1])
    v = v_max
    if velocity_before is None:
        fx, fy = v * float(heading_before[0]), v * float(heading_before[1])
    else:
        fx, fy = float(velocity_before[0]), float(velocity_before[1])
    num = soc * derivs.q_prime[i] - v * v * alpha * alpha * (x * derivs.x_prime[i] + y * derivs.y_prime[i])
    den = alpha * v * v * soc + v * v * alpha * alpha * (x * fx + y * fy)
    if abs(den) <= SINGULAR_TOL * max(1.0, abs(alpha * v * v * soc)):
        raise SingularEventError(f"Guard12 of agent {i}: vanishing denominator")
    tau = num / den
    r = math.hypot(x, y)
    hx, hy = (x / r, y / r) if r > 0 else (0.0, 0.0)
    # post-event direction of motion is -frozen heading
    derivs.x_prime[i] += (fx + v_after * hx) * tau
    derivs.y_prime[i] += (fy + v_after * hy) * tau
    derivs.q_prime[i] += alpha * (v_after ** 2 - v ** 2) * tau
    return tau


def jump_guard23(agent: int, frozen_heading, speed: float, alpha: float, beta: float,
                 derivs: IpaDerivatives) -> np.ndarray:
    """Arrival at the station.  τ₃' from the polar limit of the ‖s‖ guard.

    With (cos w, sin w) = -frozen_heading the direction of travel,
    τ₃' = -(cos w x' + sin w y') / v.  Mutates ``derivs``; returns τ₃'.
    """
    if not speed > 0:
        raise ValueError("arrival speed must be positive")
    i = agent
    c, s = -float(frozen_heading[0]), -float(frozen_heading[1])
    tau = -(c * derivs.x_prime[i] + s * derivs.y_prime[i]) / speed
    derivs.x_prime[i] += speed * c * tau
    derivs.y_prime[i] += speed * s * tau
    derivs.q_prime[i] -= (alpha * speed ** 2 + beta) * tau
    return tau


def jump_guard31(agent: int, heading_after, v_max: float, alpha: float, beta: float,
                 derivs: IpaDerivatives, tau3_prime=None, zero_dwell: bool = False,
                 velocity_after=None) -> np.ndarray:
    """Departure once q reaches θ_i.  τ₁' = (e_i - q'_i)/β, or τ₃' with no dwell.

    The post-event velocity is v·heading_after unless ``velocity_after`` is given.
    """
    i = agent
    n = derivs.n
    if zero_dwell:
        tau = np.asarray(tau3_prime, dtype=float).copy()
    else:
        tau = (unit(i, n) - derivs.q_prime[i]) / beta
    if velocity_after is None:
        fx, fy = v_max * float(heading_after[0]), v_max * float(heading_after[1])
    else:
        fx, fy = float(velocity_after[0]), float(velocity_after[1])
    derivs.x_prime[i] -= fx * tau
    derivs.y_prime[i] -= fy * tau
    derivs.q_prime[i] += (beta + alpha * v_max ** 2) * tau
    return tau


def jump_speed_change(agent: int, frozen_heading, v_before: float, v_after: float,
                      alpha: float, tau_prime, derivs: IpaDerivatives) -> None:
    """Jump at a station-imposed speed change occurring at a time with
    derivative ``tau_prime`` (zero for the exogenous treatment)."""
    i = agent
    tau = np.asarray(tau_prime, dtype=float)
    hx, hy = float(frozen_heading[0]), float(frozen_heading[1])
    derivs.x_prime[i] += (v_after - v_before) * hx * tau
    derivs.y_prime[i] += (v_after - v_before) * hy * tau
    derivs.q_prime[i] += alpha * (v_after ** 2 - v_before ** 2) * tau


# -- exact-treatment helpers -------------------------------------------------

def frozen_heading_prime(position, s_prime_total) -> np.ndarray:
    """Derivative (2, N) of P/‖P‖ given P' (2, N)."""
    p = np.asarray(position, dtype=float)
    r = float(np.hypot(p[0], p[1]))
    u = p / r
    return (np.eye(2) - np.outer(u, u)) @ s_prime_total / r


def chained_speed_prime(distance: float, distance_prime, t_free: float, t_free_prime,
                        now: float, now_prime) -> np.ndarray:
    """Derivative of v = r / (F - t) given r', F' and t'."""
    gap = t_free - now
    return (np.asarray(distance_prime) * gap
            - distance * (np.asarray(t_free_prime) - np.asarray(now_prime))) / gap ** 2


def en_route_finish_prime(agent: int, distance: float, frozen_heading, speed: float,
                          speed_prime, soc: float, theta: float, alpha: float, beta: float,
                          derivs: IpaDerivatives) -> np.ndarray:
    """Derivative of the predicted finish of a to-charging agent.

    Arrival A = t + r/v and arrival charge Q = q - αvr; the finish is
    A + max(0, θ - Q)/β.  All terms in t' cancel, so only the agent's own
    sensitivities at the current time enter.
    """
    i = agent
    n = derivs.n
    u = np.asarray(frozen_heading, dtype=float)
    r_prime = u[0] * derivs.x_prime[i] + u[1] * derivs.y_prime[i]
    vp = np.asarray(speed_prime, dtype=float)
    a_prime = r_prime / speed - distance * vp / speed ** 2
    q_arr = soc - alpha * speed * distance
    if theta > q_arr:
        q_arr_prime = derivs.q_prime[i] - alpha * (vp * distance + speed * r_prime)
        return a_prime + (unit(i, n) - q_arr_prime) / beta
    return a_prime


def charging_finish_prime(agent: int, derivs: IpaDerivatives, beta: float) -> np.ndarray:
    """Derivative of the finish time of the agent currently charging."""
    return (unit(agent, derivs.n) - derivs.q_prime[agent]) / beta


# -- objective gradient ------------------------------------------------------

@dataclass
class GradientAccumulator:
    dJ_dtheta: np.ndarray
    interval: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "GradientAccumulator":
        return cls(np.zeros(n))


def accumulate_gradient(acc: GradientAccumulator, gradients_h: np.ndarray,
                        derivs: IpaDerivatives, dt: float) -> GradientAccumulator:
    """Add dt · Σ_i (∂H/∂x_i x'_i + ∂H/∂y_i y'_i) (rectangle rule).

    Event boundary terms cancel because H(s(t)) is continuous in t.
    """
    g = np.asarray(gradients_h, dtype=float)
    inc = dt * (g[:, 0] @ derivs.x_prime + g[:, 1] @ derivs.y_prime)
    acc.dJ_dtheta = acc.dJ_dtheta + inc
    acc.interval += dt
    return acc


__all__ = [
    "IpaMode", "IpaDerivatives", "GradientAccumulator", "mode1_rates",
    "propagate_mode1", "propagate_mode2_mode3", "jump_guard12", "jump_guard23",
    "jump_guard31", "jump_speed_change", "frozen_heading_prime",
    "chained_speed_prime", "en_route_finish_prime", "charging_finish_prime",
    "accumulate_gradient", "unit",
]
