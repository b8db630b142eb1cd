"""Coverage metric H(s), its gradient and second derivatives.

H(s) = ∬_Ω R(x, y) P(x, y, s) dx dy with the joint detection probability
P = 1 - ∏_i (1 - p_i) and the quadratic sensing function
p_i = 1 - d_i² / δ_i² inside the sensing disc, zero outside.

The default route integrates each sensing disc clipped to Ω in polar
coordinates (see ``_quadrature``).  A uniform midpoint grid over Ω is
available as ``method="grid"`` and serves as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable

import numpy as np

from . import _quadrature as _q
from .errors import ConfigError

EPS_GRAD = 1e-9
_REWARD_TABLE_NODES = 257


@dataclass(frozen=True)
class MissionSpace:
    """Rectangle [0, x_extent] x [0, y_extent] with a reward density.

    ``grid_resolution`` is the cell count along x for the uniform-grid route;
    y uses square cells.  ``angular_order`` is the Gauss-Legendre order per
    angular piece of the polar route.
    """

    x_extent: float = 60.0
    y_extent: float = 50.0
    reward: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    grid_resolution: int = 256
    angular_order: int = 6

    def __post_init__(self):
        if not (self.x_extent > 0 and self.y_extent > 0):
            raise ConfigError("mission space extents must be positive")
        if self.grid_resolution < 16:
            raise ConfigError("grid_resolution must be at least 16")
        if not 2 <= self.angular_order <= 40:
            raise ConfigError("angular_order must lie in [2, 40]")

    @property
    def grid_shape(self) -> tuple[int, int]:
        nx = int(self.grid_resolution)
        ny = max(16, int(math.ceil(nx * self.y_extent / self.x_extent)))
        return nx, ny

    @cached_property
    def reward_table(self) -> np.ndarray:
        """Node-centred samples of R for bilinear lookup; empty means R = 1."""
        if self.reward is None:
            return np.zeros((0, 0))
        xs = np.linspace(0.0, self.x_extent, _REWARD_TABLE_NODES)
        ys = np.linspace(0.0, self.y_extent, _REWARD_TABLE_NODES)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        table = np.asarray(self.reward(gx, gy), dtype=float) * np.ones_like(gx)
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise ConfigError("reward must be finite and nonnegative")
        return np.ascontiguousarray(table)

    @cached_property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        t, w = np.polynomial.legendre.leggauss(self.angular_order)
        return (t + 1.0) / 2.0, w / 2.0

    def contains(self, x: float, y: float, tol: float = 0.0) -> bool:
        return -tol <= x <= self.x_extent + tol and -tol <= y <= self.y_extent + tol


@dataclass(frozen=True)
class SensorModel:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("sensing radius must be positive")

    def probability(self, point, agent):
        return sensing_probability(point, agent, self.delta)


@dataclass(frozen=True)
class FieldEvaluation:
    value: float
    gradient: np.ndarray  # (N, 2)
    hessian: np.ndarray = dc_field(repr=False)  # (N, 2, N, 2), zeros if not requested


def _radial_nodes(n_agents: int):
    t, w = np.polynomial.legendre.leggauss(max(n_agents, 1) + 1)
    return (t + 1.0) / 2.0, w / 2.0


_RADIAL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def radial_nodes(n_agents: int):
    """Radial rule with N + 1 points: exact for the degree-2N polynomial
    the product of N quadratic factors times r produces on each piece."""
    if n_agents not in _RADIAL_CACHE:
        _RADIAL_CACHE[n_agents] = _radial_nodes(n_agents)
    return _RADIAL_CACHE[n_agents]


def as_deltas(sensors, n: int) -> np.ndarray:
    """Normalise sensors (SensorModels, radii, or one scalar) to an (n,) array."""
    if np.isscalar(sensors):
        deltas = np.full(n, float(sensors))
    else:
        deltas = np.array([s.delta if isinstance(s, SensorModel) else float(s)
                           for s in sensors], dtype=float)
        if deltas.shape[0] != n:
            raise ConfigError(f"{n} positions but {deltas.shape[0]} sensors")
    if np.any(deltas <= 0):
        raise ConfigError("sensing radius must be positive")
    return deltas


def as_positions(positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=float)
    if pos.size == 0:
        return np.zeros((0, 2))
    pos = np.ascontiguousarray(pos.reshape(-1, 2))
    return pos


def sensing_probability(point, agent, delta):
    """p = 1 - d²/δ² for d < δ, else 0.  Broadcasts over array inputs."""
    if not np.all(np.asarray(delta) > 0):
        raise ConfigError("sensing radius must be positive")
    point = np.asarray(point, dtype=float)
    agent = np.asarray(agent, dtype=float)
    d2 = np.sum((point - agent) ** 2, axis=-1)
    p = np.where(d2 < np.square(delta), 1.0 - d2 / np.square(delta), 0.0)
    return float(p) if p.ndim == 0 else p


def joint_detection(point, positions, sensors):
    """P = 1 - ∏(1 - p_i) at ``point`` (shape (2,) or (..., 2))."""
    pos = as_positions(positions)
    deltas = as_deltas(sensors, pos.shape[0])
    point = np.asarray(point, dtype=float)
    miss = np.ones(point.shape[:-1])
    for (ax, ay), d in zip(pos, deltas):
        miss = miss * (1.0 - sensing_probability(point, (ax, ay), d))
    out = 1.0 - miss
    return float(out) if np.ndim(out) == 0 else out


def evaluate_field(positions, space: MissionSpace, sensors, active=None,
                   hessian: bool = True) -> FieldEvaluation:
    """H, all gradients and (optionally) all second-derivative blocks at once.

    ``active`` masks agents that do not sense; their discs are ignored and
    their gradient rows are zero.
    """
    pos = as_positions(positions)
    n = pos.shape[0]
    deltas = as_deltas(sensors, n)
    act = np.ones(n, dtype=np.bool_) if active is None else np.asarray(active, dtype=np.bool_)
    if act.shape != (n,):
        raise ValueError(f"active mask must have shape ({n},), got {act.shape}")
    if n == 0:
        return FieldEvaluation(0.0, np.zeros((0, 2)), np.zeros((0, 2, 0, 2)))
    at, aw = space.nodes
    rt, rw = radial_nodes(n)
    h, g, hs = _q.field(pos, deltas, act, float(space.x_extent), float(space.y_extent),
                        space.reward_table, at, aw, rt, rw, hessian)
    return FieldEvaluation(float(h), g, hs)


def coverage_value(positions, space: MissionSpace, sensors, method: str = "polar") -> float:
    pos = as_positions(positions)
    n = pos.shape[0]
    if n == 0:
        return 0.0
    if method == "polar":
        return evaluate_field(pos, space, sensors, hessian=False).value
    if method == "grid":
        deltas = as_deltas(sensors, n)
        nx, ny = space.grid_shape
        return float(_q.grid_coverage(pos, deltas, np.ones(n, dtype=np.bool_),
                                      float(space.x_extent), float(space.y_extent),
                                      nx, ny, space.reward_table))
    raise ValueError(f"unknown quadrature method {method!r}")


def coverage_gradient(agent_index: int, positions, space: MissionSpace, sensors) -> tuple[float, float]:
    ev = evaluate_field(positions, space, sensors, hessian=False)
    gx, gy = ev.gradient[agent_index]
    return float(gx), float(gy)


def heading_from_gradient(grad, previous_heading) -> tuple[float, float]:
    """Unit vector along ``grad``; falls back to ``previous_heading`` (an angle,
    or a unit vector) when the gradient norm is below ``EPS_GRAD``."""
    gx, gy = float(grad[0]), float(grad[1])
    norm = math.hypot(gx, gy)
    if norm >= EPS_GRAD:
        return gx / norm, gy / norm
    if np.ndim(previous_heading) == 0:
        a = float(previous_heading)
        return math.cos(a), math.sin(a)
    c, s = float(previous_heading[0]), float(previous_heading[1])
    r = math.hypot(c, s)
    return c / r, s / r


def ascent_velocity(grad, v_max: float, smoothing: float = 0.0,
                    previous_heading=(1.0, 0.0)) -> tuple[float, float]:
    """Coverage-mode velocity v g / sqrt(|g|² + ε²).

    With ε = 0 this is v times the unit heading (with the zero-gradient
    fallback); ε > 0 slows the agent inside a small neighbourhood of a
    maximum of H so that it comes to rest there instead of oscillating.
    """
    if smoothing <= 0:
        c, s = heading_from_gradient(grad, previous_heading)
        return v_max * c, v_max * s
    gx, gy = float(grad[0]), float(grad[1])
    den = math.sqrt(gx * gx + gy * gy + smoothing * smoothing)
    return v_max * gx / den, v_max * gy / den


def second_derivatives(agent_index: int, positions, space: MissionSpace, sensors) -> np.ndarray:
    """Array B of shape (2, N, 2) with B[a, j, b] = ∂²H / ∂(s_i)_a ∂(s_j)_b.

    Blocks for agents whose discs do not overlap agent i's are exactly zero.
    """
    ev = evaluate_field(positions, space, sensors, hessian=True)
    return ev.hessian[agent_index].copy()


def heading_jacobian(grad_i, hess_row_i) -> np.ndarray:
    """∂(cos w_i, sin w_i)/∂s as a (2, N, 2) array.

    For u = g/|g|, du = (I - u uᵀ) dg / |g|; zero below ``EPS_GRAD`` where
    the heading is held fixed.
    """
    g = np.asarray(grad_i, dtype=float)
    norm = float(np.hypot(g[0], g[1]))
    hess_row_i = np.asarray(hess_row_i, dtype=float)
    if norm < EPS_GRAD:
        return np.zeros_like(hess_row_i)
    u = g / norm
    proj = (np.eye(2) - np.outer(u, u)) / norm
    return np.einsum("ab,bjc->ajc", proj, hess_row_i)


def neighbours(agent_index: int, positions, sensors) -> list[int]:
    """Agents whose sensing discs overlap agent ``agent_index``'s."""
    pos = as_positions(positions)
    deltas = as_deltas(sensors, pos.shape[0])
    d = np.hypot(*(pos - pos[agent_index]).T)
    return [j for j in range(pos.shape[0])
            if j != agent_index and d[j] < deltas[j] + deltas[agent_index]]


def total_reward(space: MissionSpace) -> float:
    if space.reward is None:
        return space.x_extent * space.y_extent
    t = space.reward_table
    wx = np.full(t.shape[0], space.x_extent / (t.shape[0] - 1))
    wy = np.full(t.shape[1], space.y_extent / (t.shape[1] - 1))
    wx[[0, -1]] /= 2
    wy[[0, -1]] /= 2
    return float(wx @ t @ wy)


__all__ = [
    "EPS_GRAD", "MissionSpace", "SensorModel", "FieldEvaluation",
    "sensing_probability", "joint_detection", "coverage_value",
    "coverage_gradient", "heading_from_gradient", "second_derivatives",
    "heading_jacobian", "ascent_velocity", "evaluate_field", "neighbours", "total_reward",
    "as_deltas", "as_positions", "radial_nodes",
]
