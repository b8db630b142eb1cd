"""Projected gradient ascent on the recharge thresholds θ using IPA gradients.

The default step rule is λₙ = 1 / (‖g_n‖ n^{3/2}) with n starting at 1, so
the first step has unit length along the gradient direction.  Iterates are
clamped to [theta_floor, 1].
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SimConfig
from .errors import ConfigError, EvaluationError, HybridCoverError
from .ipa import IpaMode
from .simulation import RunRecord, run_simulation

log = logging.getLogger(__name__)

ASCENT_TOL = 1e-6


@dataclass(frozen=True)
class AscentConfig:
    """Settings of the ascent loop.

    ``step_rule`` is ``"normalized"`` for the decaying normalised step or a
    positive float for a fixed λ.  With ``shared`` set, one scalar θ drives
    every agent and its gradient is the sum of the per-agent components.
    """

    theta0: tuple[float, ...] | float = 0.5
    max_iters: int = 50
    step_rule: str | float = "normalized"
    theta_floor: float = 0.05
    convergence_tol: float = 1e-4
    shared: bool = True

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if not 0 < self.theta_floor < 1:
            raise ConfigError("theta_floor must lie in (0, 1)")
        if np.any(th <= self.theta_floor) or np.any(th > 1):
            raise ConfigError(f"theta0 components must lie in ({self.theta_floor}, 1]")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not self.convergence_tol > 0:
            raise ConfigError("convergence_tol must be positive")
        if isinstance(self.step_rule, str):
            if self.step_rule != "normalized":
                raise ConfigError(f"unknown step rule {self.step_rule!r}")
        elif not float(self.step_rule) > 0:
            raise ConfigError("a fixed step must be positive")

    def initial_theta(self, n: int) -> np.ndarray:
        th = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if th.size == 1:
            return np.full(n, float(th[0]))
        if th.size != n:
            raise ConfigError(f"theta0 has {th.size} components, expected {n}")
        if self.shared and np.ptp(th) > 0:
            raise ConfigError("shared ascent needs equal theta0 components")
        return th.copy()


@dataclass
class IterationRecord:
    n: int
    theta: np.ndarray
    J: float
    dJ_dtheta: np.ndarray
    step: float = 0.0
    converged: bool = False
    record: RunRecord | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"n": self.n, "theta": [float(v) for v in self.theta], "J": float(self.J),
                "dJ_dtheta": [float(v) for v in self.dJ_dtheta], "step": float(self.step),
                "converged": self.converged}


def evaluate(theta, sim_config: SimConfig) -> tuple[float, np.ndarray, RunRecord]:
    """Time-averaged objective and its IPA gradient at θ."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta > 1):
        raise ConfigError("theta must lie in (0, 1]")
    cfg = sim_config if sim_config.ipa is not IpaMode.OFF else sim_config.replace(ipa="exact")
    try:
        rec = run_simulation(cfg, theta=theta)
    except HybridCoverError as exc:
        raise EvaluationError(f"simulation failed at theta={theta.tolist()}: {exc}",
                              theta=theta, cause=exc) from exc
    if not math.isfinite(rec.J_mean):
        raise EvaluationError(f"non-finite objective at theta={theta.tolist()}", theta=theta)
    return rec.J_mean, rec.dJ_dtheta, rec


def _effective(theta, grad, floor):
    """Gradient with components pushing against an active bound zeroed."""
    g = np.array(grad, dtype=float)
    g[(theta >= 1.0) & (g > 0)] = 0.0
    g[(theta <= floor) & (g < 0)] = 0.0
    return g


def update_theta(theta_n, grad, n: int, config: AscentConfig) -> tuple[np.ndarray, bool]:
    """One projected step; returns (θ_{n+1}, converged)."""
    if n < 1:
        raise ValueError("iteration index starts at 1")
    theta_n = np.asarray(theta_n, dtype=float)
    grad = np.asarray(grad, dtype=float)
    norm = float(np.linalg.norm(grad))
    if norm == 0.0 or not np.any(_effective(theta_n, grad, config.theta_floor)):
        return theta_n.copy(), True
    if config.step_rule == "normalized":
        lam = 1.0 / (norm * n ** 1.5)
    else:
        lam = float(config.step_rule)
    nxt = np.clip(theta_n + lam * grad, config.theta_floor, 1.0)
    return nxt, bool(np.max(np.abs(nxt - theta_n)) < config.convergence_tol)


def optimize(sim_config: SimConfig, ascent: AscentConfig | None = None,
             callback=None) -> list[IterationRecord]:
    """Run the ascent; one record per evaluated iterate."""
    ascent = ascent or AscentConfig()
    n_agents = sim_config.n
    theta = ascent.initial_theta(n_agents)
    records: list[IterationRecord] = []
    for it in range(1, ascent.max_iters + 1):
        J, grad, rec = evaluate(theta, sim_config)
        if ascent.shared:
            g_scalar = float(grad.sum())
            step_grad = np.array([g_scalar])
            nxt, done = update_theta(theta[:1], step_grad, it, ascent)
            nxt = np.full(n_agents, nxt[0])
        else:
            nxt, done = update_theta(theta, grad, it, ascent)
        item = IterationRecord(it, theta.copy(), J, grad.copy(),
                               float(np.max(np.abs(nxt - theta))), done, rec)
        records.append(item)
        log.info("iteration %d: theta=%s J=%.6g |dJ|=%.3g", it, theta, J,
                 float(np.linalg.norm(grad)))
        if callback is not None:
            callback(item)
        if done:
            break
        theta = nxt
    if records[-1].J < records[0].J - ASCENT_TOL:
        warnings.warn(f"objective decreased from {records[0].J:.6g} to {records[-1].J:.6g};"
                      " the step rule overshot", RuntimeWarning, stacklevel=2)
    return records


def write_iterations_json(records: list[IterationRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in records], indent=2) + "\n")
    return path


def write_iterations_csv(records: list[IterationRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(records[0].theta) if records else 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n"] + [f"theta_{i}" for i in range(n)] + ["J"]
                   + [f"dJ_dtheta_{i}" for i in range(n)])
        for r in records:
            w.writerow([r.n] + [repr(float(v)) for v in r.theta] + [repr(float(r.J))]
                       + [repr(float(v)) for v in r.dJ_dtheta])
    return path


__all__ = ["AscentConfig", "IterationRecord", "evaluate", "update_theta", "optimize",
           "write_iterations_json", "write_iterations_csv"]
