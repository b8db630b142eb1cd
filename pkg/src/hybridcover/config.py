"""Simulation configuration: schema, validation and loading.

Configs are YAML (JSON is accepted too, being a YAML subset).  Schema
version 1::

    version: 1
    space: {width: 60, height: 50, grid_resolution: 256, angular_order: 4}
    agents:
      positions: [[2, 2], [4, 4]]
      initial_soc: [0.97, 0.48]     # or "random" together with seed
      delta: 22                      # scalar or one per agent
      theta: 1.0                     # scalar or one per agent
    dynamics: {v_max: 5, alpha: 1.0e-4, beta: 0.01, ascent_smoothing: 0.5}
    run:
      horizon: 5400
      dt: 0.05
      policy: frfs                   # frfs | sdf
      mode23_sensing: true
      ipa: exact                     # exact | exogenous | off
      seed: null
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .coverage import MissionSpace
from .errors import ConfigError
from .ipa import IpaMode
from .scheduler import Policy

SCHEMA_VERSION = 1


class FeasibilityWarning(UserWarning):
    """β < Nαv²: the sufficient condition for never running dry is violated."""


@dataclass(frozen=True)
class SimConfig:
    initial_positions: tuple[tuple[float, float], ...]
    initial_soc: tuple[float, ...]
    delta: tuple[float, ...]
    theta: tuple[float, ...]
    v_max: float = 5.0
    alpha: float = 1e-4
    beta: float = 0.01
    horizon: float = 5400.0
    dt: float = 0.05
    width: float = 60.0
    height: float = 50.0
    grid_resolution: int = 256
    angular_order: int = 4
    ascent_smoothing: float = 0.5
    policy: Policy = Policy.FRFS
    mode23_sensing: bool = True
    ipa: IpaMode = IpaMode.EXACT
    seed: int | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        object.__setattr__(self, "ipa", IpaMode(self.ipa))
        try:
            for name in ("v_max", "alpha", "beta", "horizon", "dt", "width", "height",
                         "ascent_smoothing"):
                object.__setattr__(self, name, float(getattr(self, name)))
            for name in ("grid_resolution", "angular_order"):
                object.__setattr__(self, name, int(getattr(self, name)))
            n = len(self.initial_positions)
            object.__setattr__(self, "initial_positions",
                               tuple((float(x), float(y)) for x, y in self.initial_positions))
            for name in ("initial_soc", "delta", "theta"):
                object.__setattr__(self, name, _per_agent(getattr(self, name), n, name))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration value: {exc}") from None
        validate(self)

    @property
    def n(self) -> int:
        return len(self.initial_positions)

    @property
    def space(self) -> MissionSpace:
        return MissionSpace(self.width, self.height, None, self.grid_resolution,
                            self.angular_order)

    def replace(self, **changes) -> "SimConfig":
        if "theta" in changes:
            changes["theta"] = _per_agent(changes["theta"], self.n, "theta")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": SCHEMA_VERSION,
            "name": self.name,
            "space": {"width": self.width, "height": self.height,
                      "grid_resolution": self.grid_resolution,
                      "angular_order": self.angular_order},
            "agents": {"positions": [list(p) for p in self.initial_positions],
                       "initial_soc": list(self.initial_soc),
                       "delta": list(self.delta),
                       "theta": list(self.theta)},
            "dynamics": {"v_max": self.v_max, "alpha": self.alpha, "beta": self.beta,
                         "ascent_smoothing": self.ascent_smoothing},
            "run": {"horizon": self.horizon, "dt": self.dt, "policy": self.policy.value,
                    "mode23_sensing": self.mode23_sensing, "ipa": self.ipa.value,
                    "seed": self.seed},
        }


def _per_agent(value, n: int, name: str) -> tuple[float, ...]:
    if np.isscalar(value):
        return tuple(float(value) for _ in range(n))
    vals = tuple(float(v) for v in value)
    if len(vals) != n:
        raise ConfigError(f"agents.{name}: expected {n} values, got {len(vals)}")
    return vals


def validate(cfg: SimConfig) -> None:
    n = cfg.n
    if n < 1:
        raise ConfigError("agents.positions: at least one agent required")
    for name in ("initial_soc", "delta", "theta"):
        if len(getattr(cfg, name)) != n:
            raise ConfigError(f"agents.{name}: expected {n} values")
    for name in ("v_max", "alpha", "beta", "dt", "width", "height"):
        val = getattr(cfg, name)
        if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
            raise ConfigError(f"{name} must be a positive number, got {val!r}")
    if not (math.isfinite(cfg.ascent_smoothing) and cfg.ascent_smoothing >= 0):
        raise ConfigError("dynamics.ascent_smoothing must be nonnegative")
    if not (math.isfinite(cfg.horizon) and cfg.horizon >= 0):
        raise ConfigError("run.horizon must be nonnegative")
    for k, (x, y) in enumerate(cfg.initial_positions):
        if not (0 <= x <= cfg.width and 0 <= y <= cfg.height):
            raise ConfigError(f"agents.positions[{k}]: ({x}, {y}) lies outside the mission space")
    for k, d in enumerate(cfg.delta):
        if not d > 0:
            raise ConfigError(f"agents.delta[{k}] must be positive")
    for k, th in enumerate(cfg.theta):
        if not 0 < th <= 1:
            raise ConfigError(f"agents.theta[{k}] must lie in (0, 1]")
    for k, (q, (x, y)) in enumerate(zip(cfg.initial_soc, cfg.initial_positions)):
        if not 0 < q <= 1:
            raise ConfigError(f"agents.initial_soc[{k}] must lie in (0, 1]")
        reserve = cfg.v_max * cfg.alpha * math.hypot(x, y)
        if not q > reserve:
            raise ConfigError(
                f"agents.initial_soc[{k}] = {q} does not exceed the return reserve {reserve:.6g};"
                " every agent must start in coverage mode")
    if cfg.beta < n * cfg.alpha * cfg.v_max ** 2:
        warnings.warn(f"beta = {cfg.beta} < N alpha v^2 = {n * cfg.alpha * cfg.v_max ** 2:.6g};"
                      " feasibility is not guaranteed", FeasibilityWarning, stacklevel=3)
    # also validates the quadrature settings
    MissionSpace(cfg.width, cfg.height, None, cfg.grid_resolution, cfg.angular_order)


def _get(d: dict, key: str, path: str, default=dataclasses.MISSING):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if key in d:
        return d[key]
    if default is dataclasses.MISSING:
        raise ConfigError(f"{path}.{key}: missing required field" if path else f"{key}: missing required field")
    return default


def _num(value, path: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


def config_from_dict(doc: dict[str, Any]) -> SimConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"version: unsupported schema version {version!r}")
    space = doc.get("space", {}) or {}
    agents = _get(doc, "agents", "")
    dyn = doc.get("dynamics", {}) or {}
    run = doc.get("run", {}) or {}

    raw_pos = _get(agents, "positions", "agents")
    try:
        positions = tuple((float(p[0]), float(p[1])) for p in raw_pos)
        if any(len(p) != 2 for p in raw_pos):
            raise ValueError
    except (TypeError, ValueError, IndexError):
        raise ConfigError("agents.positions: expected a list of [x, y] pairs") from None
    n = len(positions)
    v_max = _num(dyn.get("v_max", 5.0), "dynamics.v_max")
    alpha = _num(dyn.get("alpha", 1e-4), "dynamics.alpha")
    seed = run.get("seed")
    raw_soc = _get(agents, "initial_soc", "agents")
    if raw_soc == "random":
        if seed is None:
            raise ConfigError("agents.initial_soc: 'random' requires run.seed")
        rng = np.random.default_rng(int(seed))
        floors = [v_max * alpha * math.hypot(*p) for p in positions]
        soc = tuple(float(f + (1 - f) * (1 - rng.random())) for f in floors)
    else:
        try:
            soc = _per_agent(raw_soc, n, "initial_soc")
        except (TypeError, ValueError):
            raise ConfigError("agents.initial_soc: expected numbers") from None
    try:
        delta = _per_agent(agents.get("delta", 22.0), n, "delta")
        theta = _per_agent(agents.get("theta", 1.0), n, "theta")
    except (TypeError, ValueError):
        raise ConfigError("agents.delta/theta: expected numbers") from None
    try:
        policy = Policy(str(run.get("policy", "frfs")).lower())
    except ValueError:
        raise ConfigError(f"run.policy: expected frfs or sdf, got {run.get('policy')!r}") from None
    try:
        ipa = IpaMode(str(run.get("ipa", "exact")).lower())
    except ValueError:
        raise ConfigError(f"run.ipa: expected exact, exogenous or off, got {run.get('ipa')!r}") from None
    return SimConfig(
        initial_positions=positions, initial_soc=soc, delta=delta, theta=theta,
        v_max=v_max, alpha=alpha, beta=_num(dyn.get("beta", 0.01), "dynamics.beta"),
        ascent_smoothing=_num(dyn.get("ascent_smoothing", 0.5), "dynamics.ascent_smoothing"),
        horizon=_num(run.get("horizon", 5400.0), "run.horizon"),
        dt=_num(run.get("dt", 0.05), "run.dt"),
        width=_num(space.get("width", 60.0), "space.width"),
        height=_num(space.get("height", 50.0), "space.height"),
        grid_resolution=int(space.get("grid_resolution", 256)),
        angular_order=int(space.get("angular_order", 4)),
        policy=policy, mode23_sensing=bool(run.get("mode23_sensing", True)), ipa=ipa,
        seed=None if seed is None else int(seed), name=str(doc.get("name", "")),
    )


def load_config(path) -> SimConfig:
    """Read and validate a YAML/JSON config file.  ``paper_s6`` names the
    bundled configuration."""
    if str(path) in bundled_configs():
        text = resources.files("hybridcover.configs").joinpath(f"{path}.yaml").read_text()
    else:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return config_from_dict(doc)


def bundled_configs() -> list[str]:
    return sorted(f.name[:-5] for f in resources.files("hybridcover.configs").iterdir()
                  if f.name.endswith(".yaml"))


__all__ = ["SimConfig", "FeasibilityWarning", "load_config", "config_from_dict",
           "bundled_configs", "validate", "SCHEMA_VERSION"]

