"""Event-driven simulation of the agents, the station and the sensitivities.

Time advances on the fixed grid k·dt with classical RK4.  A step is cut
short at the next scheduled arrival or charging finish (both known exactly
in advance) and at any coverage-to-charging guard crossing, which is
localised by regula falsi on partial RK4 steps.  The sensitivity matrices,
J = ∫H dt and dJ/dθ ride along in the same RK4 update.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _dynamics as dyn
from .agent import AgentMode, EventKind, GuardEvent, TOL_EVENT, locate_event
from .config import SimConfig
from .coverage import ascent_velocity, heading_from_gradient, radial_nodes
from .errors import InfeasibleError
from .ipa import (IpaDerivatives, IpaMode, charging_finish_prime, chained_speed_prime,
                  en_route_finish_prime, frozen_heading_prime, jump_guard12,
                  jump_guard23, jump_guard31, jump_speed_change)
from .scheduler import ChargingRequest, ChargingStation

log = logging.getLogger(__name__)

TOL_TIME = 1e-9
TOL_Q = 1e-6
TOL_POS = 1e-3
DIVERGENCE_BOUND = 1e6

_PRIORITY = {EventKind.GUARD31: 0, EventKind.GUARD23: 1, EventKind.GUARD12: 2}


@dataclass
class RunRecord:
    """Outcome of one simulation over [0, T].

    ``states`` has shape (rows, N, 5) with columns x, y, q, mode, speed.
    Rows are the grid times 0, dt, ..., T followed, in time order, by one
    post-event row per logged event.  ``running_J`` holds ∫₀ᵗ H for each row.
    """

    config: SimConfig
    times: np.ndarray
    states: np.ndarray
    events: list[GuardEvent]
    J_total: float
    dJ_dtheta_total: np.ndarray
    tau_primes: list[np.ndarray | None] = field(default_factory=list, repr=False)
    charging_intervals: list[tuple[int, float, float]] = field(default_factory=list)
    max_sensitivity: float = 0.0
    running_J: np.ndarray | None = field(default=None, repr=False)

    @property
    def horizon(self) -> float:
        return self.config.horizon

    @property
    def J_mean(self) -> float:
        return self.J_total / self.horizon if self.horizon > 0 else 0.0

    @property
    def dJ_dtheta(self) -> np.ndarray:
        """Gradient of the time-averaged objective."""
        if self.horizon <= 0:
            return np.zeros_like(self.dJ_dtheta_total)
        return self.dJ_dtheta_total / self.horizon

    @property
    def event_signature(self) -> tuple[tuple[str, int], ...]:
        return tuple((e.kind.value, e.agent) for e in self.events)


class Simulation:
    """One run of the hybrid system for a fixed θ (taken from the config)."""

    def __init__(self, config: SimConfig, theta=None):
        if theta is not None:
            config = config.replace(theta=theta)
        self.cfg = config
        n = self.n = config.n
        self.theta = np.array(config.theta, dtype=float)
        self.exact = config.ipa is IpaMode.EXACT
        self.ipa_on = config.ipa is not IpaMode.OFF
        space = config.space
        self.ang_t, self.ang_w = space.nodes
        self.rad_t, self.rad_w = radial_nodes(n)
        self.reward = space.reward_table
        self.delta = np.array(config.delta, dtype=float)
        self.par = np.array([config.v_max, config.alpha, config.beta, config.width,
                             config.height, config.ascent_smoothing], dtype=float)
        self.o_q, self.o_xp, self.o_yp, self.o_qp, self.o_j, self.o_dj = dyn.offsets(n)

        self.y = np.zeros(dyn.state_size(n))
        self.y[:2 * n] = np.asarray(config.initial_positions, dtype=float).ravel()
        self.y[self.o_q:self.o_q + n] = config.initial_soc
        self.mode = np.full(n, dyn.COVERAGE, dtype=np.int64)
        self.speed = np.full(n, config.v_max)
        self.heading = np.tile([1.0, 0.0], (n, 1))
        self.home = np.zeros((n, 2))
        self.home_p = np.zeros((n, 2, n))
        self.speed_p = np.zeros((n, n))
        self.tau3_prime = np.zeros((n, n))
        self.arrival_time = np.full(n, math.inf)
        self.finish_time = np.full(n, math.inf)
        self.zero_dwell = np.zeros(n, dtype=bool)
        self.station = ChargingStation(config.policy, config.v_max, config.alpha,
                                       config.beta, self.theta)
        self.t = 0.0
        self.events: list[GuardEvent] = []
        self.tau_primes: list[np.ndarray | None] = []
        self.grid_rows: list[tuple[float, np.ndarray, float]] = []
        self.event_rows: list[tuple[float, np.ndarray, float]] = []
        self.max_sens = 0.0
        self._live = False
        # initial headings follow the gradient where it is defined
        _, grad, _ = self._field(hessian=False)
        for i in range(n):
            self.heading[i] = heading_from_gradient(grad[i], self.heading[i])

    # -- views -----------------------------------------------------------
    @property
    def pos(self) -> np.ndarray:
        return self.y[:2 * self.n].reshape(self.n, 2)

    @property
    def q(self) -> np.ndarray:
        return self.y[self.o_q:self.o_q + self.n]

    @property
    def derivs(self) -> IpaDerivatives:
        n = self.n
        return IpaDerivatives(self.y[self.o_xp:self.o_yp].reshape(n, n),
                              self.y[self.o_yp:self.o_qp].reshape(n, n),
                              self.y[self.o_qp:self.o_j].reshape(n, n))

    def snapshot(self) -> np.ndarray:
        out = np.empty((self.n, 5))
        out[:, :2] = self.pos
        out[:, 2] = self.q
        out[:, 3] = self.mode
        out[:, 4] = np.where(self.mode == dyn.IN_CHARGING, 0.0, self.speed)
        return out

    # -- numerics --------------------------------------------------------
    def _sens_live(self) -> bool:
        """False while every sensitivity is still zero (nothing to propagate)."""
        if not self.ipa_on:
            return False
        if self._live:
            return True
        self._live = bool(np.any(self.y[self.o_xp:self.o_j]) or np.any(self.speed_p)
                          or np.any(self.home_p))
        return self._live

    def _step(self, y, h, heading, want_sens=True):
        want_sens = want_sens and self._sens_live()
        return dyn.rk4_step(y, h, self.n, self.mode, self.speed, heading, self.home,
                            self.home_p, self.speed_p, self.par, self.delta,
                            self.cfg.mode23_sensing, self.exact, want_sens, self.ang_t,
                            self.ang_w, self.rad_t, self.rad_w, self.reward)

    def _field(self, hessian=False):
        return dyn.field_at(self.y, self.n, self.mode, self.delta, self.par,
                            self.cfg.mode23_sensing, self.ang_t, self.ang_w, self.rad_t,
                            self.rad_w, self.reward, hessian)

    def _velocity(self, i, grad_i):
        """Coverage-mode velocity of agent i at the current state."""
        vx, vy = ascent_velocity(grad_i, self.cfg.v_max, self.cfg.ascent_smoothing,
                                 self.heading[i])
        x, y = self.pos[i]
        if (x <= 0 and vx < 0) or (x >= self.cfg.width and vx > 0):
            vx = 0.0
        if (y <= 0 and vy < 0) or (y >= self.cfg.height and vy > 0):
            vy = 0.0
        return vx, vy

    def _residual12(self, y, i):
        x, yy = y[2 * i], y[2 * i + 1]
        return y[self.o_q + i] - self.cfg.v_max * self.cfg.alpha * math.hypot(x, yy)

    def _next_scheduled(self) -> float:
        t = math.inf
        for i in range(self.n):
            if self.mode[i] == dyn.TO_CHARGING:
                t = min(t, self.arrival_time[i])
            elif self.mode[i] == dyn.IN_CHARGING:
                t = min(t, self.finish_time[i])
        return t

    # -- main loop -------------------------------------------------------
    def run(self) -> RunRecord:
        cfg = self.cfg
        T, dt = cfg.horizon, cfg.dt
        if T <= 0:
            return self._record(empty=True)
        n_grid = max(1, math.ceil(T / dt - 1e-9))
        k = 0
        self.grid_rows.append((0.0, self.snapshot(), 0.0))
        while self.t < T:
            t_grid = min((k + 1) * dt, T)
            t_sched = self._next_scheduled()
            if t_sched <= self.t + TOL_TIME:
                self._process_events(set())
                continue
            t_end = min(t_grid, t_sched)
            h = t_end - self.t
            trial_heading = self.heading.copy()
            y1 = self._step(self.y, h, trial_heading)
            crossing = [i for i in range(self.n)
                        if self.mode[i] == dyn.COVERAGE and self._residual12(y1, i) <= 0]
            if crossing:
                tau = min(self._locate(i, h) for i in crossing)
                self.y = self._step(self.y, tau, self.heading)
                self.t += tau
                self._after_step()
                forced = {i for i in crossing
                          if self._residual12(self.y, i) <= 0}
                if not forced:
                    forced = {min(crossing, key=lambda i: self._residual12(self.y, i))}
                self._process_events(forced)
                continue
            self.y = y1
            self.heading = trial_heading
            self.t = t_end
            self._after_step()
            if t_end == t_grid:
                k += 1
                self.grid_rows.append((t_grid, self.snapshot(), float(self.y[self.o_j])))
            if self._next_scheduled() <= self.t + TOL_TIME:
                self._process_events(set())
        if k < n_grid:  # T reached exactly on an event before the last grid row
            self.grid_rows.append((T, self.snapshot(), float(self.y[self.o_j])))
        self._log(EventKind.HORIZON, T, -1, None)
        return self._record()

    def _locate(self, i: int, h: float) -> float:
        y0 = self.y

        def residual(s):
            if s <= 0:
                return self._residual12(y0, i)
            return self._residual12(self._step(y0, s, self.heading.copy(), False), i)

        s = locate_event(residual, 0.0, h, tol=TOL_EVENT)
        return h if s is None else s

    def _after_step(self):
        pos = self.pos
        np.clip(pos[:, 0], 0.0, self.cfg.width, out=pos[:, 0])
        np.clip(pos[:, 1], 0.0, self.cfg.height, out=pos[:, 1])
        q = self.q
        for i in range(self.n):
            if q[i] < -TOL_Q and math.hypot(*pos[i]) > TOL_POS:
                raise InfeasibleError(
                    f"agent {i} ran out of charge at t={self.t:.6f}, position "
                    f"({pos[i, 0]:.4f}, {pos[i, 1]:.4f})", agent=i, time=self.t,
                    trajectory=self._record())
        m = float(np.abs(self.y[self.o_xp:self.o_j]).max(initial=0.0))
        if m > self.max_sens:
            if m > DIVERGENCE_BOUND >= self.max_sens:
                warnings.warn(f"sensitivities exceed {DIVERGENCE_BOUND:g} at t={self.t:.3f}",
                              RuntimeWarning, stacklevel=2)
            self.max_sens = m

    # -- events ----------------------------------------------------------
    def _process_events(self, forced: set[int]):
        while True:
            due = []
            for i in range(self.n):
                m = self.mode[i]
                if m == dyn.IN_CHARGING and self.finish_time[i] <= self.t + TOL_TIME:
                    due.append((_PRIORITY[EventKind.GUARD31], i, EventKind.GUARD31))
                elif m == dyn.TO_CHARGING and self.arrival_time[i] <= self.t + TOL_TIME:
                    due.append((_PRIORITY[EventKind.GUARD23], i, EventKind.GUARD23))
                elif m == dyn.COVERAGE and (i in forced or self._residual12(self.y, i) <= 0):
                    due.append((_PRIORITY[EventKind.GUARD12], i, EventKind.GUARD12))
            if not due:
                return
            _, i, kind = min(due)
            forced.discard(i)
            if kind is EventKind.GUARD31:
                self._guard31(i)
            elif kind is EventKind.GUARD23:
                self._guard23(i)
            else:
                self._guard12(i)

    def _log(self, kind, t, agent, tau_prime):
        self.events.append(GuardEvent(kind, t, agent))
        self.tau_primes.append(None if tau_prime is None else np.array(tau_prime))
        self.event_rows.append((t, self.snapshot(), float(self.y[self.o_j])))

    def _finish_prime(self, p: int) -> np.ndarray:
        d = self.derivs
        if self.mode[p] == dyn.IN_CHARGING:
            return charging_finish_prime(p, d, self.cfg.beta)
        return en_route_finish_prime(p, math.hypot(*self.pos[p]), self.home[p], self.speed[p],
                                     self.speed_p[p], self.q[p], self.theta[p],
                                     self.cfg.alpha, self.cfg.beta, d)

    def _guard12(self, i: int):
        cfg = self.cfg
        t = self.t
        _, grad, _ = self._field(hessian=False)
        before = heading_from_gradient(grad[i], self.heading[i])
        f1 = np.array(self._velocity(i, grad[i]))
        p = self.pos[i].copy()
        r = math.hypot(*p)
        q = float(self.q[i])
        res = self.station.request(ChargingRequest(i, t, r, q))
        v_after = res.speed
        d = self.derivs
        s_minus = d.s_prime(i)
        tau2 = None
        if self.ipa_on:
            tau2 = jump_guard12(i, p, q, before, cfg.v_max, v_after, cfg.alpha, d,
                                velocity_before=f1)
        self.mode[i] = dyn.TO_CHARGING
        self.speed[i] = v_after
        self.home[i] = p / r
        if self.exact:
            p_prime = s_minus + f1[:, None] * tau2
            self.home_p[i] = frozen_heading_prime(p, p_prime)
            if res.chained_to is None:
                self.speed_p[i] = 0.0
            else:
                pred = res.chained_to
                r_prime = self.home[i] @ p_prime
                self.speed_p[i] = chained_speed_prime(
                    r, r_prime, self.station.reservation(pred).predicted_finish,
                    self._finish_prime(pred), t, tau2)
        self._sync_arrivals()
        self._log(EventKind.GUARD12, t, i, tau2)
        for ch in self.station.last_changes:
            self._speed_change(ch, tau2)

    def _speed_change(self, ch, tau_req):
        j = ch.agent
        cfg = self.cfg
        tau_c = None
        if self.ipa_on:
            tau_c = tau_req if self.exact else np.zeros(self.n)
        v_a, v_b = self.speed[j], ch.new_speed
        if self.exact:
            d = self.derivs
            r = math.hypot(*self.pos[j])
            r_prime = self.home[j] @ d.s_prime(j) - v_a * tau_c
            res = self.station.reservation(j)
            if res.chained_to is None:
                vp = np.zeros(self.n)
            else:
                pred = res.chained_to
                vp = chained_speed_prime(r, r_prime,
                                         self.station.reservation(pred).predicted_finish,
                                         self._finish_prime(pred), self.t, tau_c)
            jump_speed_change(j, self.home[j], v_a, v_b, cfg.alpha, tau_c, d)
            self.speed_p[j] = vp
        self.speed[j] = v_b
        self._log(EventKind.SPEED_CHANGE, self.t, j, tau_c)

    def _sync_arrivals(self):
        for res in self.station.queue:
            self.arrival_time[res.agent] = res.scheduled_arrival

    def _guard23(self, i: int):
        cfg = self.cfg
        res = self.station.on_arrival(i, self.t)
        d = self.derivs
        tau3 = None
        if self.ipa_on:
            tau3 = jump_guard23(i, self.home[i], self.speed[i], cfg.alpha, cfg.beta, d)
            self.tau3_prime[i] = tau3
        self.pos[i] = 0.0
        self.mode[i] = dyn.IN_CHARGING
        self.arrival_time[i] = math.inf
        self.zero_dwell[i] = res.predicted_soc >= self.theta[i]
        self.finish_time[i] = self.t if self.zero_dwell[i] else res.predicted_finish
        self._log(EventKind.GUARD23, self.t, i, tau3)

    def _guard31(self, i: int):
        cfg = self.cfg
        self.station.on_finish(i, self.t)
        if not self.zero_dwell[i]:
            self.q[i] = self.theta[i]
        self.mode[i] = dyn.COVERAGE
        self.speed[i] = cfg.v_max
        _, grad, _ = self._field(hessian=False)
        after = heading_from_gradient(grad[i], self.heading[i])
        self.heading[i] = after
        tau1 = None
        if self.ipa_on:
            tau1 = jump_guard31(i, after, cfg.v_max, cfg.alpha, cfg.beta, self.derivs,
                                tau3_prime=self.tau3_prime[i],
                                zero_dwell=bool(self.zero_dwell[i]),
                                velocity_after=self._velocity(i, grad[i]))
        self.finish_time[i] = math.inf
        self.home_p[i] = 0.0
        self.speed_p[i] = 0.0
        self._log(EventKind.GUARD31, self.t, i, tau1)

    # -- output ----------------------------------------------------------
    def _record(self, empty: bool = False) -> RunRecord:
        n = self.n
        if empty:
            return RunRecord(self.cfg, np.zeros(0), np.zeros((0, n, 5)), [], 0.0,
                             np.zeros(n), running_J=np.zeros(0))
        rows = self.grid_rows + self.event_rows
        # stable sort: grid row precedes event rows at equal times
        order = sorted(range(len(rows)), key=lambda k: (rows[k][0], k >= len(self.grid_rows), k))
        times = np.array([rows[k][0] for k in order])
        states = np.array([rows[k][1] for k in order]).reshape(len(order), n, 5)
        return RunRecord(
            config=self.cfg, times=times, states=states, events=list(self.events),
            J_total=float(self.y[self.o_j]),
            dJ_dtheta_total=self.y[self.o_dj:self.o_dj + n].copy(),
            tau_primes=list(self.tau_primes),
            charging_intervals=list(self.station.intervals),
            max_sensitivity=self.max_sens,
            running_J=np.array([rows[k][2] for k in order]),
        )


def run_simulation(config: SimConfig, theta=None) -> RunRecord:
    return Simulation(config, theta).run()


__all__ = ["RunRecord", "Simulation", "run_simulation", "AgentMode"]
