"""Single charging station at the origin shared under FRFS or SDF.

Every to-charging agent holds a :class:`Reservation`: a piecewise-constant
speed profile that brings it to the origin no earlier than the moment its
predecessor in the service order finishes charging.  Everything is
deterministic, so predicted arrival, arrival charge and finish times are
exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SchedulingError

TOL_TIME = 1e-9


class Policy(str, enum.Enum):
    FRFS = "frfs"
    SDF = "sdf"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ChargingRequest:
    agent: int
    request_time: float
    distance: float
    current_soc: float

    def __post_init__(self):
        if self.distance < 0:
            raise SchedulingError("request distance must be nonnegative")


@dataclass
class Reservation:
    """Queue entry.  ``speed_profile`` holds (start_time, speed) segments;
    ``chained_to`` names the agent whose finish fixes this arrival (None when
    the agent flies at full speed unobstructed)."""

    agent: int
    request_time: float
    distance: float
    soc_at_request: float
    theta: float
    speed_profile: list[tuple[float, float]] = field(default_factory=list)
    scheduled_arrival: float = math.nan
    predicted_soc: float = math.nan
    predicted_finish: float = math.nan
    chained_to: int | None = None

    @property
    def speed(self) -> float:
        return self.speed_profile[-1][1]

    @property
    def plan_time(self) -> float:
        return self.speed_profile[-1][0]

    def travelled(self, t: float) -> tuple[float, float]:
        """(distance covered, ∫ v² dt) between the request and time t."""
        dist = 0.0
        sq = 0.0
        for k, (start, v) in enumerate(self.speed_profile):
            end = self.speed_profile[k + 1][0] if k + 1 < len(self.speed_profile) else math.inf
            span = max(0.0, min(t, end) - start)
            dist += v * span
            sq += v * v * span
        return dist, sq

    def remaining(self, t: float) -> float:
        return max(0.0, self.distance - self.travelled(t)[0])

    def soc_at(self, t: float, alpha: float) -> float:
        return self.soc_at_request - alpha * self.travelled(t)[1]


@dataclass(frozen=True)
class SpeedChange:
    agent: int
    time: float
    old_speed: float
    new_speed: float


class ChargingStation:
    """Station state plus the policy that orders pending reservations."""

    def __init__(self, policy, v_max: float, alpha: float, beta: float, thresholds):
        self.policy = Policy(policy)
        self.v_max = float(v_max)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.occupant: int | None = None
        self.occupant_reservation: Reservation | None = None
        self.queue: list[Reservation] = []
        self.intervals: list[tuple[int, float, float]] = []
        self.last_changes: list[SpeedChange] = []

    # -- queries ---------------------------------------------------------
    @property
    def free_from(self) -> float:
        """Finish time of the current occupant, -inf if idle."""
        if self.occupant_reservation is None:
            return -math.inf
        return self.occupant_reservation.predicted_finish

    def reservation(self, agent: int) -> Reservation | None:
        if self.occupant_reservation is not None and self.occupant_reservation.agent == agent:
            return self.occupant_reservation
        for r in self.queue:
            if r.agent == agent:
                return r
        return None

    def predecessor(self, agent: int) -> Reservation | None:
        """Reservation served immediately before ``agent``'s."""
        prev = self.occupant_reservation
        for r in self.queue:
            if r.agent == agent:
                return prev
            prev = r
        return None

    # -- planning --------------------------------------------------------
    def _plan(self, res: Reservation, now: float, remaining: float, soc_now: float,
              t_free: float) -> float:
        """Set res's speed from ``now`` on so it arrives no earlier than t_free.

        Returns the new speed.  The profile gains a segment only if the speed
        actually changes.
        """
        v_max = self.v_max
        if remaining <= 0.0:
            if t_free > now + TOL_TIME:
                raise SchedulingError(
                    f"agent {res.agent} reached the station while it is busy")
            speed, arrival, chained = v_max, now, None
        elif t_free <= now + remaining / v_max:
            speed, arrival, chained = v_max, now + remaining / v_max, None
        else:
            speed = remaining / (t_free - now)
            arrival = t_free
            chained = -1
        if speed > v_max * (1 + 1e-12) or speed <= 0:
            raise SchedulingError(f"assigned speed {speed} outside (0, {v_max}]")
        if res.speed_profile and abs(res.speed_profile[-1][1] - speed) <= 1e-12 * v_max:
            speed = res.speed_profile[-1][1]  # same plan up to rounding
        if not res.speed_profile or res.speed_profile[-1][1] != speed:
            if res.speed_profile and res.speed_profile[-1][0] == now:
                res.speed_profile[-1] = (now, speed)
            else:
                res.speed_profile.append((now, speed))
        res.scheduled_arrival = arrival
        res.predicted_soc = soc_now - self.alpha * speed * remaining
        dwell = max(0.0, res.theta - res.predicted_soc) / self.beta
        res.predicted_finish = arrival + dwell
        res.chained_to = chained  # resolved to an agent index by the caller
        return speed

    def _new_reservation(self, req: ChargingRequest) -> Reservation:
        if self.reservation(req.agent) is not None:
            raise SchedulingError(f"agent {req.agent} already holds a reservation")
        return Reservation(agent=req.agent, request_time=req.request_time,
                           distance=req.distance, soc_at_request=req.current_soc,
                           theta=float(self.thresholds[req.agent]))

    def request(self, req: ChargingRequest) -> Reservation:
        """Admit a request under the station's policy.

        Speed changes imposed on other pending agents are left in
        ``last_changes``.
        """
        if self.policy is Policy.FRFS:
            return frfs_assign(req, self)
        sdf_assign(req, self)
        return self.reservation(req.agent)

    # -- occupancy -------------------------------------------------------
    def on_arrival(self, agent: int, time: float) -> Reservation:
        if self.occupant is not None:
            raise SchedulingError(
                f"agent {agent} arrived at t={time} while agent {self.occupant} charges")
        if not self.queue or self.queue[0].agent != agent:
            raise SchedulingError(f"agent {agent} arrived out of service order")
        res = self.queue.pop(0)
        if abs(res.scheduled_arrival - time) > 1e-6:
            raise SchedulingError(
                f"agent {agent} arrived at {time}, scheduled {res.scheduled_arrival}")
        if self.intervals and time < self.intervals[-1][2] - TOL_TIME:
            raise SchedulingError("charging intervals overlap")
        self.occupant = agent
        self.occupant_reservation = res
        return res

    def on_finish(self, agent: int, time: float) -> None:
        if self.occupant != agent:
            raise SchedulingError(f"agent {agent} finished but {self.occupant} occupies")
        res = self.occupant_reservation
        self.intervals.append((agent, res.scheduled_arrival, time))
        self.occupant = None
        self.occupant_reservation = None


def _resolve_chain(res: Reservation, pred: Reservation | None):
    if res.chained_to == -1:
        res.chained_to = pred.agent if pred is not None else None


def frfs_assign(request: ChargingRequest, station: ChargingStation) -> Reservation:
    """First request, first served: chain on the last predicted finish."""
    station.last_changes = []
    res = station._new_reservation(request)
    pred = station.queue[-1] if station.queue else station.occupant_reservation
    t_free = pred.predicted_finish if pred is not None else -math.inf
    station._plan(res, request.request_time, request.distance, request.current_soc, t_free)
    _resolve_chain(res, pred)
    station.queue.append(res)
    return res


def sdf_assign(request: ChargingRequest, station: ChargingStation) -> list[Reservation]:
    """Shortest distance first.

    The requester is inserted ahead of the first pending agent that is
    farther away at the request time (ties: earlier request, then lower
    index); every agent behind it is re-planned to arrive at its new
    predecessor's finish.  Returns the updated pending queue.
    """
    station.last_changes = []
    now = request.request_time
    res = station._new_reservation(request)
    key = (request.distance, request.request_time, request.agent)
    pos = len(station.queue)
    for k, other in enumerate(station.queue):
        if key < (other.remaining(now), other.request_time, other.agent):
            pos = k
            break
    station.queue.insert(pos, res)
    pred = station.queue[pos - 1] if pos > 0 else station.occupant_reservation
    t_free = pred.predicted_finish if pred is not None else -math.inf
    station._plan(res, now, request.distance, request.current_soc, t_free)
    _resolve_chain(res, pred)
    for k in range(pos + 1, len(station.queue)):
        other = station.queue[k]
        prev = station.queue[k - 1]
        old = other.speed
        remaining = other.remaining(now)
        soc = other.soc_at(now, station.alpha)
        new = station._plan(other, now, remaining, soc, prev.predicted_finish)
        _resolve_chain(other, prev)
        if new != old:
            station.last_changes.append(SpeedChange(other.agent, now, old, new))
    return list(station.queue)


__all__ = [
    "Policy", "ChargingRequest", "Reservation", "SpeedChange", "ChargingStation",
    "frfs_assign", "sdf_assign", "TOL_TIME",
]
