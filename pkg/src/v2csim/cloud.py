"""Cloud-hosted controller, latency-bearing channels and ego dynamics.

The ego senses ground truth, ships it uplink to the cloud, the cloud-side
controller (an IDM-form ACC) answers with an acceleration command downlink.
Each message draws its own latency from the channel's profile; receivers
keep only the freshest message per direction.
"""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Any, List, Optional

import numpy as np

from . import latency
from .errors import ConfigurationError, ParameterDomainError
from .traffic import (
    LATERAL_MARGIN,
    QuinticProfile,
    RoadSegment,
    VehicleState,
    World,
    idm_scalar,
)


class Direction(str, enum.Enum):
    STATE_UP = "StateUp"
    COMMAND_DOWN = "CommandDown"


@dataclass(frozen=True)
class ControlCommand:
    target_accel: float
    lane_change: Optional[int] = None
    issued_at: float = 0.0
    # sensing time of the state this command was computed from
    state_time: float = 0.0


@dataclass(frozen=True)
class TimedMessage:
    kind: Direction
    payload: Any
    send_time: float
    delivery_time: float
    seq: int

    def __lt__(self, other):
        return (self.delivery_time, self.seq) < (other.delivery_time, other.seq)


@dataclass
class TraceRecord:
    direction: str
    seq: int
    send_time: float
    delivery_time: float
    dropped: bool = False


@dataclass
class Channel:
    """One direction of the V2C link."""

    direction: Direction
    pending: List[TimedMessage] = field(default_factory=list)
    next_seq: int = 1
    last_delivered_seq: int = 0
    traces: List[TraceRecord] = field(default_factory=list)
    _trace_index: dict = field(default_factory=dict)


def channel_send(channel: Channel, payload, now: float, profile: latency.LatencyProfile,
                 rng: np.random.Generator) -> TimedMessage:
    """Enqueue ``payload``; its delivery time is ``now`` plus one latency draw."""
    delay_ms = latency.sample(profile, rng)
    msg = TimedMessage(channel.direction, payload, now, now + delay_ms / 1000.0, channel.next_seq)
    channel.next_seq += 1
    heapq.heappush(channel.pending, msg)
    channel._trace_index[msg.seq] = len(channel.traces)
    channel.traces.append(TraceRecord(channel.direction.value, msg.seq, now, msg.delivery_time))
    return msg


def channel_poll(channel: Channel, now: float) -> list:
    """Payloads due by ``now`` in seq order; older-than-delivered messages are dropped."""
    due = []
    while channel.pending and channel.pending[0].delivery_time <= now:
        due.append(heapq.heappop(channel.pending))
    if not due:
        return []
    due.sort(key=lambda m: m.seq)
    out = []
    for msg in due:
        if msg.seq < channel.last_delivered_seq:
            channel.traces[channel._trace_index[msg.seq]].dropped = True
            continue
        channel.last_delivered_seq = msg.seq
        out.append(msg.payload)
    return out


# ---------------------------------------------------------------------------
# perception


@dataclass(frozen=True)
class Perception:
    """Ground-truth snapshot around the ego at ``time``."""

    time: float
    ego: VehicleState
    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray
    length: np.ndarray
    width: np.ndarray
    road_length: Optional[float] = None

    def __len__(self):
        return self.ids.size


def ideal_sensor(world: World, ego: VehicleState, range_m: float, now: float = 0.0) -> Perception:
    """Exact states of all background vehicles strictly within ``range_m`` of the ego."""
    if not range_m > 0:
        raise ValueError("sensor range must be > 0")
    road = world.road
    dx = road.wrap_dx(world.x - ego.x)
    dy = world.y - ego.y
    seen = dx * dx + dy * dy < range_m * range_m
    return Perception(
        now, ego, world.ids[seen], world.x[seen], world.y[seen], world.v[seen],
        world.length[seen], world.width[seen], road.length if road.ring else None,
    )


# ---------------------------------------------------------------------------
# controller


@dataclass(frozen=True)
class SutConfig:
    """Cloud ACC parameters. ``travel_lane`` None keeps whatever lane the ego is in."""

    desired_speed: float = 30.0
    time_gap: float = 2.0
    max_accel: float = 2.0
    comfortable_decel: float = 2.5
    max_decel: float = 8.0
    jam_distance: float = 3.0
    emergency_time_gap: float = 0.6
    prediction_horizon: float = 0.5
    sensor_range: float = 150.0
    travel_lane: Optional[int] = None
    lane_free_gap: float = 30.0

    def __post_init__(self):
        for name in ("desired_speed", "time_gap", "max_accel", "comfortable_decel", "max_decel",
                     "jam_distance", "emergency_time_gap", "sensor_range", "lane_free_gap"):
            if not getattr(self, name) > 0:
                raise ConfigurationError("must be > 0", f"sut.{name}")
        if self.prediction_horizon < 0:
            raise ConfigurationError("must be >= 0", "sut.prediction_horizon")


def _wrap(dx, road_length):
    if road_length is None:
        return dx
    half = 0.5 * road_length
    return np.mod(dx + half, road_length) - half


def perceived_lead(p: Perception):
    """(gap, lead speed) of the nearest in-path vehicle ahead, or (inf, None)."""
    if len(p) == 0:
        return math.inf, None
    ego = p.ego
    dx = _wrap(p.x - ego.x, p.road_length)
    inpath = np.abs(p.y - ego.y) < 0.5 * (p.width + ego.width) + LATERAL_MARGIN
    mask = inpath & (dx > 0)
    if not mask.any():
        return math.inf, None
    idx = np.flatnonzero(mask)
    j = idx[np.argmin(dx[idx])]
    return float(dx[j] - 0.5 * (p.length[j] + ego.length)), float(p.speed[j])


def sut_step(p: Perception, cfg: SutConfig, lane_width: float = 3.5,
             now: Optional[float] = None) -> ControlCommand:
    """ACC law: IDM toward desired speed and time gap, full braking when the
    predicted time gap to the lead drops below ``emergency_time_gap``."""
    ego = p.ego
    gap, lead_speed = perceived_lead(p)
    if lead_speed is None:
        accel = idm_scalar(ego.speed, math.inf, 0.0, cfg.desired_speed, cfg.time_gap,
                            cfg.max_accel, cfg.comfortable_decel, cfg.jam_distance)
    else:
        accel = idm_scalar(ego.speed, gap, ego.speed - lead_speed, cfg.desired_speed,
                            cfg.time_gap, cfg.max_accel, cfg.comfortable_decel, cfg.jam_distance)
        predicted_gap = gap + (lead_speed - ego.speed) * cfg.prediction_horizon
        if predicted_gap < cfg.emergency_time_gap * max(ego.speed, 1e-6):
            accel = -cfg.max_decel
    accel = min(max(accel, -cfg.max_decel), cfg.max_accel)

    lane_change = None
    if cfg.travel_lane is not None and ego.lane != cfg.travel_lane:
        target = ego.lane + (1 if cfg.travel_lane > ego.lane else -1)
        center = (target + 0.5) * lane_width
        dx = _wrap(p.x - ego.x, p.road_length)
        near_target = (np.abs(p.y - center) < 0.5 * lane_width) & (np.abs(dx) < cfg.lane_free_gap)
        if not near_target.any():
            lane_change = target
    return ControlCommand(accel, lane_change, p.time if now is None else now, p.time)


# ---------------------------------------------------------------------------
# ego vehicle


@dataclass(frozen=True)
class EgoDynamics:
    """Longitudinal actuator model of the ego.

    ``actuator_policy`` is ``"hold"`` (keep the last delivered command) or
    ``"coast"`` (fall back to zero acceleration when the newest command is
    older than ``coast_timeout``).
    """

    time_constant: float = 0.3
    mass: float = 1900.0
    max_accel: float = 4.0
    max_decel: float = 9.5
    lane_change_duration: float = 4.0
    actuator_policy: str = "hold"
    coast_timeout: float = 0.5
    length: float = 5.0
    width: float = 1.9
    moi: Optional[float] = None
    damping: Optional[float] = None

    def __post_init__(self):
        for name in ("time_constant", "mass", "max_accel", "max_decel", "lane_change_duration",
                     "coast_timeout", "length", "width"):
            if not getattr(self, name) > 0:
                raise ConfigurationError("must be > 0", f"dynamics.{name}")
        if self.actuator_policy not in ("hold", "coast"):
            raise ConfigurationError("must be 'hold' or 'coast'", "dynamics.actuator_policy")


def ego_step(state: VehicleState, command: Optional[ControlCommand], dynamics: EgoDynamics,
             dt: float, now: float = 0.0, maneuver: Optional[QuinticProfile] = None,
             road: Optional[RoadSegment] = None) -> VehicleState:
    """Advance the ego one step.

    The achieved acceleration relaxes toward the commanded one with a
    first-order lag (exact discretization), clipped to the actuator limits.
    ``command=None`` means no command is in force (target 0).
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    target = 0.0
    if command is not None:
        stale = now - command.issued_at > dynamics.coast_timeout
        if not (dynamics.actuator_policy == "coast" and stale):
            target = command.target_accel
    target = min(max(target, -dynamics.max_decel), dynamics.max_accel)
    decay = math.exp(-dt / dynamics.time_constant)
    accel = target + (state.accel - target) * decay
    accel = min(max(accel, -dynamics.max_decel), dynamics.max_accel)
    speed = state.speed + accel * dt
    if speed < 0:
        speed = 0.0
        accel = -state.speed / dt
    x = state.x + speed * dt
    y, lane, heading = state.y, state.lane, 0.0
    if road is not None:
        x = float(road.wrap_x(x))
    if maneuver is not None:
        t_next = now + dt
        y = float(maneuver.position(t_next))
        if road is not None:
            lane = int(road.lane_of(y))
        if speed > 0:
            heading = math.atan2(float(maneuver.velocity(t_next)), speed)
    return replace(state, x=x, y=y, lane=lane, speed=speed, accel=accel, heading=heading)


def approximate_moi(i_meas_ref: float, i_cub_ref: float, i_cub_ego: float) -> float:
    """Scale a cuboid moment of inertia by a reference vehicle's measured/cuboid ratio."""
    for name, value in (("i_meas_ref", i_meas_ref), ("i_cub_ref", i_cub_ref),
                        ("i_cub_ego", i_cub_ego)):
        if not value > 0:
            raise ParameterDomainError(f"{name} must be > 0, got {value}")
    return i_cub_ego * (i_meas_ref / i_cub_ref)


def damping_coefficient(zeta: float, k_s: float, quarter_mass: float) -> float:
    """Suspension damping c_S = 2 * zeta * sqrt(k_S * m) of a quarter-car oscillator."""
    if zeta < 0:
        raise ParameterDomainError(f"zeta must be >= 0, got {zeta}")
    if not k_s > 0:
        raise ParameterDomainError(f"k_s must be > 0, got {k_s}")
    if not quarter_mass > 0:
        raise ParameterDomainError(f"quarter_mass must be > 0, got {quarter_mass}")
    return 2.0 * zeta * math.sqrt(k_s * quarter_mass)
