"""Proactive conflict module.

Commands background vehicles into two kinds of conflict with the ego:

* emergency brake -- the nearest same-lane vehicle ahead brakes hard once
  it is closer than ``d_brake``;
* cut-in -- the closest vehicle in an adjacent lane within ``d_cut`` swerves
  into the ego lane along a quintic lateral path.

The decision functions are pure; :class:`ConflictModule` carries the
per-actor cooldown bookkeeping for a run.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, InvalidManeuverError
from .traffic import QuinticProfile, RoadSegment, VehicleState, World


class ConflictKind(str, enum.Enum):
    EMERGENCY_BRAKE = "EmergencyBrake"
    CUT_IN = "CutIn"


@dataclass
class ConflictEvent:
    """One conflict. For cut-ins ``end_time`` is t_cut and
    ``completion_position`` is the actor position at t_cut (filled in once
    the maneuver completes). ``commanded`` is False for cut-ins that arise
    from ordinary traffic lane changes."""

    kind: ConflictKind
    actor_id: int
    start_time: float
    end_time: float
    completion_position: Optional[Tuple[float, float]] = None
    commanded: bool = True

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise ValueError("end_time must be >= start_time")

    @property
    def t_cut(self) -> Optional[float]:
        return self.end_time if self.kind is ConflictKind.CUT_IN else None


@dataclass(frozen=True)
class PcmConfig:
    d_brake: float = 30.0
    d_cut: float = 20.0
    brake_decel: float = 6.0
    brake_hold: float = 2.0
    cutin_duration: float = 3.0
    cooldown: float = 10.0
    enabled: bool = True

    def __post_init__(self):
        for name in ("d_brake", "d_cut", "brake_decel", "brake_hold", "cutin_duration"):
            if not getattr(self, name) > 0:
                raise ConfigurationError("must be > 0", f"pcm.{name}")
        if self.cooldown < 0:
            raise ConfigurationError("must be >= 0", "pcm.cooldown")


@dataclass(frozen=True)
class VehicleArrays:
    """Column view of background vehicles (what the decision functions scan)."""

    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lane: np.ndarray

    @classmethod
    def from_states(cls, states: Sequence[VehicleState]) -> "VehicleArrays":
        return cls(
            np.array([s.id for s in states], dtype=np.int64),
            np.array([s.x for s in states], dtype=float),
            np.array([s.y for s in states], dtype=float),
            np.array([s.lane for s in states], dtype=np.int64),
        )

    @classmethod
    def from_world(cls, world: World, mask=None) -> "VehicleArrays":
        if mask is None:
            return cls(world.ids, world.x, world.y, world.lane)
        return cls(world.ids[mask], world.x[mask], world.y[mask], world.lane[mask])

    def __len__(self):
        return self.ids.size


def euclidean_distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _offsets(ego: VehicleState, bgvs: VehicleArrays, road: Optional[RoadSegment]):
    dx = bgvs.x - ego.x
    if road is not None:
        dx = road.wrap_dx(dx)
    dy = bgvs.y - ego.y
    return dx, np.hypot(dx, dy)


@dataclass(frozen=True)
class BrakeCommand:
    actor_id: int
    decel: float
    hold: float


def find_lead(ego: VehicleState, bgvs: VehicleArrays,
              road: Optional[RoadSegment] = None, offsets=None) -> Optional[int]:
    """Index of the nearest same-lane vehicle ahead of the ego, if any.

    ``offsets`` optionally passes a precomputed ``(dx, distance)`` pair.
    """
    if len(bgvs) == 0:
        return None
    dx, _ = offsets if offsets is not None else _offsets(ego, bgvs, road)
    mask = (bgvs.lane == ego.lane) & (dx > 0)
    if not mask.any():
        return None
    idx = np.flatnonzero(mask)
    return int(idx[np.argmin(dx[idx])])


def check_emergency_brake(ego: VehicleState, bgvs: VehicleArrays, cfg: PcmConfig, now: float,
                          cooldown_until: Optional[Mapping[int, float]] = None,
                          road: Optional[RoadSegment] = None,
                          offsets=None) -> Optional[BrakeCommand]:
    """Brake command for the lead vehicle when it is closer than ``d_brake``."""
    if not cfg.enabled:
        return None
    if offsets is None:
        offsets = _offsets(ego, bgvs, road)
    i = find_lead(ego, bgvs, road, offsets)
    if i is None:
        return None
    dist = offsets[1]
    if not dist[i] < cfg.d_brake:
        return None
    actor = int(bgvs.ids[i])
    if cooldown_until and now < cooldown_until.get(actor, -math.inf):
        return None
    return BrakeCommand(actor, cfg.brake_decel, cfg.brake_hold)


def select_cutin_candidate(ego: VehicleState, bgvs: VehicleArrays, cfg: PcmConfig,
                           road: Optional[RoadSegment] = None,
                           offsets=None) -> Optional[int]:
    """Id of the closest adjacent-lane vehicle within ``d_cut`` (smallest id on ties)."""
    if not cfg.enabled or len(bgvs) == 0:
        return None
    _, dist = offsets if offsets is not None else _offsets(ego, bgvs, road)
    candidates = (np.abs(bgvs.lane - ego.lane) == 1) & (dist < cfg.d_cut)
    if not candidates.any():
        return None
    idx = np.flatnonzero(candidates)
    order = np.lexsort((bgvs.ids[idx], dist[idx]))
    return int(bgvs.ids[idx[order[0]]])


def execute_cutin(actor: VehicleState, ego_lane: int, cfg: PcmConfig, now: float,
                  road: RoadSegment) -> Tuple[QuinticProfile, ConflictEvent]:
    """Lateral path from the actor's lane centre to the ego lane centre.

    The returned event has ``end_time`` = t_cut; its completion position is
    recorded by the caller when the maneuver finishes.
    """
    if abs(actor.lane - ego_lane) != 1:
        raise InvalidManeuverError(
            f"vehicle {actor.id} in lane {actor.lane} is not adjacent to ego lane {ego_lane}"
        )
    profile = QuinticProfile(
        float(road.lane_center(actor.lane)), float(road.lane_center(ego_lane)), now,
        cfg.cutin_duration,
    )
    event = ConflictEvent(ConflictKind.CUT_IN, actor.id, now, now + cfg.cutin_duration)
    return profile, event


@dataclass
class ConflictModule:
    """Applies PCM decisions to a :class:`World` step by step."""

    cfg: PcmConfig
    road: RoadSegment
    events: List[ConflictEvent] = field(default_factory=list)
    cooldown_until: Dict[int, float] = field(default_factory=dict)
    active_cutin: Optional[ConflictEvent] = None
    commands_issued: int = 0

    def step(self, world: World, ego: VehicleState, now: float) -> None:
        if not self.cfg.enabled:
            return
        eps = 1e-9
        if self.active_cutin is not None and now >= self.active_cutin.end_time - eps:
            i = world.index_of(self.active_cutin.actor_id)
            self.active_cutin.completion_position = (float(world.x[i]), float(world.y[i]))
            self.active_cutin = None
        if len(world) == 0:
            return

        bgvs = VehicleArrays.from_world(world)
        offsets = _offsets(ego, bgvs, self.road)
        brake = check_emergency_brake(ego, bgvs, self.cfg, now, self.cooldown_until, self.road,
                                      offsets)
        if brake is not None:
            i = world.index_of(brake.actor_id)
            world.command_brake(i, brake.decel, now + brake.hold)
            self._log(ConflictEvent(ConflictKind.EMERGENCY_BRAKE, brake.actor_id, now,
                                    now + brake.hold))

        if self.active_cutin is None:
            # only vehicles within reach can be candidates; filtering first
            # keeps the bookkeeping below off the common no-candidate path
            free = offsets[1] < self.cfg.d_cut
            if free.any():
                free &= ~world.lc_active & ~(world.brake_until > now)
                cooling = [a for a, until in self.cooldown_until.items() if now < until]
                if cooling:
                    free &= ~np.isin(world.ids, cooling)
            if free.any():
                actor_id = select_cutin_candidate(
                    ego, VehicleArrays.from_world(world, free), self.cfg, self.road,
                    (offsets[0][free], offsets[1][free]))
                if actor_id is not None:
                    i = world.index_of(actor_id)
                    profile, event = execute_cutin(world.state(i), ego.lane, self.cfg, now, self.road)
                    world.start_lane_change(i, ego.lane, now, profile.duration)
                    self.active_cutin = event
                    self._log(event)

    def _log(self, event: ConflictEvent) -> None:
        self.events.append(event)
        self.commands_issued += 1
        self.cooldown_until[event.actor_id] = event.end_time + self.cfg.cooldown
