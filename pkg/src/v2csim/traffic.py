"""Multi-lane highway with IDM background traffic.

The road is a straight segment with ``lane_count`` lanes. Lane ``k`` is
centred at ``y = (k + 0.5) * lane_width``. With ``ring=True`` the segment
wraps around so a fixed population can circulate for long runs; otherwise
vehicles leaving the segment end are removed.

Background vehicles follow the Intelligent Driver Model. Their leader is
the nearest vehicle ahead whose footprint overlaps laterally, so a vehicle
changing lanes is followed from the moment it encroaches. Optional
discretionary lane changes use a simplified MOBIL rule (incentive threshold
plus a safe-deceleration check on the new follower).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
from numba import njit

from .errors import ConfigurationError

# lateral clearance added to half-width sums when deciding who is in whose path
LATERAL_MARGIN = 0.3
# physical braking floor for IDM vehicles
MAX_PHYSICAL_DECEL = 9.0
MIN_GAP = 0.1


@dataclass(frozen=True)
class RoadSegment:
    length: float = 2000.0
    lane_count: int = 3
    lane_width: float = 3.5
    speed_limit: float = 36.2
    ring: bool = True

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigurationError("must be > 0", "road.length")
        if self.lane_count < 2:
            raise ConfigurationError("need at least 2 lanes for cut-ins", "road.lane_count")
        if not self.lane_width > 0:
            raise ConfigurationError("must be > 0", "road.lane_width")
        if not self.speed_limit > 0:
            raise ConfigurationError("must be > 0", "road.speed_limit")

    def lane_center(self, lane):
        return (np.asarray(lane) + 0.5) * self.lane_width

    def lane_of(self, y):
        lane = np.floor(np.asarray(y, dtype=float) / self.lane_width).astype(int)
        return np.clip(lane, 0, self.lane_count - 1)

    def wrap_dx(self, dx):
        """Map longitudinal differences to the shortest signed ring offset."""
        if not self.ring:
            return dx
        half = 0.5 * self.length
        return np.mod(np.asarray(dx) + half, self.length) - half

    def wrap_x(self, x):
        return np.mod(x, self.length) if self.ring else x


@dataclass(frozen=True)
class VehicleState:
    id: int
    x: float
    y: float
    lane: int
    speed: float
    accel: float = 0.0
    heading: float = 0.0
    length: float = 4.5
    width: float = 1.8

    @property
    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 31.0
    time_gap: float = 1.2
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    jam_distance: float = 2.0
    exponent: float = 4.0

    def equilibrium_gap(self, speed: float) -> float:
        """Bumper-to-bumper gap at which a follower at ``speed`` behind an
        equally fast leader has zero acceleration."""
        ratio = 1.0 - (speed / self.desired_speed) ** self.exponent
        if ratio <= 0:
            return math.inf
        return (self.jam_distance + speed * self.time_gap) / math.sqrt(ratio)


def idm_acceleration(speed, gap, approach_rate, desired_speed, time_gap, max_accel,
                     comfortable_decel, jam_distance, exponent=4.0):
    """IDM acceleration; ``approach_rate`` is own speed minus leader speed.

    Works elementwise on arrays. An infinite ``gap`` means free road.
    """
    speed = np.asarray(speed, dtype=float)
    free = 1.0 - (speed / desired_speed) ** exponent
    s_star = jam_distance + np.maximum(
        0.0, speed * time_gap + speed * approach_rate / (2.0 * np.sqrt(max_accel * comfortable_decel))
    )
    # an infinite gap gives zero interaction
    interaction = np.square(s_star / np.maximum(gap, MIN_GAP))
    return max_accel * (free - interaction)


def idm_for(params: IdmParams, speed, gap, approach_rate):
    return idm_acceleration(speed, gap, approach_rate, params.desired_speed, params.time_gap,
                            params.max_accel, params.comfortable_decel, params.jam_distance,
                            params.exponent)


def bgv_step(vehicle: VehicleState, lead: Optional[VehicleState], dt: float,
             params: IdmParams, road: Optional[RoadSegment] = None) -> VehicleState:
    """Advance one background vehicle by ``dt`` under IDM (semi-implicit Euler).

    Lane is kept; lane changes are only applied by :class:`World` or the
    conflict module.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if lead is None:
        gap, dv = math.inf, 0.0
    else:
        dx = lead.x - vehicle.x
        if road is not None:
            dx = float(road.wrap_dx(dx))
        gap = dx - 0.5 * (lead.length + vehicle.length)
        dv = vehicle.speed - lead.speed
    accel = float(idm_for(params, vehicle.speed, gap, dv))
    accel = max(accel, -MAX_PHYSICAL_DECEL)
    speed = max(vehicle.speed + accel * dt, 0.0)
    x = vehicle.x + speed * dt
    if road is not None:
        x = float(road.wrap_x(x))
    return replace(vehicle, x=x, speed=speed, accel=accel)


@dataclass(frozen=True)
class QuinticProfile:
    """Lateral lane-change path with zero lateral speed and acceleration at both ends."""

    y_start: float
    y_end: float
    t_start: float
    duration: float

    def _tau(self, t):
        return np.clip((np.asarray(t, dtype=float) - self.t_start) / self.duration, 0.0, 1.0)

    def position(self, t):
        tau = self._tau(t)
        s = tau**3 * (10 - 15 * tau + 6 * tau**2)
        return self.y_start + (self.y_end - self.y_start) * s

    def velocity(self, t):
        tau = self._tau(t)
        ds = 30 * tau**2 * (1 - tau) ** 2
        return (self.y_end - self.y_start) * ds / self.duration

    def acceleration(self, t):
        tau = self._tau(t)
        dds = 60 * tau * (1 - tau) * (1 - 2 * tau)
        return (self.y_end - self.y_start) * dds / self.duration**2

    @property
    def t_end(self):
        return self.t_start + self.duration


def quintic_position(y0, y1, tau):
    """Vectorized quintic blend for normalized time ``tau`` in [0, 1]."""
    tau = np.clip(tau, 0.0, 1.0)
    return y0 + (y1 - y0) * tau**3 * (10 - 15 * tau + 6 * tau**2)


@dataclass(frozen=True)
class TrafficConfig:
    """Background traffic parameters (flows in veh/s, speeds in m/s)."""

    inflow_rate: float = 1.2
    desired_speed_mean: float = 31.0
    desired_speed_std: float = 3.0
    time_gap: float = 1.2
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    jam_distance: float = 2.0
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    entry_gap: float = 30.0
    lane_changes: bool = True
    lane_change_threshold: float = 0.3
    lane_change_safe_decel: float = 2.0
    lane_change_duration: float = 4.0
    lane_change_interval: float = 1.0

    def __post_init__(self):
        if self.inflow_rate < 0:
            raise ConfigurationError("must be >= 0", "traffic.inflow_rate")
        for name in ("desired_speed_mean", "time_gap", "max_accel", "comfortable_decel",
                     "jam_distance", "vehicle_length", "vehicle_width", "lane_change_duration",
                     "lane_change_interval", "lane_change_safe_decel"):
            if not getattr(self, name) > 0:
                raise ConfigurationError("must be > 0", f"traffic.{name}")
        if self.desired_speed_std < 0:
            raise ConfigurationError("must be >= 0", "traffic.desired_speed_std")

    def idm(self, desired_speed: float) -> IdmParams:
        return IdmParams(desired_speed, self.time_gap, self.max_accel, self.comfortable_decel,
                         self.jam_distance)

    def draw_speed(self, rng: np.random.Generator, size=None):
        return np.maximum(rng.normal(self.desired_speed_mean, self.desired_speed_std, size), 1.0)


@dataclass
class LaneChange:
    """A lateral maneuver started this step (returned by :meth:`World.advance`)."""

    vehicle_id: int
    from_lane: int
    to_lane: int
    t_start: float
    t_end: float


class World:
    """Background vehicles stored as parallel arrays, advanced in lockstep."""

    _fields = ("ids", "x", "y", "v", "a", "length", "width", "v0",
               "lc_active", "lc_t0", "lc_y0", "lc_y1", "lc_dur",
               "brake_until", "brake_decel", "lane")

    def __init__(self, road: RoadSegment, config: TrafficConfig):
        self.road = road
        self.config = config
        self.ids = np.zeros(0, dtype=np.int64)
        self.x = np.zeros(0)
        self.y = np.zeros(0)
        self.v = np.zeros(0)
        self.a = np.zeros(0)
        self.length = np.zeros(0)
        self.width = np.zeros(0)
        self.v0 = np.zeros(0)
        self.lc_active = np.zeros(0, dtype=bool)
        self.lc_t0 = np.zeros(0)
        self.lc_y0 = np.zeros(0)
        self.lc_y1 = np.zeros(0)
        self.lc_dur = np.ones(0)
        self.brake_until = np.full(0, -np.inf)
        self.brake_decel = np.zeros(0)
        self.lane = np.zeros(0, dtype=np.int64)
        self.next_id = 1
        self.pending_lanes: List[int] = []
        self.target_population: Optional[int] = None
        self.time = 0.0

    def __len__(self):
        return self.ids.size

    # -- construction --------------------------------------------------------
    def add_vehicle(self, x, lane, speed, desired_speed=None) -> int:
        cfg = self.config
        vid = self.next_id
        self.next_id += 1
        values = {
            "ids": vid, "x": x, "y": float(self.road.lane_center(lane)), "v": speed, "a": 0.0,
            "length": cfg.vehicle_length, "width": cfg.vehicle_width,
            "v0": speed if desired_speed is None else desired_speed,
            "lc_active": False, "lc_t0": 0.0, "lc_y0": 0.0, "lc_y1": 0.0, "lc_dur": 1.0,
            "brake_until": -np.inf, "brake_decel": 0.0, "lane": lane,
        }
        for name in self._fields:
            arr = getattr(self, name)
            setattr(self, name, np.append(arr, np.array(values[name], dtype=arr.dtype)))
        return vid

    def remove(self, mask):
        keep = ~np.asarray(mask, dtype=bool)
        for name in self._fields:
            setattr(self, name, getattr(self, name)[keep])

    def index_of(self, vehicle_id: int) -> int:
        hits = np.flatnonzero(self.ids == vehicle_id)
        if hits.size == 0:
            raise KeyError(vehicle_id)
        return int(hits[0])

    def state(self, i: int) -> VehicleState:
        return VehicleState(
            id=int(self.ids[i]), x=float(self.x[i]), y=float(self.y[i]), lane=int(self.lane[i]),
            speed=float(self.v[i]), accel=float(self.a[i]), heading=self._heading(i),
            length=float(self.length[i]), width=float(self.width[i]),
        )

    def _heading(self, i) -> float:
        if not self.lc_active[i] or self.v[i] <= 0:
            return 0.0
        prof = QuinticProfile(self.lc_y0[i], self.lc_y1[i], self.lc_t0[i], self.lc_dur[i])
        return math.atan2(float(prof.velocity(self.time)), float(self.v[i]))

    def snapshot(self) -> List[VehicleState]:
        return [self.state(i) for i in range(len(self))]

    # -- dynamics ------------------------------------------------------------
    def start_lane_change(self, i: int, to_lane: int, now: float, duration: float):
        self.lc_active[i] = True
        self.lc_t0[i] = now
        self.lc_y0[i] = self.y[i]
        self.lc_y1[i] = float(self.road.lane_center(to_lane))
        self.lc_dur[i] = duration

    def command_brake(self, i: int, decel: float, until: float):
        self.brake_until[i] = until
        self.brake_decel[i] = decel

    def _with_ego(self, ego: Optional[VehicleState]):
        """Position, speed and size arrays of the BGVs with the ego appended last."""
        if ego is None:
            return self.x, self.y, self.v, self.length, self.width
        return (np.append(self.x, ego.x), np.append(self.y, ego.y), np.append(self.v, ego.speed),
                np.append(self.length, ego.length), np.append(self.width, ego.width))

    def _leaders(self, ego: Optional[VehicleState]):
        """Bumper gap to and speed of each BGV's leader (BGVs or the ego)."""
        if ego is None:
            ego_row = (0.0, 0.0, 0.0, 0.0, 0.0, False)
        else:
            ego_row = (ego.x, ego.y, ego.speed, ego.length, ego.width, True)
        ring = self.road.length if self.road.ring else 0.0
        return _leader_kernel(self.x, self.y, self.v, self.length, self.width, *ego_row, ring,
                              LATERAL_MARGIN)

    def idm_accel(self, ego: Optional[VehicleState] = None):
        """IDM acceleration of every BGV behind its current leader."""
        if len(self) == 0:
            return np.zeros(0)
        cfg = self.config
        gap, lead_v = self._leaders(ego)
        return _idm_kernel(self.v, gap, lead_v, self.v0, cfg.time_gap, cfg.max_accel,
                           cfg.comfortable_decel, cfg.jam_distance, MAX_PHYSICAL_DECEL)

    def advance(self, dt: float, now: float, ego: Optional[VehicleState] = None,
                step_index: int = 0) -> List[LaneChange]:
        """Advance all vehicles from ``now`` to ``now + dt``.

        ``ego`` takes part as a potential leader/follower but is not moved.
        Returns the discretionary lane changes started during this step.
        State arrays are replaced, never written in place, so references
        taken before the call keep describing the old step.
        """
        if not dt > 0:
            raise ValueError("dt must be > 0")
        self.time = now + dt
        if len(self) == 0:
            return []
        acc = self.idm_accel(ego)
        started = []
        if self.config.lane_changes:
            started = self._discretionary_lane_changes(acc, now, dt, ego, step_index)
        road = self.road
        (self.x, self.y, self.v, self.a, self.lane,
         self.lc_active) = _integrate_kernel(
            acc, dt, now, self.x, self.y, self.v, self.lc_active, self.lc_t0, self.lc_y0,
            self.lc_y1, self.lc_dur, self.brake_until, self.brake_decel, self.lane,
            road.lane_width, road.lane_count, road.length if road.ring else 0.0)
        if not road.ring:
            self.remove(self.x > road.length)
        return started

    def _discretionary_lane_changes(self, acc, now, dt, ego, step_index) -> List[LaneChange]:
        cfg = self.config
        road = self.road
        period = max(int(round(cfg.lane_change_interval / dt)), 1)
        if ego is None:
            ego_row = (0.0, 0.0, 0.0, 0, 1.0, False)
        else:
            ego_row = (ego.x, ego.speed, ego.length, ego.lane, max(ego.speed, 1.0), True)
        due, targets = _mobil_kernel(
            step_index, period, now, self.ids, self.x, self.v, self.length, self.lane,
            self.lc_active, self.lc_y1, self.brake_until, self.v0, acc, *ego_row,
            road.lane_width, road.lane_count, road.length if road.ring else 0.0,
            cfg.lane_change_threshold, cfg.lane_change_safe_decel, cfg.time_gap, cfg.max_accel,
            cfg.comfortable_decel, cfg.jam_distance)
        started = []
        for i, to_lane in zip(due, targets):
            if to_lane < 0:
                continue
            from_lane = int(self.lane[i])
            self.start_lane_change(i, int(to_lane), now, cfg.lane_change_duration)
            started.append(LaneChange(int(self.ids[i]), from_lane, int(to_lane), now,
                                      now + cfg.lane_change_duration))
        return started


@njit(cache=True)
def _mobil_kernel(step_index, period, now, ids, x, v, length, lane, lc_active, lc_y1, brake_until,
                  v0, acc, ego_x, ego_v, ego_length, ego_lane, ego_v0, has_ego, lane_width,
                  lane_count, ring_length, threshold, safe_decel, time_gap, max_accel,
                  comfortable_decel, jam_distance):
    """Simplified MOBIL lane choice for the vehicles due this step.

    A vehicle is due every ``period`` steps (staggered by id) unless it is
    already changing lanes or braking on command. A candidate adjacent lane
    must leave front and rear bumper gaps of at least ``jam_distance`` and
    must not force the new follower to brake harder than ``safe_decel``;
    among admissible lanes the one with the largest own-acceleration gain
    above ``threshold`` wins. Vehicles changing lanes count in both their
    current and their target lane, and a change chosen here is visible to
    vehicles decided after it. The ego (index ``n`` when present) only
    takes part as a neighbour. Returns due indices and the target lane of
    each (-1 to stay).
    """
    n = x.size
    m = n + 1 if has_ego else n
    X = np.empty(m)
    V = np.empty(m)
    Ln = np.empty(m)
    V0 = np.empty(m)
    lanes = np.empty(m, dtype=np.int64)
    merging = np.full(m, -1, dtype=np.int64)
    X[:n] = x
    V[:n] = v
    Ln[:n] = length
    V0[:n] = v0
    lanes[:n] = lane
    for j in range(n):
        if lc_active[j]:
            merging[j] = min(max(int(math.floor(lc_y1[j] / lane_width)), 0), lane_count - 1)
    if has_ego:
        X[n], V[n], Ln[n], V0[n], lanes[n] = ego_x, ego_v, ego_length, ego_v0, ego_lane

    count = 0
    for i in range(n):
        if (ids[i] + step_index) % period == 0 and not lc_active[i] and not brake_until[i] > now:
            count += 1
    due = np.empty(count, dtype=np.int64)
    out = np.full(count, -1, dtype=np.int64)
    q = 0
    for i in range(n):
        if (ids[i] + step_index) % period == 0 and not lc_active[i] and not brake_until[i] > now:
            due[q] = i
            q += 1

    half = 0.5 * ring_length
    for q in range(count):
        i = due[q]
        best_gain = threshold
        for target in (lanes[i] - 1, lanes[i] + 1):
            if target < 0 or target >= lane_count:
                continue
            front, back = np.inf, -np.inf
            jf, jb = -1, -1
            for j in range(m):
                if j == i or not (lanes[j] == target or merging[j] == target):
                    continue
                d = X[j] - X[i]
                if ring_length > 0.0:
                    d = (d + half) % ring_length - half
                if d > 0.0:
                    if d < front:
                        front, jf = d, j
                elif d > back:
                    back, jb = d, j
            gap_f, v_lead = np.inf, V[i]
            if jf >= 0:
                gap_f = front - 0.5 * (Ln[jf] + Ln[i])
                v_lead = V[jf]
            if jb >= 0:
                gap_b = -back - 0.5 * (Ln[jb] + Ln[i])
                if gap_b < jam_distance:
                    continue
                a_follower = idm_scalar(V[jb], gap_b, V[jb] - V[i], V0[jb], time_gap, max_accel,
                                         comfortable_decel, jam_distance)
                if a_follower < -safe_decel:
                    continue
            if gap_f < jam_distance:
                continue
            gain = idm_scalar(V[i], gap_f, V[i] - v_lead, V0[i], time_gap, max_accel,
                               comfortable_decel, jam_distance) - acc[i]
            if gain > best_gain:
                best_gain = gain
                out[q] = target
        if out[q] >= 0:
            merging[i] = out[q]
    return due, out


@njit(cache=True)
def _idm_kernel(v, gap, lead_v, v0, time_gap, max_accel, comfortable_decel, jam_distance,
                floor):
    out = np.empty(v.size)
    for i in range(v.size):
        a = idm_scalar(v[i], gap[i], v[i] - lead_v[i], v0[i], time_gap, max_accel,
                        comfortable_decel, jam_distance)
        out[i] = max(a, -floor)
    return out


@njit(cache=True)
def _integrate_kernel(acc, dt, now, x, y, v, lc_active, lc_t0, lc_y0, lc_y1, lc_dur,
                      brake_until, brake_decel, lane, lane_width, lane_count, ring_length):
    """One semi-implicit Euler step for all BGVs plus the lateral quintic.

    Commanded braking overrides IDM. Speeds are floored at zero and the
    achieved acceleration is recomputed from the speed change. Returns new
    ``x, y, v, a, lane, lc_active`` arrays.
    """
    n = x.size
    x1, y1, v1, a1 = np.empty(n), y.copy(), np.empty(n), np.empty(n)
    lane1, active1 = lane.copy(), lc_active.copy()
    t_next = now + dt
    for i in range(n):
        acc_i = -brake_decel[i] if brake_until[i] > now else acc[i]
        vn = max(v[i] + acc_i * dt, 0.0)
        a1[i] = (vn - v[i]) / dt
        v1[i] = vn
        xn = x[i] + vn * dt
        x1[i] = xn % ring_length if ring_length > 0.0 else xn
        if lc_active[i]:
            tau = min(max((t_next - lc_t0[i]) / lc_dur[i], 0.0), 1.0)
            if tau >= 1.0:
                y1[i] = lc_y1[i]
                active1[i] = False
            else:
                y1[i] = lc_y0[i] + (lc_y1[i] - lc_y0[i]) * tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
            lane1[i] = min(max(int(math.floor(y1[i] / lane_width)), 0), lane_count - 1)
    return x1, y1, v1, a1, lane1, active1


@njit(cache=True)
def _leader_kernel(x, y, v, length, width, ego_x, ego_y, ego_v, ego_length, ego_width, has_ego,
                   ring_length, margin):
    """For each vehicle the nearest laterally overlapping vehicle ahead.

    The ego, when present, is candidate ``n``. On a ring (``ring_length`` >
    0) "ahead" means a forward offset shorter than half a lap. Ties go to
    the lower index. Returns bumper gaps (inf without a leader) and leader
    speeds (own speed without a leader).
    """
    n = x.size
    m = n + 1 if has_ego else n
    gap = np.empty(n)
    lead_v = np.empty(n)
    half = 0.5 * ring_length
    for i in range(n):
        best = np.inf
        best_j = -1
        for j in range(m):
            if j == i:
                continue
            if j < n:
                xj, yj, wj = x[j], y[j], width[j]
            else:
                xj, yj, wj = ego_x, ego_y, ego_width
            d = xj - x[i]
            if ring_length > 0.0:
                if d < 0.0:
                    d += ring_length
                if d >= half:
                    continue
            if d <= 0.0 or d >= best:
                continue
            if abs(yj - y[i]) >= 0.5 * (wj + width[i]) + margin:
                continue
            best = d
            best_j = j
        if best_j < 0:
            gap[i] = np.inf
            lead_v[i] = v[i]
        elif best_j < n:
            gap[i] = best - 0.5 * (length[best_j] + length[i])
            lead_v[i] = v[best_j]
        else:
            gap[i] = best - 0.5 * (ego_length + length[i])
            lead_v[i] = ego_v
    return gap, lead_v


@njit(cache=True)
def idm_scalar(speed, gap, approach_rate, desired_speed, time_gap, max_accel,
                comfortable_decel, jam_distance, exponent=4.0) -> float:
    """Scalar twin of :func:`idm_acceleration` for per-vehicle decisions."""
    free = 1.0 - (speed / desired_speed) ** exponent
    if math.isinf(gap):
        return max_accel * free
    s_star = jam_distance + max(
        0.0, speed * time_gap + speed * approach_rate / (2.0 * math.sqrt(max_accel * comfortable_decel)))
    return max_accel * (free - (s_star / max(gap, MIN_GAP)) ** 2)


def _entry_blocked(world: World, lane: int, gap: float) -> bool:
    if len(world) == 0:
        return False
    dx = world.road.wrap_dx(world.x - 0.0)
    same = world.lane == lane
    if world.road.ring:
        return bool(np.any(same & (np.abs(dx) < gap)))
    return bool(np.any(same & (dx < gap)))


def spawn_step(world: World, config: TrafficConfig, rng: np.random.Generator,
               dt: float) -> List[VehicleState]:
    """Poisson arrivals at the segment entry (x = 0).

    Each arrival picks a uniformly random lane and waits in a queue until
    its lane is free for ``config.entry_gap`` metres. On ring roads the
    population is capped at ``world.target_population`` when one is set.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    arrivals = rng.poisson(config.inflow_rate * dt) if config.inflow_rate > 0 else 0
    for _ in range(arrivals):
        world.pending_lanes.append(int(rng.integers(world.road.lane_count)))
    spawned = []
    still_waiting = []
    for lane in world.pending_lanes:
        full = (world.road.ring and world.target_population is not None
                and len(world) >= world.target_population)
        if full:
            continue
        if _entry_blocked(world, lane, config.entry_gap):
            still_waiting.append(lane)
            continue
        v0 = float(config.draw_speed(rng))
        vid = world.add_vehicle(0.0, lane, v0, v0)
        spawned.append(world.state(world.index_of(vid)))
    world.pending_lanes = still_waiting
    return spawned


def populate(world: World, rng: np.random.Generator, ego: Optional[VehicleState] = None,
             clear_zone: float = 60.0) -> int:
    """Fill the road with its equilibrium population for the configured inflow.

    The count is ``inflow_rate * length / desired_speed_mean`` spread over
    lanes; positions are evenly spaced with random jitter and an offset per
    lane. Slots within ``clear_zone`` metres of the ego (same lane) or half
    that (other lanes) are skipped. Returns the number placed and records it
    as the world's target population.
    """
    cfg, road = world.config, world.road
    total = int(round(cfg.inflow_rate * road.length / cfg.desired_speed_mean))
    per_lane = [total // road.lane_count + (1 if k < total % road.lane_count else 0)
                for k in range(road.lane_count)]
    placed = 0
    for lane, count in enumerate(per_lane):
        if count == 0:
            continue
        spacing = road.length / count
        offset = rng.uniform(0, spacing)
        jitter = 0.25 * spacing
        for n in range(count):
            x = float(road.wrap_x(offset + n * spacing + rng.uniform(-jitter, jitter)))
            if ego is not None:
                dx = abs(float(road.wrap_dx(x - ego.x)))
                zone = clear_zone if lane == ego.lane else 0.5 * clear_zone
                if dx < zone:
                    continue
            v0 = float(cfg.draw_speed(rng))
            world.add_vehicle(x, lane, v0, v0)
            placed += 1
    world.target_population = placed
    return placed
