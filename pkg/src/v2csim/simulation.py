"""Fixed-step co-simulation loop.

Per step at time ``t``:

1. the ego takes delivery of any commands due on the downlink;
2. the step is logged;
3. the ideal sensor snapshot is sent uplink;
4. the cloud consumes due states and, if it got a fresh one, sends a command;
5. the conflict module acts on the background traffic;
6. traffic and ego advance to ``t + dt``.

With zero latency a command therefore acts exactly one step after the
state it was computed from. Random streams for traffic, uplink and
downlink are independent children of the run seed, so runs that differ
only in latency profile share their initial traffic.
"""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from .cloud import (
    Channel,
    ControlCommand,
    Direction,
    channel_poll,
    channel_send,
    ego_step,
    ideal_sensor,
    sut_step,
)
from .config import ScenarioConfig
from .metrics import RunLog
from .pcm import ConflictEvent, ConflictKind, ConflictModule
from .traffic import QuinticProfile, VehicleState, World, populate, spawn_step

EGO_ID = 0


def rng_streams(seed: int):
    """Traffic, uplink and downlink generators derived from one run seed."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def simulate(cfg: ScenarioConfig) -> RunLog:
    cfg.validate()
    dt = cfg.dt
    road = cfg.road
    rng_traffic, rng_up, rng_down = rng_streams(cfg.seed)
    profile = cfg.profile
    sut_cfg = cfg.effective_sut()
    dyn = cfg.dynamics

    ego = VehicleState(EGO_ID, 0.0, float(road.lane_center(cfg.initial_lane)), cfg.initial_lane,
                       float(cfg.initial_speed), 0.0, 0.0, dyn.length, dyn.width)
    world = World(road, cfg.traffic)
    if cfg.traffic.inflow_rate > 0:
        populate(world, rng_traffic, ego)
    pcm = ConflictModule(cfg.effective_pcm(), road)
    uplink = Channel(Direction.STATE_UP)
    downlink = Channel(Direction.COMMAND_DOWN)

    held: Optional[ControlCommand] = None
    maneuver: Optional[QuinticProfile] = None
    natural: List[ConflictEvent] = []
    pending_natural: List[ConflictEvent] = []

    n = cfg.steps
    times = np.arange(n) * dt
    ego_rec = np.empty((n, 5))
    cmd_time = np.full(n, np.nan)
    frames = []

    for k in range(n):
        t = float(times[k])

        for cmd in channel_poll(downlink, t):
            held = cmd
        if maneuver is not None and t >= maneuver.t_end:
            maneuver = None
        if (held is not None and held.lane_change is not None and maneuver is None
                and held.lane_change != ego.lane and abs(held.lane_change - ego.lane) == 1):
            maneuver = QuinticProfile(ego.y, float(road.lane_center(held.lane_change)), t,
                                      dyn.lane_change_duration)

        if pending_natural:
            for ev in [e for e in pending_natural if t >= e.end_time - 1e-9]:
                i = world.index_of(ev.actor_id)
                ev.completion_position = (float(world.x[i]), float(world.y[i]))
                pending_natural.remove(ev)

        ego_rec[k] = (ego.x, ego.y, ego.lane, ego.speed, ego.accel)
        if held is not None:
            cmd_time[k] = held.state_time
        frames.append((world.ids, world.x, world.y, world.v, world.lane))

        channel_send(uplink, ideal_sensor(world, ego, sut_cfg.sensor_range, t), t, profile, rng_up)
        states = channel_poll(uplink, t)
        if states:
            command = sut_step(states[-1], sut_cfg, road.lane_width, now=t)
            channel_send(downlink, command, t, profile, rng_down)

        pcm.step(world, ego, t)
        started = world.advance(dt, t, ego, k)
        for lc in started:
            if lc.to_lane != ego.lane:
                continue
            i = world.index_of(lc.vehicle_id)
            dx = float(road.wrap_dx(world.x[i] - ego.x))
            if 0 < dx <= cfg.natural_cutin_window:
                ev = ConflictEvent(ConflictKind.CUT_IN, lc.vehicle_id, lc.t_start, lc.t_end,
                                   commanded=False)
                natural.append(ev)
                pending_natural.append(ev)
        ego = ego_step(ego, held, dyn, dt, t, maneuver, road)
        if cfg.traffic.inflow_rate > 0:
            spawn_step(world, cfg.traffic, rng_traffic, dt)

    events = sorted(pcm.events + natural, key=lambda e: (e.start_time, e.kind.value, e.actor_id))
    log = _assemble(cfg, times, ego_rec, frames, world)
    log.events = events
    log.traces = uplink.traces + downlink.traces
    log.command_state_time = cmd_time
    return log


def _assemble(cfg: ScenarioConfig, times, ego_rec, frames, world: World) -> RunLog:
    n = len(frames)
    all_ids = sorted({int(v) for ids, *_ in frames for v in ids}) if n else []
    m = len(all_ids)
    same = n > 0 and all(f[0] is frames[0][0] or np.array_equal(f[0], frames[0][0]) for f in frames)
    if same and m and list(frames[0][0]) == all_ids:
        bx = np.stack([f[1] for f in frames])
        by = np.stack([f[2] for f in frames])
        bv = np.stack([f[3] for f in frames])
        bl = np.stack([f[4] for f in frames]).astype(np.int64)
    else:
        col = {vid: j for j, vid in enumerate(all_ids)}
        bx = np.full((n, m), np.nan)
        by = np.full((n, m), np.nan)
        bv = np.full((n, m), np.nan)
        bl = np.full((n, m), -1, dtype=np.int64)
        for k, (ids, x, y, v, lane) in enumerate(frames):
            cols = [col[int(i)] for i in ids]
            bx[k, cols] = x
            by[k, cols] = y
            bv[k, cols] = v
            bl[k, cols] = lane
    return RunLog(
        dt=cfg.dt,
        time=times,
        ego_x=ego_rec[:, 0].copy(),
        ego_y=ego_rec[:, 1].copy(),
        ego_lane=ego_rec[:, 2].astype(np.int64),
        ego_speed=ego_rec[:, 3].copy(),
        ego_accel=ego_rec[:, 4].copy(),
        bgv_ids=np.asarray(all_ids, dtype=np.int64),
        bgv_x=bx,
        bgv_y=by,
        bgv_speed=bv,
        bgv_lane=bl,
        bgv_length=np.full(m, cfg.traffic.vehicle_length),
        bgv_width=np.full(m, cfg.traffic.vehicle_width),
        ego_length=cfg.dynamics.length,
        ego_width=cfg.dynamics.width,
        road_length=cfg.road.length if cfg.road.ring else None,
    )
