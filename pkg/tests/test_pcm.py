"""Proactive conflict module: triggers, candidate selection, cut-in paths, cooldowns."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2csim.errors import ConfigurationError, InvalidManeuverError
from v2csim.pcm import (
    ConflictEvent,
    ConflictKind,
    ConflictModule,
    PcmConfig,
    VehicleArrays,
    check_emergency_brake,
    euclidean_distance,
    execute_cutin,
    find_lead,
    select_cutin_candidate,
)
from v2csim.traffic import RoadSegment, TrafficConfig, VehicleState, World

ROAD = RoadSegment()
CFG = PcmConfig()


def veh(vid, x, lane, speed=25.0):
    return VehicleState(vid, x, float(ROAD.lane_center(lane)), lane, speed)


EGO = veh(0, 100.0, 1)


def arrays(*states):
    return VehicleArrays.from_states(list(states))


@pytest.mark.parametrize("a,b,d", [((0, 0), (0, 0), 0.0), ((3, 0), (0, 4), 5.0), ((10, 1), (4, 1), 6.0)])
def test_euclidean_distance(a, b, d):
    assert euclidean_distance(a, b) == d


def test_config_validation():
    with pytest.raises(ConfigurationError):
        PcmConfig(d_brake=0)
    with pytest.raises(ConfigurationError):
        PcmConfig(cutin_duration=-1)
    with pytest.raises(ValueError):
        ConflictEvent(ConflictKind.CUT_IN, 1, 2.0, 1.0)


# -- emergency brake -----------------------------------------------------------

def test_brake_issued_inside_threshold():
    cmd = check_emergency_brake(EGO, arrays(veh(5, 125.0, 1)), CFG, 0.0)
    assert cmd is not None and cmd.actor_id == 5 and cmd.decel == CFG.brake_decel


def test_brake_threshold_is_strict():
    assert check_emergency_brake(EGO, arrays(veh(5, 130.0, 1)), CFG, 0.0) is None


def test_no_lead_no_brake():
    bgvs = arrays(veh(5, 90.0, 1), veh(6, 110.0, 0), veh(7, 110.0, 2))
    assert check_emergency_brake(EGO, bgvs, CFG, 0.0) is None


def test_only_nearest_lead_is_considered():
    # the nearest lead is beyond the threshold; a farther one is irrelevant
    bgvs = arrays(veh(5, 135.0, 1), veh(6, 200.0, 1))
    assert check_emergency_brake(EGO, bgvs, CFG, 0.0) is None
    bgvs = arrays(veh(5, 120.0, 1), veh(6, 115.0, 1))
    assert check_emergency_brake(EGO, bgvs, CFG, 0.0).actor_id == 6


def test_brake_respects_cooldown_and_disable():
    bgvs = arrays(veh(5, 125.0, 1))
    assert check_emergency_brake(EGO, bgvs, CFG, 3.0, {5: 4.0}) is None
    assert check_emergency_brake(EGO, bgvs, CFG, 4.0, {5: 4.0}) is not None
    assert check_emergency_brake(EGO, bgvs, PcmConfig(enabled=False), 0.0) is None


def test_lead_found_across_ring_seam():
    ego = veh(0, 1990.0, 1)
    bgvs = arrays(veh(5, 10.0, 1))
    assert find_lead(ego, bgvs, ROAD) == 0
    assert check_emergency_brake(ego, bgvs, CFG, 0.0, road=ROAD).actor_id == 5


# -- cut-in candidates ---------------------------------------------------------

def test_closest_adjacent_candidate():
    bgvs = arrays(veh(1, 125.0, 0), veh(2, 115.0, 2), veh(3, 130.0, 0))
    # distances are Euclidean; vehicle 2 is the only one within 20 m
    assert select_cutin_candidate(EGO, bgvs, CFG) == 2


def test_no_candidate_at_or_beyond_threshold():
    far = math.sqrt(20.0**2 - 3.5**2)
    bgvs = arrays(veh(1, 100.0 + far, 0), veh(2, 130.0, 2))
    assert select_cutin_candidate(EGO, bgvs, CFG) is None


def test_tie_goes_to_smallest_id():
    bgvs = arrays(veh(7, 110.0, 0), veh(4, 110.0, 2))
    assert select_cutin_candidate(EGO, bgvs, CFG) == 4


def test_non_adjacent_and_same_lane_ignored():
    ego = veh(0, 100.0, 0)
    bgvs = arrays(veh(1, 105.0, 0), veh(2, 101.0, 2))
    assert select_cutin_candidate(ego, bgvs, CFG) is None


def brute_candidate(ego, states, d_cut):
    best = None
    for s in states:
        if abs(s.lane - ego.lane) != 1:
            continue
        d = euclidean_distance(s.position, ego.position)
        if d < d_cut and (best is None or (d, s.id) < best[:2]):
            best = (d, s.id)
    return best


def brute_lead_distance(ego, states):
    ahead = [s for s in states if s.lane == ego.lane and s.x > ego.x]
    if not ahead:
        return None
    lead = min(ahead, key=lambda s: s.x)
    return euclidean_distance(lead.position, ego.position)


fuzz_world = st.lists(
    st.tuples(st.floats(0, 200), st.integers(0, 2)), min_size=0, max_size=30)


@settings(max_examples=150, deadline=None)
@given(vehicles=fuzz_world, ego_x=st.floats(50, 150), ego_lane=st.integers(0, 2))
def test_candidate_matches_brute_force(vehicles, ego_x, ego_lane):
    ego = veh(0, ego_x, ego_lane)
    states = [veh(i + 1, x, lane) for i, (x, lane) in enumerate(vehicles)]
    got = select_cutin_candidate(ego, arrays(*states) if states else VehicleArrays.from_states([]), CFG)
    expected = brute_candidate(ego, states, CFG.d_cut)
    if expected is None:
        assert got is None
    else:
        assert got == expected[1]
        chosen = next(s for s in states if s.id == got)
        assert euclidean_distance(chosen.position, ego.position) == expected[0]


@settings(max_examples=150, deadline=None)
@given(vehicles=fuzz_world, ego_x=st.floats(50, 150), ego_lane=st.integers(0, 2))
def test_brake_trigger_matches_brute_force(vehicles, ego_x, ego_lane):
    ego = veh(0, ego_x, ego_lane)
    states = [veh(i + 1, x, lane) for i, (x, lane) in enumerate(vehicles)]
    got = check_emergency_brake(ego, arrays(*states) if states else VehicleArrays.from_states([]), CFG, 0.0)
    d = brute_lead_distance(ego, states)
    assert (got is not None) == (d is not None and d < CFG.d_brake)


# -- cut-in execution ------------------------------------------------------------

def test_cutin_path_boundary_values():
    actor = veh(3, 110.0, 2)
    profile, event = execute_cutin(actor, 1, CFG, 5.0, ROAD)
    assert profile.position(5.0) == pytest.approx(ROAD.lane_center(2))
    assert profile.velocity(5.0) == pytest.approx(0.0)
    assert profile.position(8.0) == pytest.approx(ROAD.lane_center(1))
    assert profile.velocity(8.0) == pytest.approx(0.0)
    assert profile.position(6.5) == pytest.approx(0.5 * (ROAD.lane_center(1) + ROAD.lane_center(2)))
    assert event.kind is ConflictKind.CUT_IN and event.t_cut == 8.0 and event.actor_id == 3


def test_cutin_requires_adjacent_lane():
    with pytest.raises(InvalidManeuverError):
        execute_cutin(veh(3, 110.0, 2), 0, CFG, 0.0, ROAD)


# -- conflict module -------------------------------------------------------------

def module_world(*specs):
    world = World(ROAD, TrafficConfig(lane_changes=False))
    for x, lane, v in specs:
        world.add_vehicle(x, lane, v)
    return world


def test_disabled_module_issues_nothing():
    world = module_world((110.0, 0, 25.0), (120.0, 1, 25.0))
    pcm = ConflictModule(PcmConfig(enabled=False), ROAD)
    for k in range(500):
        pcm.step(world, EGO, k * 0.01)
    assert pcm.events == [] and pcm.commands_issued == 0


def test_cutin_runs_and_records_completion_position():
    world = module_world((110.0, 0, 25.0))
    pcm = ConflictModule(CFG, ROAD)
    ego = EGO
    for k in range(400):
        t = k * 0.01
        pcm.step(world, ego, t)
        world.advance(0.01, t, ego, k)
        ego = VehicleState(0, ego.x + 0.25, ego.y, 1, 25.0)
    (event,) = pcm.events
    assert event.kind is ConflictKind.CUT_IN
    assert event.completion_position is not None
    assert event.completion_position[1] == pytest.approx(ROAD.lane_center(1))


def test_cooldown_separates_events_per_actor():
    # one vehicle keeps being eligible for braking; events must be >= hold + cooldown apart
    world = module_world((120.0, 1, 25.0))
    pcm = ConflictModule(CFG, ROAD)
    for k in range(4000):
        t = k * 0.01
        world.x = np.array([120.0])
        world.y = np.array([float(ROAD.lane_center(1))])
        world.lane = np.array([1])
        pcm.step(world, EGO, t)
    starts = [e.start_time for e in pcm.events if e.kind is ConflictKind.EMERGENCY_BRAKE]
    assert len(starts) >= 2
    gaps = np.diff(starts)
    assert (gaps >= CFG.brake_hold + CFG.cooldown - 1e-9).all()


def test_one_active_event_per_actor():
    world = module_world((110.0, 0, 25.0), (112.0, 2, 25.0), (150.0, 1, 25.0))
    pcm = ConflictModule(CFG, ROAD)
    ego = EGO
    for k in range(3000):
        t = k * 0.01
        pcm.step(world, ego, t)
        world.advance(0.01, t, ego, k)
    by_actor = {}
    for e in pcm.events:
        by_actor.setdefault(e.actor_id, []).append(e)
    for events in by_actor.values():
        for a, b in zip(events, events[1:]):
            assert b.start_time >= a.end_time + CFG.cooldown - 1e-9
    cutins = sorted((e for e in pcm.events if e.kind is ConflictKind.CUT_IN), key=lambda e: e.start_time)
    for a, b in zip(cutins, cutins[1:]):
        assert b.start_time >= a.end_time - 1e-9
