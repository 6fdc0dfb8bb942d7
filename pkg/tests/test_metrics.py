"""Collision, DHW, PET and comfort metrics against hand-built logs and brute-force oracles."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_log
from v2csim import metrics
from v2csim.errors import ResolutionError, UndefinedRateError
from v2csim.metrics import MetricsReport, pool
from v2csim.pcm import ConflictEvent, ConflictKind

# -- collisions --------------------------------------------------------------


def test_far_apart_no_collision():
    n = 100
    log = make_log(np.linspace(0, 10, n), bgv_x=np.linspace(100, 110, n))
    assert metrics.detect_collisions(log) == []


def test_overlap_counted_on_rising_edge():
    n = 20
    bx = np.full(n, 100.0)
    bx[5:10] = 2.0  # overlaps the ego at x=0 for 5 steps
    log = make_log(np.zeros(n), ego_speed=np.zeros(n), bgv_x=bx)
    events = metrics.detect_collisions(log)
    assert len(events) == 1 and events[0].time == pytest.approx(0.05) and events[0].partner_id == 1


def test_two_overlap_intervals_are_two_events():
    n = 30
    bx = np.full(n, 100.0)
    bx[3:6] = 1.0
    bx[15:20] = -1.0
    log = make_log(np.zeros(n), ego_speed=np.zeros(n), bgv_x=bx)
    assert len(metrics.detect_collisions(log)) == 2


def test_collision_rate_pooled_arithmetic():
    assert metrics.collision_rate([(2, 60.0), (0, 40.0)]) == pytest.approx(0.02)
    assert metrics.collision_rate([(0, 10.0), (0, 5.0)]) == 0.0
    with pytest.raises(UndefinedRateError):
        metrics.collision_rate([(1, 0.0), (0, 0.0)])


@settings(max_examples=100, deadline=None)
@given(runs=st.lists(st.tuples(st.integers(0, 20), st.floats(0.1, 100)), min_size=1, max_size=20))
def test_collision_rate_is_pooled_not_averaged(runs):
    expected = sum(c for c, _ in runs) / sum(d for _, d in runs)
    assert metrics.collision_rate(runs) == pytest.approx(expected, rel=1e-12)
    half = len(runs) // 2
    reports = [MetricsReport(c, d, c / d, 0, 1, 0.0, 0, 0, None, 0.0) for c, d in runs]
    assert pool(reports[:half] + reports[half:]).cr == pytest.approx(expected, rel=1e-12)


# -- DHW ---------------------------------------------------------------------

def test_dhw_lead_always_far():
    n = 1000
    log = make_log(np.zeros(n), ego_speed=np.zeros(n), bgv_x=np.full(n, 100.0))
    assert metrics.f_crit_dhw(log) == 0.0


def test_dhw_direct_count():
    n = 1000
    bx = np.full(n, 80.0)
    bx[100:300] = 30.0
    log = make_log(np.zeros(n), ego_speed=np.zeros(n), bgv_x=bx)
    assert metrics.f_crit_dhw(log) == pytest.approx(0.2)


def test_dhw_ignores_other_lanes_and_vehicles_behind():
    n = 10
    bx = np.column_stack([np.full(n, 20.0), np.full(n, -10.0)])
    by = np.column_stack([np.full(n, 1.75), np.full(n, 5.25)])
    log = make_log(np.zeros(n), ego_speed=np.zeros(n), bgv_x=bx, bgv_y=by)
    assert np.isnan(metrics.dhw_series(log)).all()
    assert metrics.f_crit_dhw(log) == 0.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(0, 6))
def test_dhw_matches_brute_force(seed, m):
    rng = np.random.default_rng(seed)
    n = 50
    ego_x = np.cumsum(rng.uniform(0, 1, n))
    ego_y = rng.choice([1.75, 5.25, 8.75], n)
    bx = rng.uniform(-50, 150, (n, m))
    by = rng.choice([1.75, 5.25, 8.75], (n, m))
    log = make_log(ego_x, ego_y, bx, by, road_length=None)
    series = metrics.dhw_series(log)
    for k in range(n):
        cands = [(bx[k, j] - ego_x[k], j) for j in range(m)
                 if log.bgv_lane[k, j] == log.ego_lane[k] and bx[k, j] > ego_x[k]]
        if not cands:
            assert math.isnan(series[k])
        else:
            _, j = min(cands)
            assert series[k] == pytest.approx(math.hypot(bx[k, j] - ego_x[k], by[k, j] - ego_y[k]))
    assert 0.0 <= metrics.f_crit_dhw(log) <= 1.0


# -- PET ---------------------------------------------------------------------

def cutin(t_cut, pos):
    ev = ConflictEvent(ConflictKind.CUT_IN, 1, t_cut - 3.0, t_cut)
    ev.completion_position = pos
    return ev


def test_pet_exact_reach_time():
    dt = 0.01
    n = 600
    t = np.arange(n) * dt
    ego_x = 20.0 * t
    log = make_log(ego_x, ego_speed=np.full(n, 20.0))
    t_cut = 2.0
    # completion point reached exactly 0.8 s after t_cut
    ev = cutin(t_cut, (20.0 * 2.8, 5.25))
    assert metrics.pet(ev, log, delta=1e-6) == pytest.approx(0.8, abs=1e-9)


def test_pet_zero_when_already_inside():
    n = 300
    log = make_log(np.zeros(n), ego_speed=np.zeros(n))
    assert metrics.pet(cutin(1.0, (0.5, 5.25)), log) == 0.0


def test_pet_absent_when_ego_moves_away():
    n = 500
    log = make_log(np.zeros(n), ego_y=np.full(n, 8.75), ego_speed=np.zeros(n))
    assert metrics.pet(cutin(1.0, (0.0, 1.75)), log) is None


def test_pet_only_for_cutins():
    log = make_log(np.zeros(10))
    with pytest.raises(ValueError):
        metrics.pet(ConflictEvent(ConflictKind.EMERGENCY_BRAKE, 1, 0, 1), log)


def brute_pet(event, log, delta):
    t_cut = event.end_time
    px, py = event.completion_position
    for k in range(len(log)):
        if log.time[k] < t_cut - 1e-9:
            continue
        dx = log.ego_x[k] - px
        if log.road_length is not None:
            dx = (dx + log.road_length / 2) % log.road_length - log.road_length / 2
        if math.hypot(dx, log.ego_y[k] - py) < delta:
            return max(log.time[k] - t_cut, 0.0)
    return None


def test_pet_equals_brute_force_scan_on_fuzzed_trajectories():
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        n = int(rng.integers(50, 300))
        ring = 500.0 if trial % 3 == 0 else None
        ego_x = np.cumsum(rng.uniform(0, 0.5, n))
        if ring:
            ego_x = np.mod(ego_x, ring)
        ego_y = 5.25 + np.cumsum(rng.normal(0, 0.05, n))
        log = make_log(ego_x, ego_y, ego_speed=np.ones(n), road_length=ring)
        k = int(rng.integers(0, n))
        t_cut = float(log.time[k])
        target = int(rng.integers(0, n))
        pos = (float(ego_x[target] + rng.normal(0, 1)), float(ego_y[target] + rng.normal(0, 1)))
        ev = cutin(t_cut, pos)
        delta = float(rng.uniform(0.2, 2.0))
        assert metrics.pet(ev, log, delta) == brute_pet(ev, log, delta)


def test_pet_frequency():
    assert metrics.pet_frequency([0.5, 1.5, 0.9]) == pytest.approx(2 / 3)
    assert metrics.pet_frequency([]) is None
    assert metrics.pet_frequency([None, 0.2]) == 0.5
    assert metrics.f_crit_pet([make_log(np.zeros(10))]) is None


# -- comfort -----------------------------------------------------------------

def test_zero_signal_zero_power():
    assert metrics.band_power(np.zeros(1000), 0.01) == 0.0


def test_parseval_full_band():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(400, 5000))
        a = rng.normal(0, 2, n)
        total = metrics.band_power(a, 0.01, (0.0, 50.0), absolute=True)
        assert total == pytest.approx(np.sum(np.abs(a) ** 2), rel=1e-9)
        raw = metrics.band_power(a, 0.01, (0.0, 50.0), absolute=False)
        assert raw == pytest.approx(np.sum(a**2), rel=1e-9)


def test_tone_power_lies_in_band():
    t = np.arange(1000) * 0.01
    a = np.sin(2 * np.pi * 2 * t)
    inside = metrics.band_power(a, 0.01, (0.5, 10.0), absolute=False)
    total = metrics.band_power(a, 0.01, (0.0, 50.0), absolute=False)
    assert inside >= 0.99 * total


def test_band_edges_inclusive():
    n, dt = 1000, 0.01
    t = np.arange(n) * dt
    a = np.cos(2 * np.pi * 0.5 * t) + np.cos(2 * np.pi * 10.0 * t)
    assert metrics.band_power(a, dt, (0.5, 10.0), absolute=False) == pytest.approx(np.sum(a**2), rel=1e-9)


def test_short_series_raises():
    with pytest.raises(ResolutionError):
        metrics.band_power(np.ones(100), 0.01)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.integers(1, 999))
def test_band_power_circular_shift_invariance(seed, shift):
    a = np.random.default_rng(seed).normal(0, 1, 1000)
    p0 = metrics.band_power(a, 0.01)
    p1 = metrics.band_power(np.roll(a, shift), 0.01)
    assert p1 == pytest.approx(p0, rel=1e-9)


def test_spectrum_matches_direct_dft():
    rng = np.random.default_rng(5)
    a = rng.normal(size=64)
    freqs, power = metrics.power_spectrum(a, 0.1, absolute=False)
    n = a.size
    k = np.arange(n)
    for i, f in enumerate(freqs):
        coef = np.sum(a * np.exp(-2j * np.pi * i * k / n))
        expected = abs(coef) ** 2 / n * (1 if i in (0, n // 2) else 2)
        assert power[i] == pytest.approx(expected, rel=1e-9)
        assert f == pytest.approx(i / (n * 0.1))


# -- reports -----------------------------------------------------------------

def test_evaluate_and_pool_consistency():
    n = 1000
    bx = np.full(n, 80.0)
    bx[:250] = 30.0
    ev = cutin(2.0, (0.5, 5.25))
    log = make_log(np.zeros(n), ego_speed=np.full(n, 10.0), bgv_x=bx, events=[ev],
                   ego_accel=np.random.default_rng(0).normal(size=n))
    rep = metrics.evaluate(log)
    assert rep.f_crit_dhw == pytest.approx(0.25)
    assert rep.n_cutin == 1 and rep.pets == [0.0] and rep.f_crit_pet == 1.0
    assert rep.distance_km == pytest.approx(10.0 * (n - 1) * 0.01 / 1000)
    agg = pool([rep, rep])
    assert agg.n_dhw_crit == 2 * rep.n_dhw_crit and agg.f_crit_dhw == rep.f_crit_dhw
    assert agg.e_sens_total == pytest.approx(2 * rep.e_sens)
    assert agg.e_sens_mean == pytest.approx(rep.e_sens)
    assert pool([]).cr is None and pool([]).f_crit_pet is None


def test_log_csv_exports(tmp_path):
    n = 50
    ev = cutin(0.2, (1.0, 5.25))
    log = make_log(np.linspace(0, 1, n), bgv_x=np.full(n, 50.0), events=[ev])
    log.to_csv(tmp_path / "runlog.csv")
    header = (tmp_path / "runlog.csv").read_text().splitlines()[0]
    assert header == "time,ego_x,ego_y,ego_lane,ego_speed,ego_accel,bgv_1_x,bgv_1_y,bgv_1_lane,bgv_1_speed"
    log.events_to_csv(tmp_path / "events.csv")
    lines = (tmp_path / "events.csv").read_text().splitlines()
    assert lines[0].startswith("time,kind,actor_id,end_time,t_cut,p_cut_x,p_cut_y")
    assert ",CutIn,1," in lines[1]
