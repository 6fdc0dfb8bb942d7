import numpy as np
import pytest

from v2csim.metrics import RunLog


def make_log(ego_x, ego_y=None, bgv_x=None, bgv_y=None, bgv_lane=None, ego_lane=None, dt=0.01,
             ego_speed=None, ego_accel=None, lane_width=3.5, road_length=None, events=()):
    """Hand-built RunLog: ego arrays of length n, BGV arrays of shape (n, m)."""
    ego_x = np.asarray(ego_x, dtype=float)
    n = ego_x.size
    ego_y = np.full(n, 1.5 * lane_width) if ego_y is None else np.asarray(ego_y, dtype=float)
    if bgv_x is None:
        bgv_x = np.zeros((n, 0))
    bgv_x = np.asarray(bgv_x, dtype=float).reshape(n, -1)
    m = bgv_x.shape[1]
    bgv_y = np.full((n, m), 1.5 * lane_width) if bgv_y is None else np.asarray(bgv_y, dtype=float).reshape(n, m)
    if bgv_lane is None:
        bgv_lane = np.floor(bgv_y / lane_width).astype(np.int64)
    if ego_lane is None:
        ego_lane = np.floor(ego_y / lane_width).astype(np.int64)
    if ego_speed is None:
        ego_speed = np.gradient(ego_x, dt) if n > 1 else np.zeros(n)
    return RunLog(
        dt=dt, time=np.arange(n) * dt, ego_x=ego_x, ego_y=ego_y, ego_lane=np.asarray(ego_lane),
        ego_speed=np.asarray(ego_speed, dtype=float),
        ego_accel=np.zeros(n) if ego_accel is None else np.asarray(ego_accel, dtype=float),
        bgv_ids=np.arange(1, m + 1), bgv_x=bgv_x, bgv_y=bgv_y, bgv_lane=np.asarray(bgv_lane),
        bgv_speed=np.zeros((n, m)), bgv_length=np.full(m, 4.5), bgv_width=np.full(m, 1.8),
        road_length=road_length, events=list(events),
    )


@pytest.fixture
def log_factory():
    return make_log


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
