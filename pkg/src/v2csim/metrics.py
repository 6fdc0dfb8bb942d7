"""Safety and comfort metrics computed from run logs.

* collision rate -- collisions per km, pooled over runs;
* DHW criticality -- share of steps whose distance headway to the
  same-lane lead is below a threshold (50 m);
* PET criticality -- share of cut-ins whose post-encroachment time is
  below a threshold (1 s);
* comfort -- spectral power of the (absolute) longitudinal acceleration in
  the 0.5-10 Hz band.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ResolutionError, UndefinedRateError
from .pcm import ConflictEvent, ConflictKind

DHW_THRESHOLD = 50.0
PET_THRESHOLD = 1.0
PET_DELTA = 1.0
COMFORT_BAND = (0.5, 10.0)


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    partner_id: int
    overlap_depth: float


@dataclass
class RunLog:
    """Per-step trajectory record of one run.

    Background vehicle arrays are ``(steps, vehicles)`` with one column per
    id ever present; absent entries are NaN (lane -1). ``road_length`` is
    set for ring roads so longitudinal offsets can be wrapped.
    """

    dt: float
    time: np.ndarray
    ego_x: np.ndarray
    ego_y: np.ndarray
    ego_lane: np.ndarray
    ego_speed: np.ndarray
    ego_accel: np.ndarray
    bgv_ids: np.ndarray
    bgv_x: np.ndarray
    bgv_y: np.ndarray
    bgv_speed: np.ndarray
    bgv_lane: np.ndarray
    bgv_length: np.ndarray
    bgv_width: np.ndarray
    ego_length: float = 5.0
    ego_width: float = 1.9
    road_length: Optional[float] = None
    events: List[ConflictEvent] = field(default_factory=list)
    traces: list = field(default_factory=list)
    # sensing time of the command acting at each step (NaN before the first)
    command_state_time: Optional[np.ndarray] = None

    def __len__(self):
        return self.time.size

    @property
    def distance_km(self) -> float:
        # positions advance by speed[k] * dt from step k-1 to step k
        return float(self.ego_speed[1:].sum() * self.dt / 1000.0)

    def wrap(self, dx):
        if self.road_length is None:
            return dx
        half = 0.5 * self.road_length
        return np.mod(dx + half, self.road_length) - half

    def cutin_events(self) -> List[ConflictEvent]:
        return [e for e in self.events if e.kind is ConflictKind.CUT_IN]

    # -- export ----------------------------------------------------------------
    def to_csv(self, path) -> None:
        header = ["time", "ego_x", "ego_y", "ego_lane", "ego_speed", "ego_accel"]
        cols = [self.time, self.ego_x, self.ego_y, self.ego_lane, self.ego_speed, self.ego_accel]
        for j, vid in enumerate(self.bgv_ids):
            header += [f"bgv_{vid}_x", f"bgv_{vid}_y", f"bgv_{vid}_lane", f"bgv_{vid}_speed"]
            cols += [self.bgv_x[:, j], self.bgv_y[:, j], self.bgv_lane[:, j], self.bgv_speed[:, j]]
        data = np.column_stack([np.asarray(c, dtype=float) for c in cols])
        np.savetxt(path, data, fmt="%.10g", delimiter=",", header=",".join(header), comments="")

    def events_to_csv(self, path, collisions: Optional[Sequence[CollisionEvent]] = None) -> None:
        rows = []
        for e in self.events:
            p = e.completion_position
            rows.append([
                f"{e.start_time:.6f}", e.kind.value, e.actor_id, f"{e.end_time:.6f}",
                "" if e.t_cut is None else f"{e.t_cut:.6f}",
                "" if p is None else f"{p[0]:.6f}", "" if p is None else f"{p[1]:.6f}",
                int(e.commanded), "",
            ])
        for c in collisions if collisions is not None else detect_collisions(self):
            rows.append([f"{c.time:.6f}", "Collision", c.partner_id, f"{c.time:.6f}", "", "", "",
                         0, f"{c.overlap_depth:.6f}"])
        rows.sort(key=lambda r: (float(r[0]), r[1], r[2]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "actor_id", "end_time", "t_cut", "p_cut_x", "p_cut_y",
                        "commanded", "overlap_depth"])
            w.writerows(rows)

    def traces_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["direction", "seq", "send_time", "delivery_time", "dropped"])
            for t in self.traces:
                w.writerow([t.direction, t.seq, f"{t.send_time:.6f}", f"{t.delivery_time:.9f}",
                            int(t.dropped)])


# ---------------------------------------------------------------------------
# collisions


def _overlaps(log: RunLog):
    dx = log.wrap(log.bgv_x - log.ego_x[:, None])
    dy = log.bgv_y - log.ego_y[:, None]
    half_l = 0.5 * (log.bgv_length[None, :] + log.ego_length)
    half_w = 0.5 * (log.bgv_width[None, :] + log.ego_width)
    with np.errstate(invalid="ignore"):
        depth = np.minimum(half_l - np.abs(dx), half_w - np.abs(dy))
        hit = depth > 0
    return hit, depth


def detect_collisions(log: RunLog) -> List[CollisionEvent]:
    """One event per contiguous interval of ego/BGV footprint overlap."""
    if log.bgv_ids.size == 0 or len(log) == 0:
        return []
    hit, depth = _overlaps(log)
    prev = np.vstack([np.zeros((1, hit.shape[1]), dtype=bool), hit[:-1]])
    k_idx, j_idx = np.nonzero(hit & ~prev)
    events = [CollisionEvent(float(log.time[k]), int(log.bgv_ids[j]), float(depth[k, j]))
              for k, j in zip(k_idx, j_idx)]
    events.sort(key=lambda e: (e.time, e.partner_id))
    return events


def collision_rate(runs: Iterable[Tuple[int, float]]) -> float:
    """Total collisions over total kilometres driven."""
    runs = list(runs)
    collisions = sum(n for n, _ in runs)
    distance = sum(d for _, d in runs)
    if not distance > 0:
        raise UndefinedRateError("total distance is zero")
    return collisions / distance


# ---------------------------------------------------------------------------
# distance headway


def dhw_series(log: RunLog) -> np.ndarray:
    """Euclidean distance to the nearest same-lane vehicle ahead; NaN without a lead."""
    n = len(log)
    if log.bgv_ids.size == 0:
        return np.full(n, np.nan)
    dx = log.wrap(log.bgv_x - log.ego_x[:, None])
    dy = log.bgv_y - log.ego_y[:, None]
    with np.errstate(invalid="ignore"):
        ahead = (log.bgv_lane == log.ego_lane[:, None]) & (dx > 0)
    cand = np.where(ahead, dx, np.inf)
    j = np.argmin(cand, axis=1)
    rows = np.arange(n)
    has_lead = np.isfinite(cand[rows, j])
    dist = np.hypot(dx[rows, j], dy[rows, j])
    return np.where(has_lead, dist, np.nan)


def dhw_counts(log: RunLog, threshold: float = DHW_THRESHOLD) -> Tuple[int, int]:
    dhw = dhw_series(log)
    with np.errstate(invalid="ignore"):
        critical = int(np.count_nonzero(dhw < threshold))
    return critical, len(log)


def f_crit_dhw(log: RunLog, threshold: float = DHW_THRESHOLD) -> float:
    """Fraction of steps with DHW below ``threshold``; lead-less steps count as non-critical."""
    if len(log) == 0:
        raise ValueError("log is empty")
    critical, total = dhw_counts(log, threshold)
    return critical / total


# ---------------------------------------------------------------------------
# post-encroachment time


def pet(event: ConflictEvent, log: RunLog, delta: float = PET_DELTA) -> Optional[float]:
    """Time from cut-in completion until the ego comes within ``delta`` of the
    completion point; None if it never does."""
    if event.kind is not ConflictKind.CUT_IN:
        raise ValueError("PET is defined for cut-in events only")
    if event.completion_position is None:
        return None
    t_cut = event.end_time
    k0 = int(np.searchsorted(log.time, t_cut - 1e-9, side="left"))
    if k0 >= len(log):
        return None
    px, py = event.completion_position
    dx = log.wrap(log.ego_x[k0:] - px)
    dy = log.ego_y[k0:] - py
    inside = np.flatnonzero(dx * dx + dy * dy < delta * delta)
    if inside.size == 0:
        return None
    return max(float(log.time[k0 + inside[0]] - t_cut), 0.0)


def pet_frequency(pets: Sequence[Optional[float]], threshold: float = PET_THRESHOLD) -> Optional[float]:
    """Share of cut-ins with PET below ``threshold``; None when there are no cut-ins."""
    if len(pets) == 0:
        return None
    return sum(1 for p in pets if p is not None and p < threshold) / len(pets)


def run_pets(log: RunLog, delta: float = PET_DELTA) -> List[Optional[float]]:
    return [pet(e, log, delta) for e in log.cutin_events()]


def f_crit_pet(logs: Sequence[RunLog], threshold: float = PET_THRESHOLD,
               delta: float = PET_DELTA) -> Optional[float]:
    pets: List[Optional[float]] = []
    for log in logs:
        pets.extend(run_pets(log, delta))
    return pet_frequency(pets, threshold)


# ---------------------------------------------------------------------------
# comfort


def power_spectrum(accel, dt: float, absolute: bool = True):
    """One-sided power spectrum ``|DFT|^2 / N`` (interior bins doubled).

    Summing every bin returns ``sum(a**2)``.
    """
    a = np.asarray(accel, dtype=float)
    if absolute:
        a = np.abs(a)
    n = a.size
    spec = np.fft.rfft(a)
    power = (spec.real**2 + spec.imag**2) / n
    if n % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    return np.fft.rfftfreq(n, dt), power


def band_power(accel, dt: float, band: Tuple[float, float] = COMFORT_BAND,
               absolute: bool = True) -> float:
    """Total spectral power in ``band`` (inclusive) of the acceleration signal."""
    lo, hi = band
    n = np.asarray(accel).size
    if lo > 0 and n * lo * dt < 2.0 - 1e-9:
        raise ResolutionError(
            f"{n} samples at dt={dt} cannot resolve {lo} Hz; need at least {2 / (lo * dt):.0f}"
        )
    if n == 0:
        raise ResolutionError("empty signal")
    freqs, power = power_spectrum(accel, dt, absolute)
    tol = 1e-9 / (n * dt)
    mask = (freqs >= lo - tol) & (freqs <= hi + tol)
    return float(power[mask].sum())


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    collisions: int
    distance_km: float
    cr: Optional[float]
    n_dhw_crit: int
    n_total: int
    f_crit_dhw: float
    n_pet_crit: int
    n_cutin: int
    f_crit_pet: Optional[float]
    e_sens: float
    n_cutin_commanded: int = 0
    n_brake: int = 0
    pets: List[Optional[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(log: RunLog, dhw_threshold: float = DHW_THRESHOLD,
             pet_threshold: float = PET_THRESHOLD, delta: float = PET_DELTA,
             band: Tuple[float, float] = COMFORT_BAND, absolute: bool = True) -> MetricsReport:
    collisions = detect_collisions(log)
    distance = log.distance_km
    n_dhw, n_total = dhw_counts(log, dhw_threshold)
    pets = run_pets(log, delta)
    n_pet = sum(1 for p in pets if p is not None and p < pet_threshold)
    cutins = log.cutin_events()
    return MetricsReport(
        collisions=len(collisions),
        distance_km=distance,
        cr=len(collisions) / distance if distance > 0 else None,
        n_dhw_crit=n_dhw,
        n_total=n_total,
        f_crit_dhw=n_dhw / n_total if n_total else 0.0,
        n_pet_crit=n_pet,
        n_cutin=len(pets),
        f_crit_pet=pet_frequency(pets, pet_threshold),
        e_sens=band_power(log.ego_accel, log.dt, band, absolute),
        n_cutin_commanded=sum(1 for e in cutins if e.commanded),
        n_brake=sum(1 for e in log.events if e.kind is ConflictKind.EMERGENCY_BRAKE),
        pets=pets,
    )


@dataclass
class AggregateReport:
    """Metrics pooled over runs: counts are summed before dividing."""

    runs: int
    collisions: int
    distance_km: float
    cr: Optional[float]
    n_dhw_crit: int
    n_total: int
    f_crit_dhw: Optional[float]
    n_pet_crit: int
    n_cutin: int
    f_crit_pet: Optional[float]
    e_sens_total: float
    e_sens_mean: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def pool(reports: Sequence[MetricsReport]) -> AggregateReport:
    reports = list(reports)
    collisions = sum(r.collisions for r in reports)
    distance = math.fsum(r.distance_km for r in reports)
    n_dhw = sum(r.n_dhw_crit for r in reports)
    n_total = sum(r.n_total for r in reports)
    n_pet = sum(r.n_pet_crit for r in reports)
    n_cut = sum(r.n_cutin for r in reports)
    e_total = math.fsum(r.e_sens for r in reports)
    return AggregateReport(
        runs=len(reports),
        collisions=collisions,
        distance_km=distance,
        cr=collisions / distance if distance > 0 else None,
        n_dhw_crit=n_dhw,
        n_total=n_total,
        f_crit_dhw=n_dhw / n_total if n_total else None,
        n_pet_crit=n_pet,
        n_cutin=n_cut,
        f_crit_pet=n_pet / n_cut if n_cut else None,
        e_sens_total=e_total,
        e_sens_mean=e_total / len(reports) if reports else None,
    )
