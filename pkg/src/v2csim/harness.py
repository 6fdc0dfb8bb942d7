"""Single runs, the condition x speed x lane test matrix, and report tables.

The matrix crosses two PCM modes with three latency profiles (six
conditions) and, inside each condition, five initial speeds, three initial
lanes and ``seeds_per_cell`` repetitions. Every cell seed is derived from
one master seed by :func:`cell_seed`, which ignores the condition, so the
six conditions are paired on identical initial traffic.

Aggregation pools counts and distances over all runs of a condition before
dividing; per-run reports are kept for significance testing.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import MATRIX_LANES, MATRIX_SPEEDS_KMH, ScenarioConfig
from .errors import ConfigurationError
from .metrics import AggregateReport, MetricsReport, RunLog, evaluate, pool, power_spectrum
from .simulation import simulate

PROFILES = ("NL", "CL", "HL")
CONDITIONS: Tuple[Tuple[bool, str], ...] = tuple(
    (pcm, profile) for pcm in (False, True) for profile in PROFILES)
REPORT_METRICS = ("cr", "f_crit_dhw", "f_crit_pet", "e_sens_total")

ENV_OUT_DIR = "V2CSIM_OUT_DIR"
ENV_WORKERS = "V2CSIM_WORKERS"


class MatrixRunError(RuntimeError):
    """A run inside the matrix failed; ``cell`` identifies it."""

    def __init__(self, cell: "CellKey", seed: int, cause: BaseException):
        super().__init__(f"run {cell.label()} (seed {seed}) failed: {cause!r}")
        self.cell = cell
        self.seed = seed


class ReportError(OSError):
    """A report file could not be written."""


def condition_key(pcm_enabled: bool, profile: str) -> str:
    return f"{'PCM' if pcm_enabled else 'noPCM'}-{profile}"


def cell_seed(master_seed: int, speed_index: int, lane_index: int, rep: int) -> int:
    """Seed of one matrix cell.

    ``SeedSequence(master_seed, spawn_key=(speed_index, lane_index, rep))``
    hashed to a 64-bit integer. The condition is deliberately not part of
    the key, so all six conditions of a cell share initial traffic.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(speed_index, lane_index, rep))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# single runs


def evaluate_config(cfg: ScenarioConfig, log: RunLog) -> MetricsReport:
    m = cfg.metrics
    return evaluate(log, m.dhw_threshold, m.pet_threshold, m.pet_delta, m.band, m.absolute_accel)


def run_single(cfg: ScenarioConfig, out_dir=None) -> Tuple[RunLog, MetricsReport]:
    """Simulate one scenario and evaluate it.

    With ``out_dir`` the run is persisted as ``runlog.csv``, ``events.csv``,
    ``channels.csv``, ``metrics.json`` and ``config.json``; the files are
    byte-identical for identical configurations.
    """
    cfg.validate()
    log = simulate(cfg)
    report = evaluate_config(cfg, log)
    if out_dir is not None:
        write_run(cfg, log, report, out_dir)
    return log, report


def write_run(cfg: ScenarioConfig, log: RunLog, report: MetricsReport, out_dir) -> List[Path]:
    out = Path(out_dir)
    paths = [out / name for name in
             ("runlog.csv", "events.csv", "channels.csv", "metrics.json", "config.json")]
    try:
        out.mkdir(parents=True, exist_ok=True)
        log.to_csv(paths[0])
        log.events_to_csv(paths[1])
        log.traces_to_csv(paths[2])
        paths[3].write_text(report.to_json() + "\n")
        paths[4].write_text(cfg.to_json() + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write run files under {out}: {exc}") from exc
    return paths


# ---------------------------------------------------------------------------
# matrix


@dataclass(frozen=True, order=True)
class CellKey:
    pcm_enabled: bool
    profile: str
    speed_kmh: float
    lane: int
    rep: int

    @property
    def condition(self) -> str:
        return condition_key(self.pcm_enabled, self.profile)

    def label(self) -> str:
        return f"{self.condition}/{self.speed_kmh:g}kmh/lane{self.lane}/rep{self.rep}"


@dataclass
class RunRecord:
    key: CellKey
    seed: int
    report: MetricsReport

    def to_dict(self) -> dict:
        return {"key": asdict(self.key), "seed": self.seed, "report": self.report.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(CellKey(**data["key"]), int(data["seed"]), MetricsReport(**data["report"]))


def _percent_change(new: Optional[float], base: Optional[float]) -> Optional[float]:
    if new is None or base is None or base == 0:
        return None
    return (new / base - 1.0) * 100.0


@dataclass
class MatrixReport:
    """Per-run records, pooled per-condition aggregates and the band spectra.

    ``spectra`` maps a condition to its mean one-sided power spectrum over
    ``spectrum_freqs`` (the comfort band only).
    """

    runs: List[RunRecord]
    master_seed: int
    seeds_per_cell: int
    profiles: Dict[str, dict] = field(default_factory=dict)
    spectrum_freqs: List[float] = field(default_factory=list)
    spectra: Dict[str, List[float]] = field(default_factory=dict)

    def __post_init__(self):
        self.runs = sorted(self.runs, key=lambda r: r.key)

    @property
    def conditions(self) -> List[str]:
        present = {r.key.condition for r in self.runs}
        return [condition_key(p, q) for p, q in CONDITIONS if condition_key(p, q) in present]

    def reports(self, condition: str) -> List[MetricsReport]:
        return [r.report for r in self.runs if r.key.condition == condition]

    def aggregate(self, condition: str) -> AggregateReport:
        return pool(self.reports(condition))

    @property
    def aggregates(self) -> Dict[str, AggregateReport]:
        return {c: self.aggregate(c) for c in self.conditions}

    def pcm_deltas(self) -> Dict[str, Dict[str, Optional[float]]]:
        """Per profile: with-PCM relative to without-PCM, in percent."""
        agg = self.aggregates
        out = {}
        for profile in PROFILES:
            on, off = agg.get(condition_key(True, profile)), agg.get(condition_key(False, profile))
            if on is None or off is None:
                continue
            out[profile] = {m: _percent_change(getattr(on, m), getattr(off, m))
                            for m in REPORT_METRICS}
        return out

    def latency_deltas(self) -> Dict[str, Dict[str, Dict[str, Optional[float]]]]:
        """Per PCM mode: CL and HL relative to NL, in percent."""
        agg = self.aggregates
        out = {}
        for pcm in (False, True):
            base = agg.get(condition_key(pcm, "NL"))
            if base is None:
                continue
            mode = {}
            for profile in PROFILES[1:]:
                other = agg.get(condition_key(pcm, profile))
                if other is not None:
                    mode[f"NL vs {profile}"] = {
                        m: _percent_change(getattr(other, m), getattr(base, m))
                        for m in REPORT_METRICS}
            out["PCM" if pcm else "noPCM"] = mode
        return out

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "seeds_per_cell": self.seeds_per_cell,
            "profiles": self.profiles,
            "aggregates": {c: a.to_dict() for c, a in self.aggregates.items()},
            "pcm_deltas_percent": self.pcm_deltas(),
            "latency_deltas_percent": self.latency_deltas(),
            "spectrum_freqs": self.spectrum_freqs,
            "spectra": self.spectra,
            "runs": [r.to_dict() for r in self.runs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MatrixReport":
        return cls(
            runs=[RunRecord.from_dict(r) for r in data["runs"]],
            master_seed=int(data["master_seed"]),
            seeds_per_cell=int(data["seeds_per_cell"]),
            profiles=data.get("profiles", {}),
            spectrum_freqs=list(data.get("spectrum_freqs", [])),
            spectra={k: list(v) for k, v in data.get("spectra", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def matrix_cells(base: ScenarioConfig, seeds_per_cell: int, master_seed: int,
                 speeds_kmh: Sequence[float] = MATRIX_SPEEDS_KMH,
                 lanes: Sequence[int] = MATRIX_LANES,
                 conditions: Sequence[Tuple[bool, str]] = CONDITIONS):
    """(CellKey, config) for every run of the matrix, in canonical order."""
    if seeds_per_cell < 1:
        raise ConfigurationError("must be >= 1", "seeds_per_cell")
    cells = []
    for pcm, profile in conditions:
        for si, speed in enumerate(speeds_kmh):
            for li, lane in enumerate(lanes):
                for rep in range(seeds_per_cell):
                    seed = cell_seed(master_seed, si, li, rep)
                    cfg = replace(base, pcm_enabled=pcm, latency_profile=profile,
                                  initial_speed=speed / 3.6, initial_lane=lane, seed=seed)
                    cells.append((CellKey(pcm, profile, float(speed), int(lane), rep), cfg))
    return cells


def _band_spectrum(cfg: ScenarioConfig, log: RunLog):
    freqs, power = power_spectrum(log.ego_accel, log.dt, cfg.metrics.absolute_accel)
    lo, hi = cfg.metrics.band
    mask = (freqs >= lo) & (freqs <= hi)
    return freqs[mask], power[mask]


def _execute(task):
    key, cfg, out_dir = task
    try:
        cfg.validate()
        log = simulate(cfg)
        report = evaluate_config(cfg, log)
        if out_dir is not None:
            write_run(cfg, log, report, Path(out_dir) / "runs" / key.label().replace("/", "_"))
        freqs, power = _band_spectrum(cfg, log)
    except Exception as exc:  # noqa: BLE001 - re-raised with the cell attached
        raise MatrixRunError(key, cfg.seed, exc) from exc
    return key, cfg.seed, report, freqs, power


def resolve_workers(workers: Optional[int] = None) -> int:
    """Explicit value, else ``$V2CSIM_WORKERS``, else 1."""
    if workers is None:
        env = os.environ.get(ENV_WORKERS)
        if env:
            try:
                workers = int(env)
            except ValueError as exc:
                raise ConfigurationError(f"not an integer: {env!r}", ENV_WORKERS) from exc
        else:
            workers = 1
    if workers < 1:
        raise ConfigurationError("must be >= 1", "workers")
    return workers


def run_matrix(base: ScenarioConfig, seeds_per_cell: int = 1, master_seed: Optional[int] = None,
               workers: Optional[int] = None, speeds_kmh: Sequence[float] = MATRIX_SPEEDS_KMH,
               lanes: Sequence[int] = MATRIX_LANES,
               conditions: Sequence[Tuple[bool, str]] = CONDITIONS,
               save_logs_to=None) -> MatrixReport:
    """Run every cell of the matrix, serially or on a process pool.

    ``master_seed`` defaults to ``base.seed``. The report does not depend on
    the worker count or on execution order. ``save_logs_to`` additionally
    persists each run's files under ``<dir>/runs/<cell>``.
    """
    base.validate()
    master = base.seed if master_seed is None else int(master_seed)
    cells = matrix_cells(base, seeds_per_cell, master, speeds_kmh, lanes, conditions)
    tasks = [(key, cfg, save_logs_to) for key, cfg in cells]
    n_workers = min(resolve_workers(workers), max(len(tasks), 1))
    if n_workers == 1:
        results = [_execute(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool_:
            results = list(pool_.map(_execute, tasks, chunksize=1))

    # accumulate in cell order so floating-point sums do not depend on scheduling
    results.sort(key=lambda r: r[0])
    runs, sums, counts, freqs = [], {}, {}, None
    for key, seed, report, f, power in results:
        runs.append(RunRecord(key, seed, report))
        if freqs is None:
            freqs = f
        if f.shape == freqs.shape:
            cond = key.condition
            sums[cond] = sums.get(cond, 0.0) + power
            counts[cond] = counts.get(cond, 0) + 1
    spectra = {c: (sums[c] / counts[c]).tolist() for c in sums}
    profiles = {name: base.profiles[name].to_dict() for _, name in conditions}
    return MatrixReport(runs, master, seeds_per_cell, profiles,
                        [] if freqs is None else freqs.tolist(), spectra)


# ---------------------------------------------------------------------------
# report tables


def _fmt(value: Optional[float], digits: int = 4) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return ""
    return f"{value:.{digits}f}"


def _fmt_pct(value: Optional[float]) -> str:
    return "" if value is None else f"{value:+.1f}%"


def metric_table(matrix: MatrixReport, metric: str) -> List[List[str]]:
    """Rows without/with PCM over NL, CL, HL plus the PCM increase row."""
    agg = matrix.aggregates
    rows = [["", *PROFILES]]
    for pcm, label in ((False, "Without PCM"), (True, "With PCM")):
        rows.append([label] + [
            _fmt(getattr(agg[condition_key(pcm, p)], metric))
            if condition_key(pcm, p) in agg else "" for p in PROFILES])
    deltas = matrix.pcm_deltas()
    rows.append(["Increase"] + [_fmt_pct(deltas.get(p, {}).get(metric)) for p in PROFILES])
    return rows


def latency_table(matrix: MatrixReport, metric: str) -> List[List[str]]:
    """Rows NL vs CL / NL vs HL over the two PCM modes."""
    deltas = matrix.latency_deltas()
    rows = [["Comparison", "Without PCM", "With PCM"]]
    for profile in PROFILES[1:]:
        comp = f"NL vs {profile}"
        rows.append([comp] + [_fmt_pct(deltas.get(mode, {}).get(comp, {}).get(metric))
                              for mode in ("noPCM", "PCM")])
    return rows


TABLES = {
    "collision_rate.csv": ("cr", metric_table),
    "dhw_frequency.csv": ("f_crit_dhw", metric_table),
    "dhw_relative_change.csv": ("f_crit_dhw", latency_table),
    "pet_frequency.csv": ("f_crit_pet", metric_table),
    "pet_relative_change.csv": ("f_crit_pet", latency_table),
    "band_power.csv": ("e_sens_total", metric_table),
    "band_power_relative_change.csv": ("e_sens_total", latency_table),
    "collision_rate_relative_change.csv": ("cr", latency_table),
}


def _write(path: Path, writer) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer(fh)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def report(matrix: MatrixReport, out_dir, fmt: str = "json", spectrum: bool = True) -> List[Path]:
    """Write the matrix summary.

    ``fmt="json"`` writes ``summary.json`` (aggregates and deltas, no
    per-run records); ``fmt="csv"`` writes one table per metric plus
    ``runs.csv``. With ``spectrum`` a whitespace-separated
    ``spectrum.dat`` (frequency column then one column per condition)
    is added for plotting.
    """
    out = Path(out_dir)
    written: List[Path] = []
    if fmt == "json":
        data = matrix.to_dict()
        data.pop("runs")
        data.pop("spectra")
        data.pop("spectrum_freqs")
        path = out / "summary.json"
        _write(path, lambda fh: fh.write(json.dumps(data, indent=2, sort_keys=True) + "\n"))
        written.append(path)
    elif fmt == "csv":
        for name, (metric, table) in TABLES.items():
            rows = table(matrix, metric)
            path = out / name
            _write(path, lambda fh, rows=rows: csv.writer(fh).writerows(rows))
            written.append(path)
        path = out / "runs.csv"
        _write(path, lambda fh: _write_runs(matrix, fh))
        written.append(path)
    else:
        raise ConfigurationError(f"unknown format {fmt!r}; use json or csv", "format")
    if spectrum and matrix.spectra:
        path = out / "spectrum.dat"
        _write(path, lambda fh: _write_spectrum(matrix, fh))
        written.append(path)
    return written


def _write_runs(matrix: MatrixReport, fh) -> None:
    w = csv.writer(fh)
    w.writerow(["condition", "speed_kmh", "lane", "rep", "seed", "collisions", "distance_km",
                "n_dhw_crit", "n_total", "n_pet_crit", "n_cutin", "e_sens"])
    for r in matrix.runs:
        m = r.report
        w.writerow([r.key.condition, f"{r.key.speed_kmh:g}", r.key.lane, r.key.rep, r.seed,
                    m.collisions, f"{m.distance_km:.6f}", m.n_dhw_crit, m.n_total, m.n_pet_crit,
                    m.n_cutin, f"{m.e_sens:.6f}"])


def _write_spectrum(matrix: MatrixReport, fh) -> None:
    conds = [c for c in matrix.conditions if c in matrix.spectra]
    fh.write("# freq_hz " + " ".join(conds) + "\n")
    for k, f in enumerate(matrix.spectrum_freqs):
        fh.write(f"{f:.6f} " + " ".join(f"{matrix.spectra[c][k]:.9g}" for c in conds) + "\n")


def load_matrix(path) -> MatrixReport:
    """Read a ``matrix.json`` written by :func:`save_matrix` (file or directory)."""
    p = Path(path)
    if p.is_dir():
        p = p / "matrix.json"
    with open(p) as fh:
        return MatrixReport.from_dict(json.load(fh))


def save_matrix(matrix: MatrixReport, out_dir) -> Path:
    path = Path(out_dir) / "matrix.json"
    _write(path, lambda fh: fh.write(matrix.to_json() + "\n"))
    return path


def resolve_out_dir(out_dir=None) -> Path:
    """Explicit value, else ``$V2CSIM_OUT_DIR``, else ``./v2csim-out``."""
    if out_dir is not None:
        return Path(out_dir)
    return Path(os.environ.get(ENV_OUT_DIR, "v2csim-out"))
