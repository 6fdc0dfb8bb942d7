"""A reduced test matrix and its report tables.

Runs all six conditions over the five speeds and three lanes with 20 s
scenarios, then writes the csv tables. Run with
``python3 demos/03_matrix.py [out_dir]``. The full 120 s matrix is
``v2csim matrix --config configs/default.yaml --seeds 1 --out <dir>``.
"""
import sys
import time

from v2csim import harness
from v2csim.config import ScenarioConfig

out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo-matrix"
base = ScenarioConfig(duration=20.0, seed=11)

start = time.perf_counter()
matrix = harness.run_matrix(base, seeds_per_cell=1)
print(f"{len(matrix.runs)} runs in {time.perf_counter() - start:.0f} s\n")

print("Pooled metrics per condition:")
for cond, agg in matrix.aggregates.items():
    pet = "n/a" if agg.f_crit_pet is None else f"{agg.f_crit_pet:.3f}"
    print(f"  {cond:9s} CR {agg.cr:.3f}/km  DHW {agg.f_crit_dhw:.3f}  PET {pet}  E_sens {agg.e_sens_total:.0f}")

print("\nRelative change from adding the PCM, per latency profile:")
for profile, deltas in matrix.pcm_deltas().items():
    text = ", ".join(f"{k} {'n/a' if v is None else f'{v:+.0f}%'}" for k, v in deltas.items())
    print(f"  {profile}: {text}")

harness.save_matrix(matrix, out_dir)
written = harness.report(matrix, out_dir, "csv")
print(f"\nWrote {len(written)} report files to {out_dir}/")
