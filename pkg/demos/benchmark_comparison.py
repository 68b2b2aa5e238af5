"""Benchmark schemes over a small power sweep.

Runs the Monte Carlo harness at desk scale (65 elements, a few drops) for
the main schemes and prints the aggregated table; the same run is exposed
on the command line as

    mixedfield simulate --preset power_sweep --small --out out/power
"""

from pathlib import Path

from mixedfield import ExperimentSpec, run_experiment
from mixedfield.harness import verify_results
from mixedfield.rotation import PsoConfig

OUT = Path(__file__).resolve().parent / "out" / "power_sweep"

spec = ExperimentSpec(
    preset="power_sweep",
    out_dir=str(OUT),
    schemes=("RA+BF", "FA+BF", "RA+ZF", "FA+ZF", "UpperBound"),
    monte_carlo_drops=3,
    seed=1,
    small=True,
    sweep_values=(10.0, 20.0, 30.0),
    pso=PsoConfig(swarm_size=5, iterations=6),
    zf_pso=PsoConfig(swarm_size=20, iterations=20),
    sca_options={"max_iters": 10, "tol": 1e-3},
)
rows, failures = run_experiment(spec)

print(f"{'scheme':>12} {'P (dBm)':>8} {'mean':>8} {'std':>7}")
for row in rows:
    print(f"{row.scheme:>12} {row.sweep_value:>8.0f} {row.mean_sum_rate:>8.3f} {row.std_sum_rate:>7.3f}")
print(f"\nfailures: {failures}")
print("round-trip verification of stored results:", verify_results(OUT, fraction=0.25))
print(f"outputs in {OUT}")
