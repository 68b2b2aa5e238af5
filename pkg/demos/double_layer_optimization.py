"""One full joint optimization, with both convergence traces.

Places a random two-cell, three-users-per-cell drop, runs the inner
beamformer optimizer at zero rotation (fixed-antenna baseline), then the
double-layer search, and prints the inner ascent and the outer swarm's
best-fitness trace.
"""

import math
from pathlib import Path

import numpy as np

from mixedfield import PsoConfig, SystemConfig, canonical_scenario, joint_optimize, place_users
from mixedfield.rotation import inner_beamformers

OUT = Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

cfg = SystemConfig(antenna_count=65, rng_seed=7)
scenario = place_users(canonical_scenario(cfg), 7)
print("user drop (cell, index, angle/pi, range):")
for u in scenario.users:
    print(f"  ({u.cell}, {u.index})  {u.angle/math.pi:5.2f}  {u.range_m:6.2f} m")

sca_options = {"max_iters": 20, "tol": 1e-4}
fixed, _, fixed_result = inner_beamformers(scenario, [0.0, 0.0], cfg.rng_seed, sca_options)
print("\ninner ascent at zero rotation (bps/Hz):")
print("  " + " -> ".join(f"{v:.3f}" for v in fixed_result.trajectory))

joint = joint_optimize(scenario, PsoConfig(swarm_size=10, iterations=12, seed=1), sca_options)
print("\nouter swarm best-fitness trace (bps/Hz):")
print("  " + " -> ".join(f"{v:.3f}" for v in joint.pso.best_trajectory))
print(f"\nfixed antennas: {fixed.sum_rate:.3f} bps/Hz")
print(f"joint design:   {joint.report.sum_rate:.3f} bps/Hz at rotations {np.round(joint.rotations, 4)}")
print(f"rotation gain:  {joint.report.sum_rate - fixed.sum_rate:+.3f} bps/Hz")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(fixed_result.trajectory, marker="o")
    axes[0].set_xlabel("inner iteration")
    axes[0].set_ylabel("sum rate (bps/Hz)")
    axes[0].set_title("beamformer ascent, zero rotation")
    axes[0].grid(alpha=0.3)
    axes[1].plot(joint.pso.best_trajectory, marker="o", label="best")
    axes[1].plot(joint.pso.mean_trajectory, marker=".", label="swarm mean")
    axes[1].set_xlabel("swarm iteration")
    axes[1].set_title("rotation search")
    axes[1].legend()
    axes[1].grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(OUT / "double_layer_traces.png", dpi=130)
    print(f"figure written to {OUT / 'double_layer_traces.png'}")
except ImportError:
    print("matplotlib not installed; skipped the figure")
