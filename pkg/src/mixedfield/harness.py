"""Experiment driver: schemes, Monte Carlo drops, presets and CSV emission.

Monte Carlo presets place random users per drop, run the requested schemes
and aggregate the sum-rates; analysis presets evaluate the closed-form
two-cell machinery over parameter sweeps.  Every random draw derives from
``(seed, sweep index, drop index)``, so results do not depend on the size
of the worker pool, and ``results.csv`` is byte-identical across runs.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .beamforming import (
    ScaError,
    analog_gram,
    analog_mrt,
    effective_channels,
    rates_from_effective,
    zf_all_cells,
)
from .interference import (
    DegenerateRotationError,
    near_cross_correlation,
    optimal_rotation,
    power_grid_search,
    rho_approx,
    rho_exact,
    two_cell_case,
    two_cell_sum_rate,
)
from .rotation import PsoConfig, inner_beamformers, joint_optimize, pso_optimize
from .scenario import (
    Scenario,
    SystemConfig,
    UserPlacement,
    build_channels,
    canonical_scenario,
    dbm_to_watt,
    load_scenario,
)

logger = logging.getLogger(__name__)

ALL_SCHEMES = ("RA+BF", "FA+BF", "FA+ZF", "RA+ZF", "DiscreteRA+ZF", "UpperBound")
MONTE_CARLO_PRESETS = ("power_sweep", "user_sweep", "antenna_sweep")
ANALYSIS_PRESETS = (
    "fresnel_verify",
    "two_cell_angle_sweep",
    "two_cell_range_sweep",
    "tradeoff_3user",
)


def thread_count() -> int:
    "Worker pool size, capped by the SIM_THREADS environment variable."
    cap = os.environ.get("SIM_THREADS")
    if cap:
        return max(1, int(cap))
    return min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class ExperimentSpec:
    "One experiment: preset, sweep, schemes, drop count and output location."

    preset: str
    out_dir: str
    scenario_path: str | None = None
    schemes: tuple = ("RA+BF", "FA+BF", "RA+ZF", "FA+ZF")
    monte_carlo_drops: int = 20
    seed: int = 0
    small: bool = False
    sweep_values: tuple | None = None
    pso: PsoConfig | None = None
    zf_pso: PsoConfig | None = None
    sca_options: dict | None = None
    discrete_points: int = 100

    def __post_init__(self):
        if self.monte_carlo_drops < 1:
            raise ValueError("monte_carlo_drops must be >= 1")
        if self.sweep_values is not None and len(self.sweep_values) == 0:
            raise ValueError("sweep grid must be non-empty")
        for scheme in self.schemes:
            if scheme not in ALL_SCHEMES:
                raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class ResultRow:
    "Aggregated per-(scheme, sweep point) statistics."

    scheme: str
    sweep_value: float
    mean_sum_rate: float
    std_sum_rate: float
    user_means: np.ndarray
    n_drops: int
    n_failed: int


@dataclass
class SchemeResult:
    "Outcome of one scheme on one drop."

    scheme: str
    sum_rate: float
    rotations: np.ndarray
    digital: np.ndarray | None
    rates: np.ndarray
    traces: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# User placement
# ---------------------------------------------------------------------------

def place_users(scenario: Scenario, rng) -> Scenario:
    """Drop users uniformly in the scenario's (range, angle) region.

    Ranges are uniform between the region's fractions of the boresight
    Rayleigh distance and angles uniform in the region's angular interval;
    scatterers are drawn from the same region.  Deterministic per seed.
    """
    rng = np.random.default_rng(rng)
    cfg = scenario.config
    region = scenario.user_region
    ray = cfg.rayleigh_distance()
    r_lo, r_hi = region.range_frac[0] * ray, region.range_frac[1] * ray
    a_lo, a_hi = region.angle
    users = []
    for m in range(cfg.cell_count):
        for k in range(cfg.users_per_cell):
            angle = rng.uniform(a_lo, a_hi)
            range_m = rng.uniform(r_lo, r_hi)
            scatterers = tuple(
                (rng.uniform(a_lo, a_hi), rng.uniform(r_lo, r_hi))
                for _ in range(cfg.nlos_path_count)
            )
            users.append(
                UserPlacement(cell=m, index=k, angle=angle, range_m=range_m, scatterers=scatterers)
            )
    return scenario.with_users(users)


# ---------------------------------------------------------------------------
# Schemes
# ---------------------------------------------------------------------------

def _zf_rate_at(scenario, rotations, channel_seed):
    channels = build_channels(scenario, rotations, channel_seed)
    analog = analog_mrt(scenario, rotations)
    heff = effective_channels(channels, analog)
    gram = analog_gram(analog)
    digital, _ = zf_all_cells(heff, gram, scenario.config.power_budget_w, regularize=True)
    report = rates_from_effective(heff, digital, scenario.config.noise_power_w)
    return report, digital


def _run_upper_bound(scenario, channel_seed, grid_points: int = 61) -> SchemeResult:
    """Interference-free full-power bound, per user.

    Each user is granted the whole budget, zero interference, and the most
    favorable rotation of its serving array (searched on a grid; exact for
    line-of-sight channels where the norm is rotation invariant).
    """
    cfg = scenario.config
    m_cells, k_users = cfg.cell_count, cfg.users_per_cell
    best = np.zeros((m_cells, k_users))
    grids = [np.linspace(*bs.rotation_limits, grid_points) for bs in scenario.base_stations]
    if cfg.nlos_path_count == 0:
        grids = [np.array([0.0]) for _ in scenario.base_stations]
    for gi, grid in enumerate(grids):
        for phi in grid:
            rotations = np.zeros(m_cells)
            rotations[gi] = phi
            channels = build_channels(scenario, rotations, channel_seed)
            norms = np.linalg.norm(channels.h[gi, gi], axis=-1) ** 2
            best[gi] = np.maximum(best[gi], norms)
    rates = np.log2(1.0 + cfg.power_budget_w * best / cfg.noise_power_w)
    return SchemeResult(
        scheme="UpperBound",
        sum_rate=float(rates.sum()),
        rotations=np.zeros(m_cells),
        digital=None,
        rates=rates,
    )


def _run_discrete_ra_zf(scenario, channel_seed, points: int) -> SchemeResult:
    cfg = scenario.config
    m_cells = cfg.cell_count
    if m_cells > 3:
        raise ValueError("DiscreteRA+ZF enumerates points^M combinations; refusing M > 3")
    grids = [np.linspace(*bs.rotation_limits, points) for bs in scenario.base_stations]
    # The channel and analog stage of cell i depend only on its own angle,
    # so each axis is precomputed once and combinations reuse the slices.
    heff_axis = []
    gram_axis = []
    for g in range(points):
        rotations = np.array([grids[i][g] for i in range(m_cells)])
        channels = build_channels(scenario, rotations, channel_seed)
        analog = analog_mrt(scenario, rotations)
        heff_axis.append(effective_channels(channels, analog))
        gram_axis.append(analog_gram(analog))
    best = None
    for combo in product(range(points), repeat=m_cells):
        heff = np.stack([heff_axis[combo[i]][i] for i in range(m_cells)])
        gram = np.stack([gram_axis[combo[i]][i] for i in range(m_cells)])
        digital, _ = zf_all_cells(heff, gram, cfg.power_budget_w, regularize=True)
        report = rates_from_effective(heff, digital, cfg.noise_power_w)
        if best is None or report.sum_rate > best[0]:
            rotations = np.array([grids[i][combo[i]] for i in range(m_cells)])
            best = (report.sum_rate, rotations, digital, report.rates)
    return SchemeResult(
        scheme="DiscreteRA+ZF",
        sum_rate=float(best[0]),
        rotations=best[1],
        digital=best[2],
        rates=best[3],
    )


def run_scheme(
    scheme: str,
    scenario: Scenario,
    channel_seed: int,
    *,
    pso_config: PsoConfig | None = None,
    zf_pso_config: PsoConfig | None = None,
    sca_options: dict | None = None,
    discrete_points: int = 100,
    extra_seed_rotations=None,
) -> SchemeResult:
    """Evaluate one benchmark scheme on a placed scenario.

    ``extra_seed_rotations`` seeds additional deterministic particles into
    the RA+BF swarm (the harness feeds the RA+ZF solution through here,
    which makes the RA+BF >= RA+ZF ordering exact per drop).
    """
    cfg = scenario.config
    zeros = np.zeros(cfg.cell_count)
    if scheme == "FA+BF":
        report, beams, result = inner_beamformers(scenario, zeros, channel_seed, sca_options)
        kkt = [
            max(r["stationarity"], r["dual_infeasibility"], r["complementarity"])
            for r in result.residuals
        ]
        return SchemeResult(
            scheme=scheme,
            sum_rate=report.sum_rate,
            rotations=zeros,
            digital=beams.digital,
            rates=report.rates,
            traces={"sca": result.trajectory, "sca_surrogate": result.surrogate, "sca_kkt": kkt},
        )
    if scheme == "FA+ZF":
        report, digital = _zf_rate_at(scenario, zeros, channel_seed)
        return SchemeResult(
            scheme=scheme,
            sum_rate=report.sum_rate,
            rotations=zeros,
            digital=digital,
            rates=report.rates,
        )
    if scheme == "RA+ZF":
        zf_pso_config = zf_pso_config or PsoConfig(seed=cfg.rng_seed)

        def fitness(rotations):
            report, _ = _zf_rate_at(scenario, rotations, channel_seed)
            return report.sum_rate

        # The ZF-rate landscape over rotations is multimodal; a coarse scan
        # locates the global basin and the swarm refines within it.
        seeds = [zeros]
        if cfg.cell_count <= 3:
            coarse = [np.linspace(*bs.rotation_limits, 9) for bs in scenario.base_stations]
            scored = [
                (fitness(np.array(combo)), np.array(combo)) for combo in product(*coarse)
            ]
            scored.sort(key=lambda pair: pair[0], reverse=True)
            seeds.extend(point for _, point in scored[:4])
        pso = pso_optimize(
            fitness,
            scenario.rotation_limits_array(),
            zf_pso_config,
            initial_positions=seeds,
        )
        report, digital = _zf_rate_at(scenario, pso.best_position, channel_seed)
        return SchemeResult(
            scheme=scheme,
            sum_rate=report.sum_rate,
            rotations=pso.best_position,
            digital=digital,
            rates=report.rates,
            traces={
                "pso_best": pso.best_trajectory,
                "pso_mean": pso.mean_trajectory,
                "pso_positions": pso.best_positions,
            },
        )
    if scheme == "RA+BF":
        result = joint_optimize(
            scenario,
            pso_config or PsoConfig(seed=cfg.rng_seed),
            sca_options,
            channel_seed=channel_seed,
            extra_seed_rotations=extra_seed_rotations,
        )
        return SchemeResult(
            scheme=scheme,
            sum_rate=result.report.sum_rate,
            rotations=result.rotations,
            digital=result.beamformers.digital,
            rates=result.report.rates,
            traces={
                "pso_best": result.pso.best_trajectory,
                "pso_mean": result.pso.mean_trajectory,
                "pso_positions": result.pso.best_positions,
                "sca": result.sca_trajectory,
            },
        )
    if scheme == "DiscreteRA+ZF":
        return _run_discrete_ra_zf(scenario, channel_seed, discrete_points)
    if scheme == "UpperBound":
        return _run_upper_bound(scenario, channel_seed)
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------

def _base_config(spec: ExperimentSpec) -> SystemConfig:
    if spec.scenario_path:
        return load_scenario(spec.scenario_path).config
    return SystemConfig(antenna_count=65 if spec.small else 129)


def _sweep_plan(spec: ExperimentSpec):
    "Sweep name and grid for the Monte Carlo presets."
    if spec.sweep_values is not None:
        values = tuple(spec.sweep_values)
    elif spec.preset == "power_sweep":
        values = (10.0, 20.0, 30.0, 40.0) if spec.small else (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)
    elif spec.preset == "user_sweep":
        values = (1, 2, 3) if spec.small else (1, 2, 3, 4)
    elif spec.preset == "antenna_sweep":
        values = (33, 65, 129) if spec.small else (65, 129, 257)
    else:
        raise ValueError(f"{spec.preset} is not a Monte Carlo preset")
    name = {"power_sweep": "power_dbm", "user_sweep": "users_per_cell", "antenna_sweep": "antenna_count"}[
        spec.preset
    ]
    return name, values


def config_for_sweep(base: SystemConfig, sweep_name: str, value) -> SystemConfig:
    if sweep_name == "power_dbm":
        return replace(base, power_budget_w=dbm_to_watt(float(value)))
    if sweep_name == "users_per_cell":
        return replace(base, users_per_cell=int(value))
    if sweep_name == "antenna_count":
        return replace(base, antenna_count=int(value))
    raise ValueError(f"unknown sweep {sweep_name!r}")


def drop_seeds(master_seed: int, sweep_idx: int, drop_idx: int) -> tuple[int, int]:
    "Deterministic (placement seed, channel seed) for one drop."
    ss = np.random.SeedSequence((int(master_seed), int(sweep_idx), int(drop_idx)))
    place, channel = ss.generate_state(2)
    return int(place), int(channel)


def scenario_for_drop(
    spec_dict: dict, sweep_value, sweep_idx: int, drop_idx: int
) -> Scenario:
    "Rebuild the exact scenario of one drop from run metadata."
    base = SystemConfig(**spec_dict["base_config"])
    cfg = config_for_sweep(base, spec_dict["sweep_name"], sweep_value)
    # A power sweep leaves the geometry untouched, so its drops are paired
    # across sweep points (same placements, different budget); sweeps that
    # change the geometry draw fresh placements per point.
    seed_sweep_idx = 0 if spec_dict["sweep_name"] == "power_dbm" else sweep_idx
    place_seed, channel_seed = drop_seeds(spec_dict["seed"], seed_sweep_idx, drop_idx)
    cfg = replace(cfg, rng_seed=channel_seed)
    scenario = canonical_scenario(cfg)
    return place_users(scenario, place_seed)


def _default_pso(spec: ExperimentSpec) -> tuple[PsoConfig, PsoConfig]:
    pso = spec.pso or (
        PsoConfig(swarm_size=6, iterations=8) if spec.small else PsoConfig(swarm_size=12, iterations=15)
    )
    zf_pso = spec.zf_pso or PsoConfig(swarm_size=30, iterations=30)
    return pso, zf_pso


def _run_drop(spec: ExperimentSpec, spec_dict, sweep_value, sweep_idx, drop_idx):
    "All requested schemes on one drop; RA+ZF seeds the RA+BF swarm."
    scenario = scenario_for_drop(spec_dict, sweep_value, sweep_idx, drop_idx)
    channel_seed = scenario.config.rng_seed
    pso, zf_pso = _default_pso(spec)
    sca_options = spec.sca_options or {"max_iters": 15, "tol": 1e-3}
    ordered = sorted(spec.schemes, key=lambda s: 0 if s == "RA+ZF" else 1)
    results = {}
    ra_zf_rotation = None
    for scheme in ordered:
        try:
            result = run_scheme(
                scheme,
                scenario,
                channel_seed,
                pso_config=dataclasses.replace(pso, seed=channel_seed % (2**31)),
                zf_pso_config=dataclasses.replace(zf_pso, seed=channel_seed % (2**31)),
                sca_options=sca_options,
                discrete_points=spec.discrete_points,
                extra_seed_rotations=[ra_zf_rotation] if (scheme == "RA+BF" and ra_zf_rotation is not None) else None,
            )
        except ScaError as exc:
            logger.warning("%s failed on drop (%d, %d): %s", scheme, sweep_idx, drop_idx, exc)
            results[scheme] = None
            continue
        if scheme == "RA+ZF":
            ra_zf_rotation = result.rotations
        results[scheme] = result
    return results


def _format(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def run_experiment(spec: ExperimentSpec):
    """Run a preset end to end and write its CSV outputs.

    Returns (rows, failures): the aggregated result rows and the number of
    failed (scheme, drop) evaluations.  Monte Carlo drops execute in a
    thread pool sized by ``SIM_THREADS``; all randomness is derived from
    (seed, sweep index, drop index) so the pool size never changes results.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if spec.preset in ANALYSIS_PRESETS:
        return run_analysis_preset(spec)
    if spec.preset not in MONTE_CARLO_PRESETS:
        raise ValueError(f"unknown preset {spec.preset!r}")

    sweep_name, sweep_values = _sweep_plan(spec)
    base = _base_config(spec)
    spec_dict = {
        "preset": spec.preset,
        "seed": spec.seed,
        "sweep_name": sweep_name,
        "sweep_values": list(sweep_values),
        "schemes": list(spec.schemes),
        "drops": spec.monte_carlo_drops,
        "base_config": dataclasses.asdict(base),
    }
    (out / "metadata.json").write_text(json.dumps(spec_dict, indent=2))

    tasks = [(si, di) for si in range(len(sweep_values)) for di in range(spec.monte_carlo_drops)]
    outputs = [None] * len(tasks)
    timings = [0.0] * len(tasks)

    def work(task_idx):
        si, di = tasks[task_idx]
        start = time.perf_counter()
        result = _run_drop(spec, spec_dict, sweep_values[si], si, di)
        return task_idx, result, time.perf_counter() - start

    workers = thread_count()
    if workers == 1:
        for idx in range(len(tasks)):
            idx, result, elapsed = work(idx)
            outputs[idx] = result
            timings[idx] = elapsed
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            for idx, result, elapsed in pool.map(work, range(len(tasks))):
                outputs[idx] = result
                timings[idx] = elapsed

    details_dir = out / "details"
    details_dir.mkdir(exist_ok=True)
    rows = []
    failures = 0
    for si, value in enumerate(sweep_values):
        per_scheme = {s: [] for s in spec.schemes}
        for di in range(spec.monte_carlo_drops):
            drop_result = outputs[si * spec.monte_carlo_drops + di]
            for scheme in spec.schemes:
                result = drop_result.get(scheme)
                if result is None:
                    failures += 1
                    continue
                per_scheme[scheme].append(result)
                np.savez(
                    details_dir / f"s{si}_d{di}_{scheme.replace('+', '_')}.npz",
                    rotations=result.rotations,
                    digital=result.digital if result.digital is not None else np.zeros(0),
                    rates=result.rates,
                    sum_rate=result.sum_rate,
                    sweep_idx=si,
                    drop_idx=di,
                    sweep_value=value,
                )
        for scheme in spec.schemes:
            bucket = per_scheme[scheme]
            if not bucket:
                continue
            sums = np.array([r.sum_rate for r in bucket])
            user_rates = np.stack([r.rates for r in bucket])
            rows.append(
                ResultRow(
                    scheme=scheme,
                    sweep_value=value,
                    mean_sum_rate=float(sums.mean()),
                    std_sum_rate=float(sums.std()),
                    user_means=user_rates.mean(axis=0),
                    n_drops=len(bucket),
                    n_failed=spec.monte_carlo_drops - len(bucket),
                )
            )

    _write_results_csv(out / "results.csv", rows, sweep_name)
    with open(out / "timing.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep_idx", "drop_idx", "wall_time_s"])
        for idx, (si, di) in enumerate(tasks):
            writer.writerow([si, di, f"{timings[idx]:.3f}"])
    _write_traces(out, outputs, tasks, spec)
    return rows, failures


def _write_results_csv(path, rows, sweep_name: str):
    if not rows:
        return
    m, k = rows[0].user_means.shape
    header = [
        "scheme",
        sweep_name,
        "mean_sum_rate_bps_hz",
        "std_sum_rate_bps_hz",
        "n_drops",
        "n_failed",
    ] + [f"rate_mean_c{mm}u{kk}" for mm in range(m) for kk in range(k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row.scheme, _format(row.sweep_value), _format(row.mean_sum_rate),
                 _format(row.std_sum_rate), row.n_drops, row.n_failed]
                + [_format(v) for v in row.user_means.ravel()]
            )


def _write_traces(out: Path, outputs, tasks, spec: ExperimentSpec):
    "Convergence traces of drop 0 of sweep point 0, one CSV per scheme."
    drop0 = outputs[0]
    for scheme, result in drop0.items():
        if result is None or not result.traces:
            continue
        tag = scheme.replace("+", "_")
        if "pso_best" in result.traces:
            positions = result.traces.get("pso_positions", [])
            dims = len(positions[0]) if positions else len(result.rotations)
            with open(out / f"trace_pso_{tag}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["iter", "best_fitness", "mean_fitness"]
                    + [f"best_phi_{d + 1}" for d in range(dims)]
                )
                for i, (b, m_) in enumerate(zip(result.traces["pso_best"], result.traces["pso_mean"])):
                    phi = positions[i] if i < len(positions) else [math.nan] * dims
                    writer.writerow([i, _format(b), _format(m_)] + [_format(p) for p in phi])
        if "sca" in result.traces:
            surrogate = result.traces.get("sca_surrogate", [])
            kkt = result.traces.get("sca_kkt", [])
            with open(out / f"trace_sca_{tag}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iter", "surrogate_obj", "true_sum_rate", "max_kkt_residual"])
                for i, v in enumerate(result.traces["sca"]):
                    srg = _format(surrogate[i - 1]) if 0 < i <= len(surrogate) else ""
                    res = _format(kkt[i - 1]) if 0 < i <= len(kkt) else ""
                    writer.writerow([i, srg, _format(v), res])


def verify_results(out_dir, fraction: float = 0.05, rng=0) -> bool:
    """Round-trip check: recompute a sample of stored drop results.

    Rebuilds each sampled drop's scenario and channels from the metadata
    seeds, re-evaluates the rates with the stored rotations and digital
    beamformers, and compares to the stored values at 1e-9.
    """
    out = Path(out_dir)
    spec_dict = json.loads((out / "metadata.json").read_text())
    files = sorted((out / "details").glob("*.npz"))
    rng = np.random.default_rng(rng)
    count = max(1, int(len(files) * fraction))
    sample = rng.choice(len(files), size=count, replace=False)
    for idx in sample:
        data = np.load(files[int(idx)])
        if data["digital"].size == 0:  # schemes without stored beamformers
            continue
        si, di = int(data["sweep_idx"]), int(data["drop_idx"])
        value = data["sweep_value"].item()
        scenario = scenario_for_drop(spec_dict, value, si, di)
        channels = build_channels(scenario, data["rotations"], scenario.config.rng_seed)
        analog = analog_mrt(scenario, data["rotations"])
        heff = effective_channels(channels, analog)
        report = rates_from_effective(heff, data["digital"], scenario.config.noise_power_w)
        if abs(report.sum_rate - float(data["sum_rate"])) > 1e-9:
            logger.error("round-trip mismatch in %s", files[int(idx)])
            return False
    return True


# ---------------------------------------------------------------------------
# Analysis presets (closed-form two-cell machinery)
# ---------------------------------------------------------------------------

def _write_sweep_csv(path, rows):
    header = ["sweep_var", "rho_exact", "rho_approx", "rate_u11", "rate_u21", "sum_rate", "phi_star"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def run_analysis_preset(spec: ExperimentSpec):
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _base_config(spec)
    if spec.preset == "fresnel_verify":
        rows = fresnel_verify_rows(cfg, points=181)
        with open(out / "fresnel_verify.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phi", "rho_exact", "rho_approx"])
            for row in rows:
                writer.writerow([_format(v) for v in row])
        return rows, 0
    if spec.preset in ("two_cell_angle_sweep", "two_cell_range_sweep"):
        sweep = "angle" if spec.preset == "two_cell_angle_sweep" else "range"
        for rotated in (False, True):
            rows = two_cell_sweep_rows(cfg, sweep=sweep, rotated=rotated, values=spec.sweep_values)
            name = f"{spec.preset}_{'ra' if rotated else 'fa'}.csv"
            _write_sweep_csv(out / name, rows)
        return rows, 0
    if spec.preset == "tradeoff_3user":
        all_rows = {}
        for mode in ("joint", "near_field_only", "mixed_field_only"):
            rows = tradeoff_rows(cfg, mode=mode, values=spec.sweep_values)
            all_rows[mode] = rows
            with open(out / f"tradeoff_3user_{mode}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["sweep_var", "rate_u11", "rate_u12", "rate_u21", "sum_rate", "phi1_star", "phi2_star"]
                )
                for row in rows:
                    writer.writerow([_format(v) for v in row])
        return all_rows, 0
    raise ValueError(f"unknown analysis preset {spec.preset!r}")


def fresnel_verify_rows(cfg: SystemConfig, points: int = 181):
    "Exact vs closed-form cross-correlation over the rotation interval."
    ray = cfg.rayleigh_distance()
    theta = 0.4 * math.pi
    r = 0.3 * ray
    rows = []
    for psi_frac in (0.35, 0.4, 0.5):
        psi = psi_frac * math.pi
        for phi in np.linspace(-math.pi / 6.0, math.pi / 6.0, points):
            exact = float(rho_exact(psi, theta, r, phi, cfg))
            try:
                approx = rho_approx(psi, theta, r, phi, cfg)
            except DegenerateRotationError:
                approx = exact
            rows.append((phi, exact, approx))
    return rows


def two_cell_sweep_rows(cfg: SystemConfig, sweep: str, rotated: bool, values=None, grid: int = 51):
    """Rate of the victim user versus the interferer's angle or range.

    The two-cell single-user geometry with matched-filter beams; powers are
    grid-searched per point, rotations are either zero (fixed antenna) or
    the closed-form/grid rule per link.
    """
    ray = cfg.rayleigh_distance()
    theta_11, r_11 = 0.4 * math.pi, 0.3 * ray
    rows = []
    if values is None:
        if sweep == "angle":
            values = np.linspace(0.25 * math.pi, 0.75 * math.pi, 41)
        else:
            values = np.linspace(0.05, 1.0, 39)
    for value in values:
        if sweep == "angle":
            theta_21, r_21 = float(value), 0.3 * ray
        else:
            theta_21, r_21 = 0.4 * math.pi, float(value) * ray
        case = two_cell_case(cfg, theta_11, r_11, theta_21, r_21)
        if rotated:
            limits = (-math.pi / 6.0, math.pi / 6.0)
            phi_2 = optimal_rotation(case.psi_21, theta_21, limits, r_21, cfg)
            phi_1 = optimal_rotation(case.psi_12, theta_11, limits, r_11, cfg)
            case = case.with_rotations(phi_1, phi_2)
        p11, p21, _ = power_grid_search(case, grid=grid)
        rate_11, rate_21, total = two_cell_sum_rate(case, p11, p21)
        exact = float(rho_exact(case.psi_21, theta_21, r_21, case.phi_2, cfg))
        try:
            approx = rho_approx(case.psi_21, theta_21, r_21, case.phi_2, cfg)
        except DegenerateRotationError:
            approx = exact
        rows.append((value, exact, approx, rate_11, rate_21, total, case.phi_2))
    return rows


def _three_user_rates(cfg, geom, phi_1, phi_2, p_cell1, p_cell2, drop_near=False, drop_mixed=False):
    "LoS rates of {U11, U12, U21} under per-user matched beams."
    lam, n_ant = cfg.wavelength, cfg.antenna_count
    (t11, r11), (t12, r12), (t21, r21) = geom["u11"], geom["u12"], geom["u21"]
    p11 = p12 = p_cell1 / 2.0
    p21 = p_cell2
    noise = cfg.noise_power_w

    def fspl(r):
        return lam / (4.0 * math.pi * r)

    rho_nn = near_cross_correlation(t11, r11, t12, r12, phi_1, cfg)
    rho_mixed_11 = float(rho_exact(geom["psi_2_u11"], t21, r21, phi_2, cfg))
    rho_mixed_12 = float(rho_exact(geom["psi_2_u12"], t21, r21, phi_2, cfg))
    rho_at_21_from_b11 = float(rho_exact(geom["psi_1_u21"], t11, r11, phi_1, cfg))
    rho_at_21_from_b12 = float(rho_exact(geom["psi_1_u21"], t12, r12, phi_1, cfg))

    near_11 = p12 * n_ant * fspl(r11) ** 2 * rho_nn**2
    near_12 = p11 * n_ant * fspl(r12) ** 2 * rho_nn**2
    mixed_11 = p21 * n_ant * fspl(geom["d_2_u11"]) ** 2 * rho_mixed_11**2
    mixed_12 = p21 * n_ant * fspl(geom["d_2_u12"]) ** 2 * rho_mixed_12**2
    mixed_21 = p11 * n_ant * fspl(geom["d_1_u21"]) ** 2 * rho_at_21_from_b11**2
    mixed_21 += p12 * n_ant * fspl(geom["d_1_u21"]) ** 2 * rho_at_21_from_b12**2
    if drop_near:
        near_11 = near_12 = 0.0
    if drop_mixed:
        mixed_11 = mixed_12 = mixed_21 = 0.0
    rate_11 = math.log2(1.0 + p11 * n_ant * fspl(r11) ** 2 / (near_11 + mixed_11 + noise))
    rate_12 = math.log2(1.0 + p12 * n_ant * fspl(r12) ** 2 / (near_12 + mixed_12 + noise))
    rate_21 = math.log2(1.0 + p21 * n_ant * fspl(r21) ** 2 / (mixed_21 + noise))
    return rate_11, rate_12, rate_21


def tradeoff_rows(cfg: SystemConfig, mode: str, values=None, sweep: str = "angle", grid: int = 41):
    """Three-user rotation trade-off: optimize rotations against one
    interference class (or both), report rates under the full interference.
    """
    from .scenario import BaseStation, inter_cell_angle, inter_cell_distance, local_to_absolute

    ray = cfg.rayleigh_distance()
    spacing = 2.0 * ray
    theta_fix, r_fix = 0.4 * math.pi, 0.3 * ray
    if values is None:
        values = np.linspace(math.pi / 3.0, 2.0 * math.pi / 3.0, 31) if sweep == "angle" else np.linspace(0.05, 1.0, 31)
    bs1 = BaseStation(index=0, position=(0.0, 0.0), facing=1)
    bs2 = BaseStation(index=1, position=(0.0, spacing), facing=-1)
    rows = []
    limits = np.linspace(-math.pi / 6.0, math.pi / 6.0, grid)
    for value in values:
        if sweep == "angle":
            t12, r12 = float(value), 0.3 * ray
        else:
            t12, r12 = 0.42 * math.pi, float(value) * ray
        u11 = local_to_absolute(bs1, theta_fix, r_fix)
        u12 = local_to_absolute(bs1, t12, r12)
        u21 = local_to_absolute(bs2, theta_fix, r_fix)
        geom = {
            "u11": (theta_fix, r_fix),
            "u12": (t12, r12),
            "u21": (theta_fix, r_fix),
            "psi_2_u11": inter_cell_angle(u11, bs2),
            "psi_2_u12": inter_cell_angle(u12, bs2),
            "psi_1_u21": inter_cell_angle(u21, bs1),
            "d_2_u11": inter_cell_distance(u11, bs2),
            "d_2_u12": inter_cell_distance(u12, bs2),
            "d_1_u21": inter_cell_distance(u21, bs1),
        }
        drop_near = mode == "mixed_field_only"
        drop_mixed = mode == "near_field_only"
        best = None
        for phi_1 in limits:
            for phi_2 in limits:
                rates = _three_user_rates(
                    cfg, geom, phi_1, phi_2, cfg.power_budget_w, cfg.power_budget_w,
                    drop_near=drop_near, drop_mixed=drop_mixed,
                )
                total = sum(rates)
                if best is None or total > best[0]:
                    best = (total, phi_1, phi_2)
        _, phi_1, phi_2 = best
        rates = _three_user_rates(cfg, geom, phi_1, phi_2, cfg.power_budget_w, cfg.power_budget_w)
        rows.append((value, rates[0], rates[1], rates[2], sum(rates), phi_1, phi_2))
    return rows
