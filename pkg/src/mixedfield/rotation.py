"""Outer-layer rotation search and the joint double-layer driver.

A particle swarm explores the box of admissible per-cell rotation angles;
each particle's fitness is the network sum-rate delivered by the inner
beamformer optimizer at that rotation vector.  One particle is always
seeded at zero rotation, so the joint result can never fall below the
fixed-antenna design it generalizes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .beamforming import (
    BeamformerSet,
    ScaError,
    SumRateReport,
    analog_gram,
    analog_mrt,
    effective_channels,
    rates_from_effective,
    sca_digital,
)
from .scenario import Scenario, build_channels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PsoConfig:
    "Swarm size, iteration budget, learning factors and inertia bounds."

    swarm_size: int = 50
    iterations: int = 50
    c1: float = 1.4
    c2: float = 1.4
    omega_min: float = 0.4
    omega_max: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 1 or self.iterations < 1:
            raise ValueError("swarm_size and iterations must be >= 1")
        if not 0.0 < self.omega_min <= self.omega_max:
            raise ValueError("need 0 < omega_min <= omega_max")


@dataclass
class PsoResult:
    "Best position found with the per-iteration best/mean fitness traces."

    best_position: np.ndarray
    best_fitness: float
    best_trajectory: list
    mean_trajectory: list
    best_positions: list = field(default_factory=list)
    evaluations: int = 0


def pso_optimize(
    fitness,
    limits,
    config: PsoConfig,
    seed=None,
    initial_positions=None,
    pass_index: bool = False,
) -> PsoResult:
    """Maximize ``fitness`` over a box with a standard inertia-weight swarm.

    Velocities follow ``v <- w v + c1 r1 (p - x) + c2 r2 (g - x)`` with
    scalar uniform draws ``r1, r2`` per particle and update, the inertia
    decaying linearly from ``omega_max`` to ``omega_min``.  Positions are
    clamped to the box after every move and velocities to half the box span.
    Each particle draws from its own seeded stream, so the trajectory is
    reproducible regardless of evaluation order; ties on the global best go
    to the lowest particle index.

    Parameters
    ----------
    fitness : callable
        Maps a position vector to a float; called as ``fitness(x, index)``
        when ``pass_index`` is set.  A fitness of -inf marks a failed
        evaluation and simply never becomes a best.
    limits : array_like (D, 2)
        Per-dimension (lower, upper) bounds.
    initial_positions : sequence of vectors, optional
        Deterministic seeds for the first particles (clamped to the box).
    """
    limits = np.asarray(limits, dtype=float)
    lower, upper = limits[:, 0], limits[:, 1]
    span = upper - lower
    dims = len(lower)
    swarm = config.swarm_size
    entropy = config.seed if seed is None else seed
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(entropy).spawn(swarm)]

    def call(x, idx):
        return float(fitness(x, idx)) if pass_index else float(fitness(x))

    positions = np.empty((swarm, dims))
    velocities = np.empty((swarm, dims))
    seeds = [] if initial_positions is None else list(initial_positions)
    for s in range(swarm):
        if s < len(seeds):
            positions[s] = np.clip(np.asarray(seeds[s], dtype=float), lower, upper)
        else:
            positions[s] = lower + streams[s].uniform(size=dims) * span
        velocities[s] = streams[s].uniform(-0.25, 0.25, size=dims) * span

    personal_best = positions.copy()
    personal_fitness = np.array([call(positions[s], s) for s in range(swarm)])
    best_idx = int(np.argmax(personal_fitness))
    global_best = personal_best[best_idx].copy()
    global_fitness = float(personal_fitness[best_idx])
    best_trace = [global_fitness]
    best_positions = [global_best.copy()]
    finite = personal_fitness[np.isfinite(personal_fitness)]
    mean_trace = [float(finite.mean()) if finite.size else -math.inf]
    evaluations = swarm

    vmax = 0.5 * span
    for it in range(1, config.iterations + 1):
        omega = config.omega_max - (config.omega_max - config.omega_min) * it / config.iterations
        for s in range(swarm):
            r1, r2 = streams[s].uniform(size=2)
            velocities[s] = (
                omega * velocities[s]
                + config.c1 * r1 * (personal_best[s] - positions[s])
                + config.c2 * r2 * (global_best - positions[s])
            )
            velocities[s] = np.clip(velocities[s], -vmax, vmax)
            positions[s] = np.clip(positions[s] + velocities[s], lower, upper)
        values = np.array([call(positions[s], s) for s in range(swarm)])
        evaluations += swarm
        for s in range(swarm):
            if values[s] > personal_fitness[s]:
                personal_fitness[s] = values[s]
                personal_best[s] = positions[s].copy()
            if values[s] > global_fitness:
                global_fitness = float(values[s])
                global_best = positions[s].copy()
        best_trace.append(global_fitness)
        best_positions.append(global_best.copy())
        finite = values[np.isfinite(values)]
        mean_trace.append(float(finite.mean()) if finite.size else -math.inf)

    return PsoResult(
        best_position=global_best,
        best_fitness=global_fitness,
        best_trajectory=best_trace,
        mean_trajectory=mean_trace,
        best_positions=best_positions,
        evaluations=evaluations,
    )


# ---------------------------------------------------------------------------
# Joint double-layer optimization
# ---------------------------------------------------------------------------

@dataclass
class JointResult:
    "Outcome of the double-layer search."

    rotations: np.ndarray
    beamformers: BeamformerSet
    report: SumRateReport
    pso: PsoResult
    sca_trajectory: list = field(default_factory=list)
    failed_evaluations: int = 0


def _quantize(rotations, step: float = 1e-4) -> tuple:
    return tuple(int(round(v / step)) for v in np.atleast_1d(rotations))


def inner_beamformers(
    scenario: Scenario,
    rotations,
    channel_seed: int,
    sca_options: dict | None = None,
    init_covariances=None,
):
    """Inner-layer solve at fixed rotations: channels, MRT stage, SCA stage.

    The rank-one extraction stream is derived from the channel seed and the
    quantized rotations, so repeated evaluations are bit-identical.
    """
    opts = dict(sca_options or {})
    rotations = np.asarray(rotations, dtype=float)
    channels = build_channels(scenario, rotations, channel_seed)
    analog = analog_mrt(scenario, rotations)
    heff = effective_channels(channels, analog)
    gram = analog_gram(analog)
    extraction_rng = np.random.SeedSequence(
        (int(channel_seed),) + tuple(q % (2**32) for q in _quantize(rotations))
    )
    result = sca_digital(
        heff,
        gram,
        scenario.config.power_budget_w,
        scenario.config.noise_power_w,
        rng=np.random.default_rng(extraction_rng),
        init_covariances=init_covariances,
        **opts,
    )
    report = rates_from_effective(heff, result.digital, scenario.config.noise_power_w)
    beams = BeamformerSet(
        rotations=rotations,
        analog=analog,
        digital=result.digital,
        covariances=result.covariances,
    )
    return report, beams, result


def joint_optimize(
    scenario: Scenario,
    pso_config: PsoConfig | None = None,
    sca_options: dict | None = None,
    *,
    channel_seed: int | None = None,
    extra_seed_rotations=None,
    warm_start: bool = True,
) -> JointResult:
    """Jointly optimize rotations (outer swarm) and beamformers (inner SCA).

    The first particle starts at zero rotation, so the best fitness is never
    below the fixed-antenna result produced by the identical inner solver;
    further deterministic seeds (e.g. the rotation found by a cheaper
    scheme) can be supplied through ``extra_seed_rotations``.  Fitness
    values are cached on rotations quantized to 1e-4 rad, and, when
    ``warm_start`` is on, each particle's inner solve starts from that
    particle's previous covariances (the ascent property of the inner layer
    makes this a pure speedup).

    A particle whose inner solve fails scores -inf and is logged; the best
    particle is re-read from the cache, so the returned report equals the
    best fitness exactly.
    """
    pso_config = pso_config or PsoConfig(seed=scenario.config.rng_seed)
    if channel_seed is None:
        channel_seed = scenario.config.rng_seed
    limits = scenario.rotation_limits_array()
    cache: dict[tuple, tuple] = {}
    warm: dict[int, np.ndarray] = {}
    failures = 0

    def fitness(rotations, particle_idx):
        nonlocal failures
        key = _quantize(rotations)
        if key in cache:
            return cache[key][0]
        init_cov = warm.get(particle_idx) if warm_start else None
        try:
            report, beams, result = inner_beamformers(
                scenario, rotations, channel_seed, sca_options, init_covariances=init_cov
            )
        except ScaError as exc:
            if init_cov is not None:
                # Retry cold before giving up on this position.
                try:
                    report, beams, result = inner_beamformers(
                        scenario, rotations, channel_seed, sca_options
                    )
                except ScaError:
                    failures += 1
                    logger.warning("inner solve failed at %s: %s", rotations, exc)
                    return -math.inf
            else:
                failures += 1
                logger.warning("inner solve failed at %s: %s", rotations, exc)
                return -math.inf
        if warm_start:
            warm[particle_idx] = result.covariances
        value = report.sum_rate
        cache[key] = (value, report, beams, result.trajectory)
        return value

    seeds = [np.zeros(scenario.config.cell_count)]
    if extra_seed_rotations is not None:
        seeds.extend(np.asarray(r, dtype=float) for r in extra_seed_rotations)
    pso = pso_optimize(
        fitness,
        limits,
        pso_config,
        initial_positions=seeds,
        pass_index=True,
    )
    if not math.isfinite(pso.best_fitness):
        raise ScaError(f"every inner solve failed ({failures} evaluations)")
    key = _quantize(pso.best_position)
    if key not in cache:  # every evaluated position is cached; guard anyway
        fitness(pso.best_position, 0)
    value, report, beams, trajectory = cache[key]
    return JointResult(
        rotations=np.asarray(pso.best_position),
        beamformers=beams,
        report=report,
        pso=pso,
        sca_trajectory=trajectory,
        failed_evaluations=failures,
    )
