"""Two-stage beamformer optimization and rate evaluation.

The analog stage points one matched-filter column at each served user; the
digital stage is optimized over lifted covariance matrices by alternating
convex subproblem solves (one linearization of the interference part per
iteration), then collapsed back to beamforming vectors.  A zero-forcing
digital stage is provided as the benchmark design.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import ChannelSet, Scenario, near_steering
from .subproblem import SubproblemError, solve_relaxed_subproblem

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


class ZfInfeasibleError(RuntimeError):
    "Raised when the effective channel matrix is too ill conditioned for ZF."


class ScaError(RuntimeError):
    "Raised when an inner solve fails; carries the last feasible covariances."

    def __init__(self, message, last_covariances=None):
        super().__init__(message)
        self.last_covariances = last_covariances


# ---------------------------------------------------------------------------
# Rate evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SumRateReport:
    """Per-user SINR decomposition in watts plus the derived rates.

    Every array is (cells, users).  Rates are recomputed from the stored
    components, so the decomposition is the single source of truth.
    """

    signal: np.ndarray
    intra_cell: np.ndarray
    inter_cell: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        for arr in (self.signal, self.intra_cell, self.inter_cell, self.noise):
            arr.setflags(write=False)

    @property
    def sinr(self) -> np.ndarray:
        return self.signal / (self.intra_cell + self.inter_cell + self.noise)

    @property
    def rates(self) -> np.ndarray:
        "Per-user achievable rates in bps/Hz."
        return np.log2(1.0 + self.sinr)

    @property
    def cell_rates(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    @property
    def sum_rate(self) -> float:
        return float(self.rates.sum())


def _sinr_report(gains: np.ndarray, noise_power) -> SumRateReport:
    """Assemble a report from the link-gain tensor g[i, m, k, j].

    ``g[i, m, k, j]`` is the complex amplitude user (m, k) receives from the
    stream intended for user j of cell i.
    """
    m_cells, _, k_users, _ = gains.shape
    power = np.abs(gains) ** 2
    signal = np.empty((m_cells, k_users))
    intra = np.empty((m_cells, k_users))
    inter = np.empty((m_cells, k_users))
    for m in range(m_cells):
        for k in range(k_users):
            own = power[m, m, k]
            signal[m, k] = own[k]
            intra[m, k] = own.sum() - own[k]
            inter[m, k] = power[:, m, k].sum() - own.sum()
    noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (m_cells, k_users)).copy()
    return SumRateReport(signal=signal, intra_cell=intra, inter_cell=inter, noise=noise)


def rates_from_channels(
    channels: ChannelSet, analog, digital, noise_power, power_budget: float | None = None
) -> SumRateReport:
    """Exact rates from raw N-dimensional channels and both beamformer stages.

    When ``power_budget`` is given, a violated budget logs a warning but the
    rates are still evaluated.
    """
    if power_budget is not None:
        check_power(analog, digital, power_budget)
    h = channels.h
    gains = np.einsum("imkn,inl,ilj->imkj", h.conj(), analog, digital)
    return _sinr_report(gains, noise_power)


def rates_from_effective(heff, digital, noise_power) -> SumRateReport:
    "Rates from effective (RF-chain domain) channels; equivalent to the raw form."
    gains = np.einsum("imkl,ilj->imkj", heff.conj(), digital)
    return _sinr_report(gains, noise_power)


def covariance_rates(heff, covariances, noise_power) -> np.ndarray:
    "Per-user rates of a covariance set (trace form of the SINR)."
    m_cells, _, k_users, _ = heff.shape
    quad = np.einsum("imka,ijab,imkb->imkj", heff.conj(), covariances, heff).real
    quad = np.maximum(quad, 0.0)
    noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (m_cells, k_users))
    rates = np.empty((m_cells, k_users))
    for m in range(m_cells):
        for k in range(k_users):
            own = quad[m, m, k]
            signal = own[k]
            interference = quad[:, m, k].sum() - signal
            rates[m, k] = math.log2(1.0 + signal / (interference + noise[m, k]))
    return rates


def check_power(analog, digital, power_budget: float, warn: bool = True) -> np.ndarray:
    "Per-cell composite power ||F_A F_D||_F^2; warns on budget violation."
    used = np.array(
        [float(np.linalg.norm(fa @ fd, "fro") ** 2) for fa, fd in zip(analog, digital)]
    )
    if warn and np.any(used > power_budget * (1.0 + 1e-6) + 1e-12):
        logger.warning("composite beamformer exceeds power budget: %s > %s", used.max(), power_budget)
    return used


# ---------------------------------------------------------------------------
# Analog stage
# ---------------------------------------------------------------------------

def analog_mrt(scenario: Scenario, rotations) -> np.ndarray:
    """Matched-filter analog beamformers, one (N, K) matrix per cell.

    Column k carries the unit-modulus conjugate phases of user k's
    spherical-wavefront steering vector at the cell's rotation angle.
    """
    cfg = scenario.config
    M, K, N = cfg.cell_count, cfg.users_per_cell, cfg.antenna_count
    rotations = np.asarray(rotations, dtype=float)
    analog = np.empty((M, N, K), dtype=complex)
    for m in range(M):
        for k, user in enumerate(scenario.cell_users(m)):
            analog[m, :, k] = math.sqrt(N) * near_steering(
                user.angle, user.range_m, rotations[m], cfg
            )
    return analog


def effective_channels(channels: ChannelSet, analog) -> np.ndarray:
    "RF-chain domain channels heff[i, m, k] = F_A,i^H h_{i,m,k}."
    return np.einsum("inj,imkn->imkj", np.conj(analog), channels.h)


def analog_gram(analog) -> np.ndarray:
    "Per-cell Gram matrices F_A^H F_A used in the power accounting."
    return np.einsum("mna,mnb->mab", np.conj(analog), analog)


# ---------------------------------------------------------------------------
# Digital stage: zero forcing
# ---------------------------------------------------------------------------

def zf_digital(
    heff_cell: np.ndarray,
    gram_cell: np.ndarray,
    power_budget: float,
    *,
    regularize: bool = False,
    condition_limit: float = 1e10,
):
    """Zero-forcing digital beamformer for one cell.

    Parameters
    ----------
    heff_cell : (K, K) complex
        Effective serving channels, column k for user k.
    gram_cell : (K, K) complex
        Analog Gram matrix of the cell.
    power_budget : float
        Cell budget; each stream is scaled to ``power_budget / K``.
    regularize : bool
        When the channel matrix condition number reaches
        ``condition_limit``, apply diagonal loading instead of raising.

    Returns
    -------
    (digital, used_loading) where ``digital`` is the (K, K) beamformer and
    ``used_loading`` flags the diagonal-loading fallback.

    Raises
    ------
    ZfInfeasibleError
        On an ill-conditioned channel matrix when ``regularize`` is False.
    """
    k_users = heff_cell.shape[0]
    matrix = np.asarray(heff_cell, dtype=complex)
    used_loading = False
    if np.linalg.cond(matrix) >= condition_limit:
        if not regularize:
            raise ZfInfeasibleError("ZF infeasible: effective channel matrix is singular")
        loading = 1e-8 * np.trace(matrix.conj().T @ matrix).real / k_users
        matrix = matrix + loading * np.eye(k_users)
        used_loading = True
        logger.info("ZF diagonal loading applied (%.3e)", loading)
    digital = np.linalg.inv(matrix.conj().T)
    per_stream = power_budget / k_users
    for k in range(k_users):
        col = digital[:, k]
        used = float(np.real(col.conj() @ gram_cell @ col))
        digital[:, k] = col * math.sqrt(per_stream / used)
    return digital, used_loading


def zf_all_cells(heff, gram, power_budget: float, *, regularize: bool = False):
    "Per-cell ZF stage; returns the (M, K, K) beamformers and loading flags."
    m_cells, _, k_users, _ = heff.shape
    digital = np.empty((m_cells, k_users, k_users), dtype=complex)
    flags = []
    for m in range(m_cells):
        cell_matrix = heff[m, m].T  # column k = effective channel of user k
        digital[m], flag = zf_digital(cell_matrix, gram[m], power_budget, regularize=regularize)
        flags.append(flag)
    return digital, flags


# ---------------------------------------------------------------------------
# Digital stage: covariance optimization
# ---------------------------------------------------------------------------

def _mrt_digital(heff, gram, power_budget: float) -> np.ndarray:
    "Matched-filter digital stage with equal power split (ZF fallback)."
    m_cells, _, k_users, _ = heff.shape
    digital = np.empty((m_cells, k_users, k_users), dtype=complex)
    per_stream = power_budget / k_users
    for m in range(m_cells):
        for k in range(k_users):
            col = heff[m, m, k]
            used = float(np.real(col.conj() @ gram[m] @ col))
            digital[m, :, k] = col * math.sqrt(per_stream / max(used, 1e-300))
    return digital


def interference_gradients(heff, covariances, noise_power):
    """Interference-penalty linearization at the current covariances.

    Returns the PSD matrices ``C_{m,k}`` (bits units) whose inner product
    with the covariance blocks replaces the concave interference term, plus
    the per-user interference-plus-noise powers used as linearization
    weights.
    """
    m_cells, _, k_users, _ = heff.shape
    quad = np.einsum("imka,ijab,imkb->imkj", heff.conj(), covariances, heff).real
    noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (m_cells, k_users))
    denom = np.empty((m_cells, k_users))
    for m in range(m_cells):
        for k in range(k_users):
            own = quad[m, m, k]
            denom[m, k] = quad[:, m, k].sum() - own[k] + noise[m, k]
    outer = np.einsum("imka,imkb->imkab", heff, heff.conj())
    coeffs = np.zeros((m_cells, k_users, k_users, k_users), dtype=complex)
    for p in range(m_cells):
        own_sum = sum(outer[p, p, kk] / denom[p, kk] for kk in range(k_users))
        cross = sum(
            outer[p, mm, kk] / denom[mm, kk]
            for mm in range(m_cells)
            if mm != p
            for kk in range(k_users)
        )
        for q in range(k_users):
            coeffs[p, q] = (own_sum - outer[p, p, q] / denom[p, q] + cross) / LN2
    return coeffs, denom


def extract_rank_one(covariance: np.ndarray, rng=None, score=None, samples: int = 200):
    """Collapse a PSD covariance to a beamforming vector.

    Returns the scaled top eigenvector when the matrix is numerically rank
    one (second eigenvalue within 1e-6 of the top).  Otherwise draws
    ``samples`` Gaussian candidates shaped by the covariance, rescales each
    to the covariance trace, and returns the best under ``score`` (defaults
    to the quadratic form v^H W v).

    Returns
    -------
    (vector, used_randomization)
    """
    w = np.asarray(covariance, dtype=complex)
    evals, evecs = np.linalg.eigh(w)
    evals = np.maximum(evals, 0.0)
    top = evals[-1]
    if top <= 0.0:
        return np.zeros(w.shape[0], dtype=complex), False
    second = evals[-2] if w.shape[0] > 1 else 0.0
    if second <= 1e-6 * top:
        return math.sqrt(top) * evecs[:, -1], False
    rng = np.random.default_rng(rng)
    if score is None:
        score = lambda v: float(np.real(v.conj() @ w @ v))
    shaped = evecs * np.sqrt(evals)
    trace = float(evals.sum())
    best_vec = None
    best_val = -np.inf
    for _ in range(samples):
        raw = shaped @ (
            (rng.standard_normal(w.shape[0]) + 1j * rng.standard_normal(w.shape[0]))
            / math.sqrt(2.0)
        )
        norm_sq = float(np.real(raw.conj() @ raw))
        if norm_sq <= 0.0:
            continue
        cand = raw * math.sqrt(trace / norm_sq)
        val = score(cand)
        if val > best_val:
            best_val = val
            best_vec = cand
    logger.info("rank-one extraction used Gaussian randomization")
    return best_vec, True


def _collapse_covariances(heff, covariances, gram, power_budget, noise_power, rng):
    """Extract per-user vectors from covariance blocks, jointly scored.

    Blocks that are numerically rank one collapse exactly; any remaining
    block picks the randomized candidate maximizing the network sum-rate
    with all other blocks held at their current vectors.
    """
    m_cells, _, k_users, _ = heff.shape
    digital = np.empty((m_cells, k_users, k_users), dtype=complex)
    pending = []
    for m in range(m_cells):
        for k in range(k_users):
            vec, randomized = extract_rank_one(covariances[m, k], rng=0)
            digital[m, :, k] = vec
            if randomized:
                pending.append((m, k))
    for m, k in pending:
        def network_score(vec, m=m, k=k):
            trial = digital.copy()
            trial[m, :, k] = vec
            return rates_from_effective(heff, trial, noise_power).sum_rate

        vec, _ = extract_rank_one(covariances[m, k], rng=rng, score=network_score)
        digital[m, :, k] = vec
    # Rank-one extraction may overshoot the trace budget; never exceed it.
    for m in range(m_cells):
        used = float(np.real(np.einsum("lk,lj,jk->", digital[m].conj(), gram[m], digital[m])))
        if used > power_budget:
            digital[m] *= math.sqrt(power_budget / used)
    return digital


@dataclass
class ScaResult:
    "Covariances, collapsed beamformers and per-iteration traces of one run."

    covariances: np.ndarray
    digital: np.ndarray
    trajectory: list = field(default_factory=list)
    surrogate: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    converged: bool = False
    kept_initial: bool = False
    sum_rate: float = 0.0


def sca_digital(
    heff,
    gram,
    power_budget: float,
    noise_power,
    *,
    max_iters: int = 30,
    tol: float = 1e-4,
    init: str = "zf",
    init_covariances=None,
    rng=None,
    solver_options: dict | None = None,
) -> ScaResult:
    """Digital-stage optimizer: iterated convex covariance subproblems.

    Starting from the zero-forcing solution (matched filters when ZF is
    singular) or from ``init_covariances``, each iteration linearizes the
    interference part of the rate at the current covariances and solves the
    resulting convex subproblem exactly.  The covariance sum-rate ascends
    monotonically (within solver accuracy); iteration stops when one step
    improves it by less than ``tol`` bps/Hz.

    The returned ``digital`` matrices are the rank-one collapse of the final
    covariances; if collapsing loses enough to fall below the initial
    beamformer's sum-rate, the initial beamformer is returned instead
    (``kept_initial``), so the result never degrades the starting design.

    Raises
    ------
    ScaError
        When a subproblem solve fails; the exception carries the last
        feasible covariances.
    """
    m_cells, _, k_users, _ = heff.shape
    solver_options = dict(solver_options or {})
    if init_covariances is not None:
        start_digital = None
        covariances = np.array(init_covariances, dtype=complex)
    else:
        if init == "zf":
            try:
                start_digital, _ = zf_all_cells(heff, gram, power_budget, regularize=True)
            except ZfInfeasibleError:
                start_digital = _mrt_digital(heff, gram, power_budget)
        elif init == "mrt":
            start_digital = _mrt_digital(heff, gram, power_budget)
        else:
            raise ValueError(f"unknown init {init!r}")
        covariances = np.einsum("mak,mbk->mkab", start_digital, np.conj(start_digital))

    result = ScaResult(covariances=covariances, digital=np.zeros_like(covariances[:, :, :, 0]))
    rate = float(covariance_rates(heff, covariances, noise_power).sum())
    result.trajectory.append(rate)
    for iteration in range(max_iters):
        coeffs, denom = interference_gradients(heff, covariances, noise_power)
        try:
            sol = solve_relaxed_subproblem(
                heff,
                coeffs,
                gram,
                power_budget,
                noise_power,
                initial=covariances,
                **solver_options,
            )
        except SubproblemError as exc:
            raise ScaError(
                f"inner solve failed at iteration {iteration}: {exc}",
                last_covariances=covariances,
            ) from exc
        # Surrogate objective at the new point: the subproblem value plus
        # the anchor terms of the linearization at the old covariances.
        anchor = float(np.einsum("mkij,mkji->", coeffs, covariances).real)
        result.surrogate.append(sol.objective - anchor + float(np.sum(np.log2(denom))))
        result.residuals.append(sol.residuals)
        new_rate = float(covariance_rates(heff, sol.covariances, noise_power).sum())
        if new_rate < rate:
            # Any dip is bounded by the subproblem duality gap; discard the
            # update and stop, which keeps the ascent exact.
            result.converged = True
            break
        covariances = sol.covariances
        result.trajectory.append(new_rate)
        improvement = new_rate - rate
        rate = new_rate
        if abs(improvement) < tol:
            result.converged = True
            break

    result.covariances = covariances
    digital = _collapse_covariances(heff, covariances, gram, power_budget, noise_power, rng)
    final_rate = rates_from_effective(heff, digital, noise_power).sum_rate
    if start_digital is not None:
        init_rate = rates_from_effective(heff, start_digital, noise_power).sum_rate
        if init_rate > final_rate:
            digital = start_digital
            final_rate = init_rate
            result.kept_initial = True
            logger.info("extraction fell below the initial design; kept initial")
    result.digital = digital
    result.sum_rate = final_rate
    return result


@dataclass(frozen=True)
class BeamformerSet:
    "Analog and digital stages for every cell, with optional covariances."

    rotations: np.ndarray
    analog: np.ndarray
    digital: np.ndarray
    covariances: np.ndarray | None = None

    def composite(self, cell: int) -> np.ndarray:
        "Composite per-cell beamformer F_A F_D (N x K)."
        return self.analog[cell] @ self.digital[cell]
