"""Rotation-aware inter-cell interference analysis.

The cross-correlation between a far-field steering vector (toward a victim
user in a neighbouring cell) and a near-field steering vector (toward the
served user) quantifies how much of a transmit beam leaks across cells.
This module evaluates that correlation exactly, through its closed-form
Fresnel-integral approximation, and exposes the rotation rules and the
two-cell single-user-per-cell rate analysis built on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .scenario import (
    BaseStation,
    SystemConfig,
    element_indices,
    inter_cell_angle,
    inter_cell_distance,
    local_to_absolute,
)

_DEGENERATE_SIN = 1e-9


class DegenerateRotationError(ValueError):
    """Raised when ``sin(phi - theta) = 0`` and the closed form is undefined."""


def fresnel_c(x):
    "Fresnel cosine integral C(x) = int_0^x cos(pi t^2 / 2) dt."
    s, c = special.fresnel(x)
    return c


def fresnel_s(x):
    "Fresnel sine integral S(x) = int_0^x sin(pi t^2 / 2) dt."
    s, c = special.fresnel(x)
    return s


@dataclass(frozen=True)
class GammaPair:
    """Arguments of the closed-form interference envelope.

    ``gamma1`` offsets the Fresnel window by the angular mismatch between
    the beam direction and the victim direction; ``gamma2`` is the window
    half-width set by array size, spacing and served-user range.
    """

    gamma1: float
    gamma2: float

    def __post_init__(self):
        if self.gamma2 <= 0:
            raise ValueError("gamma2 must be positive")


def gamma_params(
    psi: float, theta: float, r: float, phi: float, config: SystemConfig
) -> GammaPair:
    """Closed-form parameters of the rotated-array cross-correlation.

    Raises
    ------
    DegenerateRotationError
        When ``sin(phi - theta) = 0``; the quadratic phase term vanishes and
        callers must fall back to :func:`rho_exact`.
    """
    if r <= 0:
        raise ValueError("range must be positive")
    d = config.element_spacing
    sin2 = math.sin(phi - theta) ** 2
    if sin2 < _DEGENERATE_SIN**2:
        raise DegenerateRotationError("degenerate: quadratic phase vanishes")
    g1 = (math.cos(phi - theta) - math.cos(psi - phi)) * math.sqrt(r / (d * sin2))
    g2 = config.antenna_count / 2.0 * math.sqrt(d * sin2 / r)
    return GammaPair(g1, g2)


def g_function(gamma: GammaPair) -> float:
    """Fresnel-window magnitude ``|Chat + j Shat| / (2 gamma2)``.

    ``Chat(x, y) = C(x + y) - C(x - y)`` and likewise for ``Shat``.  Even in
    ``gamma1``, tends to 1 as ``gamma2 -> 0+`` and decays like
    ``1 / gamma2`` for large windows.
    """
    g1, g2 = gamma.gamma1, gamma.gamma2
    if g2 <= 0:
        raise ValueError("gamma2 must be positive")
    chat = fresnel_c(g1 + g2) - fresnel_c(g1 - g2)
    shat = fresnel_s(g1 + g2) - fresnel_s(g1 - g2)
    return abs(chat + 1j * shat) / (2.0 * g2)


def rho_exact(psi: float, theta: float, r: float, phi, config: SystemConfig):
    """Exact far/near cross-correlation by direct summation over elements.

    Accepts a scalar or array of rotation angles ``phi`` and returns values
    in [0, 1].
    """
    if r <= 0:
        raise ValueError("range must be positive")
    phi_arr = np.atleast_1d(np.asarray(phi, dtype=float))
    n = element_indices(config.antenna_count)
    d = config.element_spacing
    quad = (n**2 * d**2)[None, :] * (np.sin(phi_arr - theta) ** 2 / (2.0 * r))[:, None]
    lin = (n * d)[None, :] * (np.cos(psi - phi_arr) - np.cos(phi_arr - theta))[:, None]
    phase = 2.0 * math.pi / config.wavelength * (quad + lin)
    rho = np.abs(np.exp(1j * phase).mean(axis=1))
    rho = np.minimum(rho, 1.0)
    return rho[0] if np.isscalar(phi) or np.asarray(phi).ndim == 0 else rho


def rho_approx(psi: float, theta: float, r: float, phi: float, config: SystemConfig) -> float:
    """Closed-form Fresnel approximation of :func:`rho_exact`.

    Propagates :class:`DegenerateRotationError` for ``sin(phi - theta) = 0``.
    """
    return g_function(gamma_params(psi, theta, r, phi, config))


def near_cross_correlation(
    theta1: float, r1: float, theta2: float, r2: float, phi: float, config: SystemConfig
) -> float:
    "Correlation |b(theta1, r1)^H b(theta2, r2)| of two near-field vectors."
    from .scenario import near_steering

    b1 = near_steering(theta1, r1, phi, config)
    b2 = near_steering(theta2, r2, phi, config)
    return min(abs(np.vdot(b1, b2)), 1.0)


def _max_abs_sin_on_interval(theta: float, lo: float, hi: float) -> float:
    "Closed-form maximizer of sin^2(phi - theta) for phi in [lo, hi]."
    candidates = [lo, hi]
    for target in (theta - math.pi / 2.0, theta + math.pi / 2.0):
        if lo <= target <= hi:
            candidates.append(target)
    return max(candidates, key=lambda p: math.sin(p - theta) ** 2)


def optimal_rotation(
    psi: float,
    theta: float,
    limits: tuple[float, float],
    r: float,
    config: SystemConfig,
    grid_points: int = 181,
) -> float:
    """Interference-minimizing rotation of the offending array.

    Three regimes:

    * ``psi == theta == pi/2`` (both directions at boresight): rotation
      cannot help; returns 0.
    * ``psi == theta != pi/2``: the correlation depends only on the window
      width, maximized at ``|phi - theta| = pi/2``; returns the clamp of
      ``psi - pi/2`` onto the admissible interval.
    * ``psi != theta``: grid argmin of the closed-form correlation over
      ``grid_points`` uniform samples (exact summation at degenerate nodes).
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    lo, hi = limits
    if abs(psi - theta) <= 1e-12:
        if abs(theta - math.pi / 2.0) <= 1e-12:
            return 0.0
        if psi > math.pi / 2.0:
            phi_star = min(psi - math.pi / 2.0, hi)
        else:
            phi_star = max(psi - math.pi / 2.0, lo)
        return float(phi_star)
    grid = np.linspace(lo, hi, grid_points)
    values = np.empty_like(grid)
    for idx, phi in enumerate(grid):
        try:
            values[idx] = rho_approx(psi, theta, r, phi, config)
        except DegenerateRotationError:
            values[idx] = rho_exact(psi, theta, r, phi, config)
    return float(grid[int(np.argmin(values))])


# ---------------------------------------------------------------------------
# Two-cell single-user-per-cell analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoCellCase:
    """Geometry and budgets of the two-cell, one-user-per-cell scenario.

    Subscripts follow (cell, user): user 11 is served by station 1, user 21
    by station 2.  ``psi_21`` / ``dist_21`` locate user 11 relative to
    station 2 (the link over which station 2's beam interferes), and
    ``psi_12`` / ``dist_12`` locate user 21 relative to station 1.
    """

    config: SystemConfig
    theta_11: float
    r_11: float
    theta_21: float
    r_21: float
    psi_21: float
    psi_12: float
    dist_21: float
    dist_12: float
    phi_1: float = 0.0
    phi_2: float = 0.0
    noise_11: float = 1e-11
    noise_21: float = 1e-11

    def __post_init__(self):
        if min(self.r_11, self.r_21, self.dist_21, self.dist_12) <= 0:
            raise ValueError("ranges and distances must be positive")
        if self.noise_11 <= 0 or self.noise_21 <= 0:
            raise ValueError("noise powers must be positive")

    @property
    def power_budget(self) -> float:
        return self.config.power_budget_w

    def with_rotations(self, phi_1: float, phi_2: float) -> "TwoCellCase":
        from dataclasses import replace

        return replace(self, phi_1=phi_1, phi_2=phi_2)


def two_cell_case(
    config: SystemConfig,
    theta_11: float,
    r_11: float,
    theta_21: float,
    r_21: float,
    phi_1: float = 0.0,
    phi_2: float = 0.0,
    spacing: float | None = None,
) -> TwoCellCase:
    """Derive a :class:`TwoCellCase` from the canonical facing-pair layout.

    Station 1 sits at the origin facing up, station 2 at ``(0, spacing)``
    facing down (spacing defaults to twice the boresight Rayleigh distance);
    inter-cell angles and distances follow from the user positions.
    """
    if spacing is None:
        spacing = 2.0 * config.rayleigh_distance()
    bs1 = BaseStation(index=0, position=(0.0, 0.0), facing=1)
    bs2 = BaseStation(index=1, position=(0.0, spacing), facing=-1)
    u11 = local_to_absolute(bs1, theta_11, r_11)
    u21 = local_to_absolute(bs2, theta_21, r_21)
    return TwoCellCase(
        config=config,
        theta_11=theta_11,
        r_11=r_11,
        theta_21=theta_21,
        r_21=r_21,
        psi_21=inter_cell_angle(u11, bs2),
        psi_12=inter_cell_angle(u21, bs1),
        dist_21=inter_cell_distance(u11, bs2),
        dist_12=inter_cell_distance(u21, bs1),
        phi_1=phi_1,
        phi_2=phi_2,
        noise_11=config.noise_power_w,
        noise_21=config.noise_power_w,
    )


def _case_cross_correlations(case: TwoCellCase, use_approx: bool) -> tuple[float, float]:
    "Cross-correlations (at user 11 from station 2, at user 21 from station 1)."

    def rho(psi, theta, r, phi):
        if use_approx:
            try:
                return rho_approx(psi, theta, r, phi, case.config)
            except DegenerateRotationError:
                pass
        return float(rho_exact(psi, theta, r, phi, case.config))

    rho_at_11 = rho(case.psi_21, case.theta_21, case.r_21, case.phi_2)
    rho_at_21 = rho(case.psi_12, case.theta_11, case.r_11, case.phi_1)
    return rho_at_11, rho_at_21


def two_cell_sum_rate(
    case: TwoCellCase, p11: float, p21: float, use_approx: bool = False
):
    """Achievable rates under matched-filter beams and given power split.

    Each station transmits toward its own user with the spherical-wavefront
    matched filter at power ``p11`` / ``p21``; the victim user in the other
    cell sees the beam attenuated by the squared cross-correlation.

    Returns
    -------
    (rate_11, rate_21, sum_rate) in bps/Hz.
    """
    if not (0.0 <= p11 <= case.power_budget + 1e-12):
        raise ValueError("p11 outside [0, P]")
    if not (0.0 <= p21 <= case.power_budget + 1e-12):
        raise ValueError("p21 outside [0, P]")
    cfg = case.config
    lam, N = cfg.wavelength, cfg.antenna_count
    rho_at_11, rho_at_21 = _case_cross_correlations(case, use_approx)
    b11 = lam / (4.0 * math.pi * case.r_11)
    b21 = lam / (4.0 * math.pi * case.r_21)
    bt_21 = lam / (4.0 * math.pi * case.dist_21)
    bt_12 = lam / (4.0 * math.pi * case.dist_12)
    sig_11 = p11 * N * b11**2
    sig_21 = p21 * N * b21**2
    intf_11 = p21 * N * bt_21**2 * rho_at_11**2
    intf_21 = p11 * N * bt_12**2 * rho_at_21**2
    rate_11 = math.log2(1.0 + sig_11 / (intf_11 + case.noise_11))
    rate_21 = math.log2(1.0 + sig_21 / (intf_21 + case.noise_21))
    return rate_11, rate_21, rate_11 + rate_21


def power_grid_search(case: TwoCellCase, grid: int = 101, use_approx: bool = False):
    """Exhaustive power-split search over a ``grid x grid`` lattice on [0, P]^2.

    Returns
    -------
    (p11_star, p21_star, best_sum_rate).
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    cfg = case.config
    lam, N = cfg.wavelength, cfg.antenna_count
    rho_at_11, rho_at_21 = _case_cross_correlations(case, use_approx)
    p = np.linspace(0.0, case.power_budget, grid)
    p11, p21 = np.meshgrid(p, p, indexing="ij")
    b11 = lam / (4.0 * math.pi * case.r_11)
    b21 = lam / (4.0 * math.pi * case.r_21)
    bt_21 = lam / (4.0 * math.pi * case.dist_21)
    bt_12 = lam / (4.0 * math.pi * case.dist_12)
    r1 = np.log2(1.0 + p11 * N * b11**2 / (p21 * N * bt_21**2 * rho_at_11**2 + case.noise_11))
    r2 = np.log2(1.0 + p21 * N * b21**2 / (p11 * N * bt_12**2 * rho_at_21**2 + case.noise_21))
    total = r1 + r2
    flat = int(np.argmax(total))
    i, j = np.unravel_index(flat, total.shape)
    return float(p[i]), float(p[j]), float(total[i, j])


def interference_free_bound(case: TwoCellCase, p11: float, p21: float) -> float:
    "Sum-rate upper bound with both cross-correlations forced to zero."
    cfg = case.config
    lam, N = cfg.wavelength, cfg.antenna_count
    b11 = lam / (4.0 * math.pi * case.r_11)
    b21 = lam / (4.0 * math.pi * case.r_21)
    return math.log2(1.0 + p11 * N * b11**2 / case.noise_11) + math.log2(
        1.0 + p21 * N * b21**2 / case.noise_21
    )
