"""System geometry, configuration and channel synthesis.

A scenario bundles the global physical constants, the base stations (each
carrying a rotatable uniform linear array) and the served users.  Every user
is in the near field of its serving array (spherical wavefronts) and in the
far field of all other arrays (planar wavefronts).  All angles are radians
and all powers are watts; dBm values are converted once, at file ingestion.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
import yaml

SPEED_OF_LIGHT = 299_792_458.0
"""Speed of light in m/s (exact)."""

REFLECTION_LOSS_DB = 13.0
"""Extra attenuation of a scattered path relative to free space, in dB."""


def dbm_to_watt(dbm: float) -> float:
    "Convert a dBm level to watts (30 dBm -> 1 W)."
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    "Convert watts to dBm."
    return 10.0 * math.log10(watt) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """Global physical and algorithmic parameters.

    Parameters
    ----------
    carrier_frequency_hz : float
        Carrier frequency in Hz.
    antenna_count : int
        Number of array elements per base station; must be odd (2*half + 1).
    cell_count : int
        Number of cells (one base station each).
    users_per_cell : int
        Users served per cell; equals the number of RF chains per array.
    power_budget_w : float
        Per-cell transmit power budget in watts.
    noise_power_w : float
        Receiver noise power in watts (same for every user unless a
        per-user override is passed to the rate routines).
    nlos_path_count : int
        Number of scattered paths per user channel.
    element_spacing_m : float or None
        Inter-element spacing; defaults to half a wavelength.
    rayleigh_coefficient : float
        Scaling factor of the effective Rayleigh distance, in (0, 1].
    rng_seed : int
        Seed from which all randomness in the scenario is derived.
    """

    carrier_frequency_hz: float = 28e9
    antenna_count: int = 129
    cell_count: int = 2
    users_per_cell: int = 3
    power_budget_w: float = 1.0
    noise_power_w: float = 1e-11
    nlos_path_count: int = 3
    element_spacing_m: float | None = None
    rayleigh_coefficient: float = 0.367
    rng_seed: int = 0

    def __post_init__(self):
        if self.antenna_count < 3 or self.antenna_count % 2 == 0:
            raise ValueError("antenna_count must be odd and >= 3")
        if self.carrier_frequency_hz <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.power_budget_w <= 0 or self.noise_power_w <= 0:
            raise ValueError("power and noise must be positive")
        if not 0.0 < self.rayleigh_coefficient <= 1.0:
            raise ValueError("rayleigh_coefficient must be in (0, 1]")
        if self.nlos_path_count < 0:
            raise ValueError("nlos_path_count must be non-negative")
        if self.element_spacing_m is not None and self.element_spacing_m <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def wavelength(self) -> float:
        "Carrier wavelength c/f in meters."
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    @property
    def element_spacing(self) -> float:
        "Inter-element spacing in meters (lambda/2 unless overridden)."
        if self.element_spacing_m is not None:
            return self.element_spacing_m
        return self.wavelength / 2.0

    @property
    def half_count(self) -> int:
        "Half array size: antenna_count == 2 * half_count + 1."
        return (self.antenna_count - 1) // 2

    @property
    def aperture(self) -> float:
        "Physical array aperture (N - 1) * d in meters."
        return (self.antenna_count - 1) * self.element_spacing

    def rayleigh_distance(self, theta: float = math.pi / 2.0) -> float:
        "Effective Rayleigh distance of this array toward angle ``theta``."
        return effective_rayleigh_distance(
            theta, self.aperture, self.wavelength, self.rayleigh_coefficient
        )


def effective_rayleigh_distance(
    theta: float, aperture: float, wavelength: float, upsilon: float
) -> float:
    """Near/far-field boundary ``upsilon * sin^2(theta) * 2 D^2 / lambda``.

    ``upsilon = 1`` recovers the classic Rayleigh distance.
    """
    if aperture <= 0 or wavelength <= 0:
        raise ValueError("aperture and wavelength must be positive")
    if not 0.0 < upsilon <= 1.0:
        raise ValueError("upsilon must be in (0, 1]")
    return upsilon * math.sin(theta) ** 2 * 2.0 * aperture**2 / wavelength


@dataclass(frozen=True)
class BaseStation:
    """One cell site with a rotatable uniform linear array.

    ``facing`` is the sign of the local y-axis: +1 when the array serves the
    half-plane above its position, -1 when it serves the half-plane below.
    Users and inter-cell angles are always expressed in the local frame, so
    an intra-cell angle of pi/2 is boresight for every station.
    """

    index: int
    position: tuple[float, float]
    rotation: float = 0.0
    rotation_limits: tuple[float, float] = (-math.pi / 6.0, math.pi / 6.0)
    facing: int = 1

    def __post_init__(self):
        lo, hi = self.rotation_limits
        if lo > hi:
            raise ValueError("rotation_limits must satisfy lo <= hi")
        if not lo <= self.rotation <= hi:
            raise ValueError(f"rotation {self.rotation} outside limits [{lo}, {hi}]")
        if self.facing not in (-1, 1):
            raise ValueError("facing must be +1 or -1")


@dataclass(frozen=True)
class UserPlacement:
    """Polar placement of one user in its serving station's local frame.

    ``scatterers`` holds the (angle, range) pairs of the scattered paths,
    also in the serving station's frame.
    """

    cell: int
    index: int
    angle: float
    range_m: float
    scatterers: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("user range must be positive")
        if not 0.0 < self.angle < math.pi:
            raise ValueError("intra-cell angle must lie in (0, pi)")


@dataclass(frozen=True)
class UserRegion:
    "Placement region: range as a fraction of the Rayleigh distance, angle in radians."

    range_frac: tuple[float, float] = (0.1, 1.0)
    angle: tuple[float, float] = (math.pi / 3.0, 2.0 * math.pi / 3.0)


@dataclass(frozen=True)
class Scenario:
    "Immutable bundle of configuration, base stations, user region and users."

    config: SystemConfig
    base_stations: tuple[BaseStation, ...]
    user_region: UserRegion = UserRegion()
    users: tuple[UserPlacement, ...] = ()

    def __post_init__(self):
        if len(self.base_stations) != self.config.cell_count:
            raise ValueError("base station count must equal cell_count")

    def with_users(self, users) -> "Scenario":
        "Return a copy of this scenario carrying the given user placements."
        return replace(self, users=tuple(users))

    def cell_users(self, cell: int) -> list[UserPlacement]:
        "Users of one cell ordered by user index."
        out = [u for u in self.users if u.cell == cell]
        return sorted(out, key=lambda u: u.index)

    def rotation_limits_array(self) -> np.ndarray:
        "Per-cell rotation limits as an (M, 2) array."
        return np.array([bs.rotation_limits for bs in self.base_stations])


def canonical_scenario(config: SystemConfig, spacing: float | None = None) -> Scenario:
    """Build the default multi-cell layout.

    Stations sit on a vertical line at ``spacing`` meters apart (twice the
    boresight Rayleigh distance by default) with alternating facing, so each
    pair of adjacent cells serves the strip between their arrays.
    """
    if spacing is None:
        spacing = 2.0 * config.rayleigh_distance()
    stations = tuple(
        BaseStation(index=m, position=(0.0, m * spacing), facing=1 if m % 2 == 0 else -1)
        for m in range(config.cell_count)
    )
    return Scenario(config=config, base_stations=stations)


def load_scenario(path) -> Scenario:
    """Load a scenario description file (YAML).

    Recognised keys: ``carrier_frequency_ghz``, ``antenna_count``, ``cells``
    (list of ``{position_m: [x, y], rotation_limits_deg: [lo, hi]}`` with an
    optional ``facing: up|down``), ``users_per_cell``, ``user_region``
    (``{range_frac: [lo, hi], angle_deg: [lo, hi]}``), ``power_dbm``,
    ``noise_dbm``, ``nlos_paths`` and ``seed``.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    cells = raw.get("cells", [])
    config = SystemConfig(
        carrier_frequency_hz=float(raw["carrier_frequency_ghz"]) * 1e9,
        antenna_count=int(raw["antenna_count"]),
        cell_count=len(cells) if cells else int(raw.get("cell_count", 2)),
        users_per_cell=int(raw["users_per_cell"]),
        power_budget_w=dbm_to_watt(float(raw["power_dbm"])),
        noise_power_w=dbm_to_watt(float(raw["noise_dbm"])),
        nlos_path_count=int(raw.get("nlos_paths", 0)),
        rng_seed=int(raw.get("seed", 0)),
    )
    if not cells:
        return canonical_scenario(config)
    stations = []
    for m, cell in enumerate(cells):
        limits_deg = cell.get("rotation_limits_deg", (-30.0, 30.0))
        facing_key = cell.get("facing", "up" if m % 2 == 0 else "down")
        stations.append(
            BaseStation(
                index=m,
                position=tuple(float(v) for v in cell["position_m"]),
                rotation_limits=tuple(math.radians(float(v)) for v in limits_deg),
                facing=1 if facing_key == "up" else -1,
            )
        )
    region = UserRegion()
    if "user_region" in raw:
        ur = raw["user_region"]
        region = UserRegion(
            range_frac=tuple(float(v) for v in ur.get("range_frac", (0.1, 1.0))),
            angle=tuple(math.radians(float(v)) for v in ur.get("angle_deg", (60.0, 120.0))),
        )
    return Scenario(config=config, base_stations=tuple(stations), user_region=region)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def local_to_absolute(bs: BaseStation, angle: float, range_m: float) -> np.ndarray:
    "Map a polar point in a station's local frame to absolute coordinates."
    x, y = bs.position
    return np.array([x + range_m * math.cos(angle), y + bs.facing * range_m * math.sin(angle)])


def user_position(scenario: Scenario, user: UserPlacement) -> np.ndarray:
    "Absolute Cartesian position of a user."
    return local_to_absolute(scenario.base_stations[user.cell], user.angle, user.range_m)


def inter_cell_angle(point, bs: BaseStation) -> float:
    """Angle of an absolute point as seen from a non-serving station.

    Computed through the two-branch arctangent rule on the local-frame
    projections, yielding a value in (-pi/2, 3pi/2].
    """
    dx = float(point[0]) - bs.position[0]
    dy = bs.facing * (float(point[1]) - bs.position[1])
    if dx == 0.0 and dy == 0.0:
        raise ValueError("degenerate geometry: point coincides with the base station")
    if dx > 0.0:
        return math.atan(dy / dx)
    if dx == 0.0:
        return math.pi / 2.0 if dy > 0 else -math.pi / 2.0
    return math.atan(dy / dx) + math.pi


def inter_cell_distance(point, bs: BaseStation) -> float:
    "Euclidean distance between an absolute point and a station."
    dx = float(point[0]) - bs.position[0]
    dy = float(point[1]) - bs.position[1]
    return math.hypot(dx, dy)


# ---------------------------------------------------------------------------
# Array response
# ---------------------------------------------------------------------------

def element_indices(antenna_count: int) -> np.ndarray:
    "Signed element indices -half..+half of an odd-sized array."
    half = (antenna_count - 1) // 2
    return np.arange(-half, half + 1)


def element_distance(r: float, theta: float, phi: float, n, d: float):
    "Exact distance from element ``n`` to a point at (range r, angle theta)."
    n = np.asarray(n, dtype=float)
    return np.sqrt(r**2 + (n * d) ** 2 - 2.0 * r * n * d * np.cos(phi - theta))


def element_distance_taylor(r: float, theta: float, phi: float, n, d: float):
    "Second-order expansion of :func:`element_distance` around n*d/r -> 0."
    n = np.asarray(n, dtype=float)
    delta = phi - theta
    return r - n * d * np.cos(delta) + (n * d) ** 2 * np.sin(delta) ** 2 / (2.0 * r)


def near_steering(theta: float, r: float, phi: float, config: SystemConfig) -> np.ndarray:
    """Unit-norm spherical-wavefront steering vector of a rotated array.

    Entry ``n`` (n = -half..+half) carries the phase lag of the propagation
    path difference ``r^(n) - r`` under the second-order distance expansion.
    """
    if r <= 0:
        raise ValueError("range must be positive")
    n = element_indices(config.antenna_count)
    delta = element_distance_taylor(r, theta, phi, n, config.element_spacing) - r
    phase = -2.0 * math.pi / config.wavelength * delta
    return np.exp(1j * phase) / math.sqrt(config.antenna_count)


def far_steering(psi: float, phi: float, config: SystemConfig) -> np.ndarray:
    """Unit-norm planar-wavefront steering vector of a rotated array.

    Entry ``n`` has phase ``+ (2 pi / lambda) n d cos(psi - phi)``; the
    conjugate-transposed vector therefore runs from ``+half d`` down to
    ``-half d`` phase coefficients.  This pairing with :func:`near_steering`
    makes the far/near cross-correlation match the quadratic-plus-linear
    phase sum used throughout the interference analysis.
    """
    n = element_indices(config.antenna_count)
    phase = 2.0 * math.pi / config.wavelength * n * config.element_spacing * np.cos(psi - phi)
    return np.exp(1j * phase) / math.sqrt(config.antenna_count)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

class Regime(enum.Enum):
    NEAR_FIELD = "near"
    FAR_FIELD = "far"


@dataclass(frozen=True)
class ChannelVector:
    "One (station, user) channel with its regime tag and path gains."

    coefficients: np.ndarray
    regime: Regime
    source: int
    target: tuple[int, int]
    los_gain: complex
    nlos_gains: tuple[complex, ...] = ()


@dataclass(frozen=True)
class ChannelSet:
    """All (station, user) channels of one realization.

    ``h[i, m, k]`` is the length-N channel between station ``i`` and user
    ``k`` of cell ``m``; near-field iff ``i == m``.  Arrays are read-only.
    """

    h: np.ndarray
    los_gain: np.ndarray
    nlos_gain: np.ndarray

    def __post_init__(self):
        for arr in (self.h, self.los_gain, self.nlos_gain):
            arr.setflags(write=False)

    @property
    def cell_count(self) -> int:
        return self.h.shape[0]

    @property
    def users_per_cell(self) -> int:
        return self.h.shape[2]

    def vector(self, i: int, m: int, k: int) -> ChannelVector:
        "View of one channel as a tagged :class:`ChannelVector`."
        regime = Regime.NEAR_FIELD if i == m else Regime.FAR_FIELD
        return ChannelVector(
            coefficients=self.h[i, m, k],
            regime=regime,
            source=i,
            target=(m, k),
            los_gain=complex(self.los_gain[i, m, k]),
            nlos_gains=tuple(complex(g) for g in self.nlos_gain[i, m, k]),
        )


def los_gain(wavelength: float, distance: float) -> complex:
    "Free-space line-of-sight gain with propagation phase."
    return wavelength / (4.0 * math.pi * distance) * np.exp(
        -2j * math.pi * distance / wavelength
    )


def nlos_gain_std(wavelength: float, distance: float) -> float:
    "Std of a scattered-path gain: free-space magnitude minus reflection loss."
    return 10.0 ** (-REFLECTION_LOSS_DB / 20.0) * wavelength / (4.0 * math.pi * distance)


def build_channels(scenario: Scenario, rotations, rng) -> ChannelSet:
    """Synthesize every (station, user) channel for the given rotations.

    The serving link of each user is the spherical-wavefront model; links
    from every other station use the planar-wavefront model at the user's
    inter-cell angle.  Scattered-path gains are drawn from ``rng``, so the
    result is a pure function of (scenario, rotations, seed); the draws do
    not depend on the rotation angles.

    Parameters
    ----------
    rotations : array_like
        Rotation angle per station, each inside its admissible limits.
    rng : int or numpy Generator
        Seed or generator governing the scattered-path gains.
    """
    cfg = scenario.config
    rng = np.random.default_rng(rng)
    M, K, N, L = cfg.cell_count, cfg.users_per_cell, cfg.antenna_count, cfg.nlos_path_count
    rotations = np.asarray(rotations, dtype=float)
    if rotations.shape != (M,):
        raise ValueError(f"expected {M} rotation angles")
    for bs, phi in zip(scenario.base_stations, rotations):
        lo, hi = bs.rotation_limits
        if not lo - 1e-12 <= phi <= hi + 1e-12:
            raise ValueError(f"rotation {phi} outside limits of station {bs.index}")
    users = {(u.cell, u.index): u for u in scenario.users}
    if len(users) != M * K:
        raise ValueError("scenario must carry users_per_cell users in every cell")

    h = np.zeros((M, M, K, N), dtype=complex)
    gain_los = np.zeros((M, M, K), dtype=complex)
    gain_nlos = np.zeros((M, M, K, max(L, 1)), dtype=complex)

    lam = cfg.wavelength
    for i in range(M):
        bs = scenario.base_stations[i]
        phi = rotations[i]
        for m in range(M):
            for k in range(K):
                user = users[(m, k)]
                if i == m:
                    beta = los_gain(lam, user.range_m)
                    vec = math.sqrt(N) * beta * near_steering(user.angle, user.range_m, phi, cfg)
                    for ell, (s_angle, s_range) in enumerate(user.scatterers):
                        std = nlos_gain_std(lam, s_range)
                        g = std / math.sqrt(2.0) * complex(*rng.standard_normal(2))
                        gain_nlos[i, m, k, ell] = g
                        vec = vec + math.sqrt(N / L) * g * near_steering(s_angle, s_range, phi, cfg)
                else:
                    pos = user_position(scenario, user)
                    dist = inter_cell_distance(pos, bs)
                    psi = inter_cell_angle(pos, bs)
                    beta = los_gain(lam, dist)
                    vec = math.sqrt(N) * beta * far_steering(psi, phi, cfg)
                    serving = scenario.base_stations[m]
                    for ell, (s_angle, s_range) in enumerate(user.scatterers):
                        s_pos = local_to_absolute(serving, s_angle, s_range)
                        s_dist = inter_cell_distance(s_pos, bs)
                        s_psi = inter_cell_angle(s_pos, bs)
                        std = nlos_gain_std(lam, s_dist)
                        g = std / math.sqrt(2.0) * complex(*rng.standard_normal(2))
                        gain_nlos[i, m, k, ell] = g
                        vec = vec + math.sqrt(N / L) * g * far_steering(s_psi, phi, cfg)
                h[i, m, k] = vec
                gain_los[i, m, k] = beta
    return ChannelSet(h=h, los_gain=gain_los, nlos_gain=gain_nlos[:, :, :, :L] if L else gain_nlos[:, :, :, :0])
