import math

import numpy as np
import pytest

from mixedfield.scenario import (
    BaseStation,
    SystemConfig,
    UserPlacement,
    build_channels,
    canonical_scenario,
    dbm_to_watt,
    effective_rayleigh_distance,
    element_distance,
    element_distance_taylor,
    far_steering,
    inter_cell_angle,
    inter_cell_distance,
    load_scenario,
    local_to_absolute,
    near_steering,
    user_position,
)
from conftest import random_drop_scenario


class TestRayleighDistance:
    def test_classic_one_meter_aperture(self, default_config):
        # 1 m aperture at 28 GHz: the classic boundary is about 187 m.
        value = effective_rayleigh_distance(
            math.pi / 2.0, 1.0, default_config.wavelength, 1.0
        )
        assert 186.0 <= value <= 188.0

    def test_zero_angle(self):
        assert effective_rayleigh_distance(0.0, 3.0, 0.01, 0.5) == 0.0

    def test_effective_scaling(self):
        value = effective_rayleigh_distance(math.pi / 2.0, 1.0, 0.010707, 0.367)
        assert value == pytest.approx(68.553, abs=0.01)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            SystemConfig(antenna_count=128)
        with pytest.raises(ValueError):
            SystemConfig(rayleigh_coefficient=0.0)
        cfg = SystemConfig()
        assert cfg.wavelength == 299792458.0 / 28e9
        assert cfg.element_spacing == cfg.wavelength / 2.0


class TestElementDistance:
    def test_center_element(self):
        assert element_distance(5.0, 0.3, 0.1, 0, 0.005) == 5.0
        assert element_distance_taylor(5.0, 0.3, 0.1, 0, 0.005) == 5.0

    def test_broadside_offset(self):
        r, n, d = 7.0, 11, 0.005
        exact = element_distance(r, 0.0, math.pi / 2.0, n, d)
        taylor = element_distance_taylor(r, 0.0, math.pi / 2.0, n, d)
        assert exact == pytest.approx(math.sqrt(r**2 + (n * d) ** 2), rel=1e-12)
        assert taylor == pytest.approx(r + (n * d) ** 2 / (2 * r), rel=1e-12)

    def test_expansion_error_below_sixteenth_wavelength(self, default_config):
        cfg = default_config
        r = 0.3 * cfg.rayleigh_distance()
        n = cfg.half_count
        deltas = np.linspace(-math.pi, math.pi, 20001)
        err = np.abs(
            element_distance(r, 0.0, deltas, n, cfg.element_spacing)
            - element_distance_taylor(r, 0.0, deltas, n, cfg.element_spacing)
        )
        assert err.max() < cfg.wavelength / 16.0


class TestSteering:
    def test_unit_norm_and_reference_phase(self, default_config):
        b = near_steering(0.37 * math.pi, 9.0, 0.05, default_config)
        assert np.linalg.norm(b) == pytest.approx(1.0, abs=1e-12)
        center = default_config.half_count
        assert b[center] == pytest.approx(1.0 / math.sqrt(default_config.antenna_count))

    def test_far_limit_matches_planar_vector(self, default_config):
        r = 1e6 * default_config.rayleigh_distance()
        b = near_steering(0.4 * math.pi, r, 0.0, default_config)
        a = far_steering(0.4 * math.pi, 0.0, default_config)
        assert np.abs(b - a).max() < 1e-4

    def test_far_steering_broadside_and_selfcorrelation(self, default_config):
        a = far_steering(math.pi / 2.0, 0.0, default_config)
        assert np.allclose(a, 1.0 / math.sqrt(default_config.antenna_count))
        a2 = far_steering(1.1, 0.2, default_config)
        assert np.linalg.norm(a2) == pytest.approx(1.0, abs=1e-12)
        assert abs(np.vdot(a2, a2)) == pytest.approx(1.0, abs=1e-12)

    def test_aligned_rotation_gives_linear_phase(self, default_config):
        # sin(phi - theta) = 0 kills the quadratic term entirely.
        theta = 0.3 * math.pi
        b = near_steering(theta, 5.0, theta, default_config)
        n = np.arange(-default_config.half_count, default_config.half_count + 1)
        expected_phase = (
            2.0 * math.pi / default_config.wavelength * n * default_config.element_spacing
        )
        expected = np.exp(1j * expected_phase) / math.sqrt(default_config.antenna_count)
        assert np.abs(b - expected).max() < 1e-12


class TestInterCellGeometry:
    BS = BaseStation(index=1, position=(0.0, 200.0), facing=-1)

    def test_vertical_alignment(self):
        assert inter_cell_angle((0.0, 100.0), self.BS) == pytest.approx(math.pi / 2.0)

    def test_diagonal(self):
        assert inter_cell_angle((100.0, 100.0), self.BS) == pytest.approx(math.pi / 4.0)

    def test_negative_branch(self):
        assert inter_cell_angle((-100.0, 100.0), self.BS) == pytest.approx(3.0 * math.pi / 4.0)

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            inter_cell_angle((0.0, 200.0), self.BS)

    def test_distances(self, default_config):
        assert inter_cell_distance((0.0, 100.0), self.BS) == pytest.approx(100.0)
        assert inter_cell_distance((0.0, 200.0), self.BS) == 0.0
        bs = BaseStation(index=1, position=(0.0, 2 * 186.8), facing=-1)
        d = inter_cell_distance((0.0, 100.0), bs)
        assert d == pytest.approx(273.6, abs=0.01)

    def test_angle_distance_reconstruct_position(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            facing = int(rng.choice([-1, 1]))
            bs = BaseStation(index=0, position=tuple(rng.uniform(-50, 50, 2)), facing=facing)
            point = rng.uniform(-100, 100, 2)
            if np.allclose(point, bs.position):
                continue
            psi = inter_cell_angle(point, bs)
            dist = inter_cell_distance(point, bs)
            rebuilt = np.array(
                [
                    bs.position[0] + dist * math.cos(psi),
                    bs.position[1] + facing * dist * math.sin(psi),
                ]
            )
            assert np.abs(rebuilt - point).max() < 1e-9


class TestChannels:
    def test_single_path_near_field_norm(self):
        scenario = random_drop_scenario(0, nlos=0)
        cfg = scenario.config
        channels = build_channels(scenario, [0.0, 0.0], 1)
        for m in range(2):
            for k in range(3):
                h = channels.h[m, m, k]
                beta = channels.los_gain[m, m, k]
                assert np.linalg.norm(h) == pytest.approx(
                    math.sqrt(cfg.antenna_count) * abs(beta), rel=1e-12
                )

    def test_single_path_far_field_entries(self):
        scenario = random_drop_scenario(1, nlos=0)
        channels = build_channels(scenario, [0.0, 0.0], 1)
        h = channels.h[0, 1, 0]
        beta = channels.los_gain[0, 1, 0]
        assert np.abs(np.abs(h) - abs(beta)).max() < 1e-15

    def test_determinism(self):
        scenario = random_drop_scenario(2)
        a = build_channels(scenario, [0.02, -0.05], 42)
        b = build_channels(scenario, [0.02, -0.05], 42)
        assert np.array_equal(a.h, b.h)
        assert np.array_equal(a.nlos_gain, b.nlos_gain)

    def test_gain_draws_do_not_depend_on_rotation(self):
        scenario = random_drop_scenario(2)
        a = build_channels(scenario, [0.0, 0.0], 42)
        b = build_channels(scenario, [0.1, -0.1], 42)
        assert np.array_equal(a.nlos_gain, b.nlos_gain)
        assert not np.array_equal(a.h, b.h)

    def test_rotation_limit_enforced(self):
        scenario = random_drop_scenario(3)
        with pytest.raises(ValueError, match="limits"):
            build_channels(scenario, [1.0, 0.0], 0)

    def test_regime_tags(self):
        scenario = random_drop_scenario(4)
        channels = build_channels(scenario, [0.0, 0.0], 0)
        assert channels.vector(0, 0, 0).regime.value == "near"
        assert channels.vector(0, 1, 2).regime.value == "far"

    def test_user_angle_validation(self):
        with pytest.raises(ValueError):
            UserPlacement(cell=0, index=0, angle=0.0, range_m=5.0)
        with pytest.raises(ValueError):
            UserPlacement(cell=0, index=0, angle=1.0, range_m=-1.0)


class TestScenarioFile:
    def test_load_roundtrip(self, tmp_path):
        text = """
carrier_frequency_ghz: 28
antenna_count: 65
users_per_cell: 2
power_dbm: 30
noise_dbm: -80
nlos_paths: 2
seed: 7
user_region:
  range_frac: [0.1, 1.0]
  angle_deg: [60, 120]
cells:
  - {position_m: [0.0, 0.0], rotation_limits_deg: [-30, 30]}
  - {position_m: [0.0, 64.0], rotation_limits_deg: [-30, 30], facing: down}
"""
        path = tmp_path / "scenario.yaml"
        path.write_text(text)
        scenario = load_scenario(path)
        cfg = scenario.config
        assert cfg.power_budget_w == pytest.approx(1.0)
        assert cfg.noise_power_w == pytest.approx(1e-11)
        assert cfg.cell_count == 2 and cfg.users_per_cell == 2
        assert scenario.base_stations[1].facing == -1
        assert scenario.base_stations[0].rotation_limits[1] == pytest.approx(math.pi / 6.0)
        assert scenario.user_region.angle[0] == pytest.approx(math.pi / 3.0)

    def test_dbm_conversion(self):
        assert dbm_to_watt(30.0) == pytest.approx(1.0)
        assert dbm_to_watt(-80.0) == pytest.approx(1e-11)

    def test_canonical_layout_spacing_and_facing(self):
        cfg = SystemConfig(cell_count=3)
        scenario = canonical_scenario(cfg)
        spacing = 2.0 * cfg.rayleigh_distance()
        assert scenario.base_stations[1].position[1] == pytest.approx(spacing)
        assert [bs.facing for bs in scenario.base_stations] == [1, -1, 1]

    def test_user_position_respects_facing(self):
        cfg = SystemConfig(cell_count=2)
        scenario = canonical_scenario(cfg)
        user = UserPlacement(cell=1, index=0, angle=math.pi / 2.0, range_m=10.0)
        pos = user_position(scenario, user)
        expected_y = scenario.base_stations[1].position[1] - 10.0
        assert pos[1] == pytest.approx(expected_y)
        assert local_to_absolute(scenario.base_stations[0], math.pi / 2, 10.0)[1] == pytest.approx(10.0)
