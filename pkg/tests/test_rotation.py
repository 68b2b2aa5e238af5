import math

import numpy as np
import pytest

from mixedfield.rotation import PsoConfig, inner_beamformers, joint_optimize, pso_optimize
from mixedfield.scenario import SystemConfig, UserPlacement, build_channels, canonical_scenario
from mixedfield.interference import optimal_rotation
from conftest import random_drop_scenario

BOX = [(-math.pi / 6.0, math.pi / 6.0)] * 2


def quadratic(x):
    return -float(np.sum((x - 0.1) ** 2))


class TestPso:
    def test_toy_recovery(self):
        result = pso_optimize(quadratic, BOX, PsoConfig(seed=3))
        assert np.abs(result.best_position - 0.1).max() < 1e-2

    def test_trajectory_monotone(self):
        result = pso_optimize(quadratic, BOX, PsoConfig(swarm_size=20, iterations=25, seed=5))
        trace = np.array(result.best_trajectory)
        assert np.all(np.diff(trace) >= 0.0)

    def test_seeded_particle_retained(self):
        optimum = np.array([0.1, 0.1])
        result = pso_optimize(
            quadratic, BOX, PsoConfig(swarm_size=10, iterations=10, seed=0),
            initial_positions=[optimum],
        )
        assert all(v >= quadratic(optimum) for v in result.best_trajectory)

    def test_deterministic(self):
        cfg = PsoConfig(swarm_size=15, iterations=15, seed=9)
        a = pso_optimize(quadratic, BOX, cfg)
        b = pso_optimize(quadratic, BOX, cfg)
        assert np.array_equal(a.best_position, b.best_position)
        assert a.best_trajectory == b.best_trajectory

    def test_positions_clamped(self):
        seen = []

        def recording(x):
            seen.append(x.copy())
            return quadratic(x)

        pso_optimize(recording, BOX, PsoConfig(swarm_size=12, iterations=12, seed=1))
        lows = np.array([b[0] for b in BOX])
        highs = np.array([b[1] for b in BOX])
        for position in seen:
            assert np.all(position >= lows - 1e-12)
            assert np.all(position <= highs + 1e-12)

    def test_failed_evaluations_never_win(self):
        def flaky(x):
            return -math.inf if x[0] > 0.0 else quadratic(x)

        result = pso_optimize(flaky, BOX, PsoConfig(swarm_size=15, iterations=15, seed=2))
        assert math.isfinite(result.best_fitness)
        assert result.best_position[0] <= 0.0


class TestJoint:
    def single_user_scenario(self):
        cfg = SystemConfig(cell_count=1, users_per_cell=1, nlos_path_count=0, rng_seed=0)
        scenario = canonical_scenario(cfg)
        user = UserPlacement(cell=0, index=0, angle=0.45 * math.pi, range_m=0.4 * cfg.rayleigh_distance())
        return scenario.with_users([user])

    def test_single_user_rotation_invariant(self):
        scenario = self.single_user_scenario()
        cfg = scenario.config
        result = joint_optimize(
            scenario, PsoConfig(swarm_size=5, iterations=5, seed=1), {"max_iters": 8, "tol": 1e-6}
        )
        channels = build_channels(scenario, [0.0], cfg.rng_seed)
        oracle = math.log2(
            1.0 + cfg.power_budget_w * np.linalg.norm(channels.h[0, 0, 0]) ** 2 / cfg.noise_power_w
        )
        assert result.report.sum_rate == pytest.approx(oracle, abs=1e-3)

    def test_zero_seed_dominates_fixed_antenna(self):
        scenario = random_drop_scenario(17)
        opts = {"max_iters": 8, "tol": 1e-3}
        fixed, _, _ = inner_beamformers(scenario, [0.0, 0.0], scenario.config.rng_seed, opts)
        joint = joint_optimize(scenario, PsoConfig(swarm_size=4, iterations=4, seed=3), opts)
        assert joint.report.sum_rate >= fixed.sum_rate - 1e-12

    def test_extra_seed_dominates_its_fitness(self):
        scenario = random_drop_scenario(18)
        opts = {"max_iters": 8, "tol": 1e-3}
        probe = np.array([0.2, -0.15])
        probe_rate, _, _ = inner_beamformers(scenario, probe, scenario.config.rng_seed, opts)
        joint = joint_optimize(
            scenario, PsoConfig(swarm_size=4, iterations=3, seed=4), opts,
            extra_seed_rotations=[probe],
        )
        assert joint.report.sum_rate >= probe_rate.sum_rate - 1e-12

    def test_beats_closed_form_rotations_two_cell(self):
        # Two cells, one LoS user each: the swarm should do at least as well
        # as the per-link closed-form rotation rules, which lie inside its
        # search box.
        cfg = SystemConfig(cell_count=2, users_per_cell=1, nlos_path_count=0, rng_seed=0)
        scenario = canonical_scenario(cfg)
        ray = cfg.rayleigh_distance()
        users = [
            UserPlacement(cell=0, index=0, angle=0.4 * math.pi, range_m=0.3 * ray),
            UserPlacement(cell=1, index=0, angle=0.45 * math.pi, range_m=0.35 * ray),
        ]
        scenario = scenario.with_users(users)
        from mixedfield.interference import two_cell_case

        case = two_cell_case(cfg, 0.4 * math.pi, 0.3 * ray, 0.45 * math.pi, 0.35 * ray)
        limits = scenario.base_stations[0].rotation_limits
        phi2 = optimal_rotation(case.psi_21, case.theta_21, limits, case.r_21, cfg)
        phi1 = optimal_rotation(case.psi_12, case.theta_11, limits, case.r_11, cfg)
        opts = {"max_iters": 8, "tol": 1e-5}
        corollary, _, _ = inner_beamformers(scenario, [phi1, phi2], cfg.rng_seed, opts)
        joint = joint_optimize(
            scenario, PsoConfig(swarm_size=8, iterations=8, seed=5), opts,
            extra_seed_rotations=[np.array([phi1, phi2])],
        )
        assert joint.report.sum_rate >= corollary.sum_rate - 1e-12

    def test_fixed_seed_identical_trajectory(self):
        scenario = random_drop_scenario(19)
        opts = {"max_iters": 6, "tol": 1e-3}
        cfg = PsoConfig(swarm_size=4, iterations=3, seed=7)
        a = joint_optimize(scenario, cfg, opts)
        b = joint_optimize(scenario, cfg, opts)
        assert a.pso.best_trajectory == b.pso.best_trajectory
        assert np.array_equal(a.rotations, b.rotations)
        assert a.report.sum_rate == b.report.sum_rate

    def test_report_matches_best_fitness(self):
        scenario = random_drop_scenario(21)
        joint = joint_optimize(
            scenario, PsoConfig(swarm_size=4, iterations=3, seed=8), {"max_iters": 6, "tol": 1e-3}
        )
        assert joint.report.sum_rate == pytest.approx(joint.pso.best_fitness, abs=1e-12)
