import math
import os

import numpy as np
import pytest

from mixedfield.harness import (
    ExperimentSpec,
    fresnel_verify_rows,
    place_users,
    run_experiment,
    run_scheme,
    tradeoff_rows,
    two_cell_sweep_rows,
    verify_results,
)
from mixedfield.rotation import PsoConfig
from mixedfield.scenario import SystemConfig, canonical_scenario
FAST_SCA = {"max_iters": 8, "tol": 1e-3}


def placed(seed=0, **kwargs):
    cfg = SystemConfig(antenna_count=65, rng_seed=seed, **kwargs)
    return place_users(canonical_scenario(cfg), seed)


class TestPlacement:
    def test_region_bounds(self):
        scenario = placed(1)
        ray = scenario.config.rayleigh_distance()
        for user in scenario.users:
            assert 0.1 * ray <= user.range_m <= ray
            assert math.pi / 3.0 <= user.angle <= 2.0 * math.pi / 3.0
            assert len(user.scatterers) == scenario.config.nlos_path_count

    def test_deterministic(self):
        assert placed(2).users == placed(2).users

    def test_mean_angle(self):
        cfg = SystemConfig(antenna_count=65, users_per_cell=3, cell_count=2)
        base = canonical_scenario(cfg)
        rng = np.random.default_rng(0)
        angles = []
        for _ in range(1700):  # 1700 drops x 6 users > 1e4 draws
            scenario = place_users(base, rng)
            angles.extend(u.angle for u in scenario.users)
        assert abs(np.mean(angles) - math.pi / 2.0) < 0.01


class TestSchemes:
    def test_fa_zf_nulls_intra_cell(self):
        scenario = placed(3)
        result = run_scheme("FA+ZF", scenario, scenario.config.rng_seed)
        assert np.all(result.rotations == 0.0)
        from mixedfield.beamforming import analog_mrt, effective_channels, rates_from_effective
        from mixedfield.scenario import build_channels

        channels = build_channels(scenario, result.rotations, scenario.config.rng_seed)
        analog = analog_mrt(scenario, result.rotations)
        heff = effective_channels(channels, analog)
        report = rates_from_effective(heff, result.digital, scenario.config.noise_power_w)
        assert report.intra_cell.max() <= 1e-8 * report.signal.min()
        # Nulling is within the cell only: the cross-cell leakage stays.
        assert report.inter_cell.min() > 0.0

    def test_ra_bf_dominates_fa_bf_and_ra_zf(self):
        scenario = placed(4)
        seed = scenario.config.rng_seed
        pso = PsoConfig(swarm_size=4, iterations=4, seed=1)
        zf_pso = PsoConfig(swarm_size=10, iterations=10, seed=1)
        fa_bf = run_scheme("FA+BF", scenario, seed, sca_options=FAST_SCA)
        ra_zf = run_scheme("RA+ZF", scenario, seed, zf_pso_config=zf_pso)
        ra_bf = run_scheme(
            "RA+BF", scenario, seed, pso_config=pso, sca_options=FAST_SCA,
            extra_seed_rotations=[ra_zf.rotations],
        )
        assert ra_bf.sum_rate >= fa_bf.sum_rate - 1e-12
        assert ra_bf.sum_rate >= ra_zf.sum_rate - 1e-12

    def test_upper_bound_dominates(self):
        scenario = placed(5)
        seed = scenario.config.rng_seed
        bound = run_scheme("UpperBound", scenario, seed)
        fa_zf = run_scheme("FA+ZF", scenario, seed)
        fa_bf = run_scheme("FA+BF", scenario, seed, sca_options=FAST_SCA)
        assert bound.sum_rate >= fa_zf.sum_rate
        assert bound.sum_rate >= fa_bf.sum_rate

    def test_discrete_refuses_large_networks(self):
        cfg = SystemConfig(antenna_count=65, cell_count=4, users_per_cell=1)
        scenario = place_users(canonical_scenario(cfg), 0)
        with pytest.raises(ValueError, match="M > 3"):
            run_scheme("DiscreteRA+ZF", scenario, 0, discrete_points=4)

    def test_discrete_close_to_continuous_on_los(self):
        cfg = SystemConfig(antenna_count=65, users_per_cell=3, nlos_path_count=0, rng_seed=6)
        scenario = place_users(canonical_scenario(cfg), 6)
        ra_zf = run_scheme(
            "RA+ZF", scenario, 6, zf_pso_config=PsoConfig(swarm_size=30, iterations=30, seed=2)
        )
        discrete = run_scheme("DiscreteRA+ZF", scenario, 6, discrete_points=100)
        assert abs(ra_zf.sum_rate - discrete.sum_rate) <= 0.15


class TestExperiments:
    def run_spec(self, out, threads):
        os.environ["SIM_THREADS"] = str(threads)
        try:
            spec = ExperimentSpec(
                preset="power_sweep",
                out_dir=str(out),
                schemes=("FA+ZF", "RA+ZF"),
                monte_carlo_drops=2,
                seed=11,
                small=True,
                sweep_values=(20.0, 30.0),
                zf_pso=PsoConfig(swarm_size=8, iterations=8),
            )
            return run_experiment(spec)
        finally:
            os.environ.pop("SIM_THREADS", None)

    def test_serial_parallel_identical(self, tmp_path):
        rows_a, failures_a = self.run_spec(tmp_path / "serial", 1)
        rows_b, failures_b = self.run_spec(tmp_path / "parallel", 3)
        assert failures_a == failures_b == 0
        serial = (tmp_path / "serial" / "results.csv").read_bytes()
        parallel = (tmp_path / "parallel" / "results.csv").read_bytes()
        assert serial == parallel

    def test_round_trip_verification(self, tmp_path):
        self.run_spec(tmp_path / "run", 2)
        assert verify_results(tmp_path / "run", fraction=0.5)

    def test_round_trip_detects_tampering(self, tmp_path):
        self.run_spec(tmp_path / "run", 2)
        target = sorted((tmp_path / "run" / "details").glob("*RA_ZF.npz"))[0]
        data = dict(np.load(target))
        data["sum_rate"] = data["sum_rate"] + 0.5
        np.savez(target, **data)
        assert not verify_results(tmp_path / "run", fraction=1.0)

    def test_row_bookkeeping(self, tmp_path):
        rows, _ = self.run_spec(tmp_path / "run", 2)
        for row in rows:
            assert row.n_drops == 2
            assert row.n_failed == 0
            assert row.user_means.shape == (2, 3)
            assert row.mean_sum_rate == pytest.approx(row.user_means.sum(), abs=1e-9)


class TestAnalysisPresets:
    def test_fresnel_rows(self, default_config):
        rows = fresnel_verify_rows(default_config, points=61)
        assert len(rows) == 3 * 61
        err = max(abs(r[1] - r[2]) for r in rows)
        assert err <= 0.05

    def test_two_cell_sweep_rotated_not_worse(self, default_config):
        fixed = two_cell_sweep_rows(default_config, sweep="angle", rotated=False,
                                    values=np.linspace(0.3, 0.6, 5) * math.pi, grid=21)
        rotated = two_cell_sweep_rows(default_config, sweep="angle", rotated=True,
                                      values=np.linspace(0.3, 0.6, 5) * math.pi, grid=21)
        total_fixed = sum(r[5] for r in fixed)
        total_rotated = sum(r[5] for r in rotated)
        assert total_rotated >= total_fixed - 1e-9

    def test_tradeoff_modes(self, default_config):
        values = np.linspace(math.pi / 3.0, 2.0 * math.pi / 3.0, 5)
        joint = tradeoff_rows(default_config, mode="joint", values=values, grid=13)
        near = tradeoff_rows(default_config, mode="near_field_only", values=values, grid=13)
        mixed = tradeoff_rows(default_config, mode="mixed_field_only", values=values, grid=13)
        for j, n, m in zip(joint, near, mixed):
            assert j[4] >= n[4] - 1e-9
            assert j[4] >= m[4] - 1e-9

    def test_analysis_preset_writes_csv(self, tmp_path):
        spec = ExperimentSpec(preset="fresnel_verify", out_dir=str(tmp_path), small=True)
        run_experiment(spec)
        text = (tmp_path / "fresnel_verify.csv").read_text().splitlines()
        assert text[0] == "phi,rho_exact,rho_approx"
        assert len(text) > 100

    def test_cli_analyze(self, tmp_path):
        from mixedfield.cli import main

        code = main(["analyze", "--preset", "fresnel_verify", "--out", str(tmp_path / "cli")])
        assert code == 0
        assert (tmp_path / "cli" / "fresnel_verify.csv").exists()

    def test_cli_simulate(self, tmp_path):
        from mixedfield.cli import main

        code = main(
            [
                "simulate", "--preset", "power_sweep", "--schemes", "FA+ZF",
                "--drops", "1", "--small", "--seed", "2", "--out", str(tmp_path / "sim"),
            ]
        )
        assert code == 0
        text = (tmp_path / "sim" / "results.csv").read_text().splitlines()
        assert text[0].startswith("scheme,power_dbm,mean_sum_rate")
        assert (tmp_path / "sim" / "timing.csv").exists()

    def test_cli_rejects_unknown_preset(self):
        from mixedfield.cli import main

        assert main(["simulate", "--preset", "fresnel_verify", "--out", "/tmp/x"]) == 2


class TestTrends:
    def test_power_sweep_monotone_means(self, tmp_path):
        spec = ExperimentSpec(
            preset="power_sweep",
            out_dir=str(tmp_path / "trend"),
            schemes=("FA+ZF", "RA+ZF", "FA+BF"),
            monte_carlo_drops=3,
            seed=9,
            small=True,
            sweep_values=(10.0, 20.0, 30.0, 40.0),
            zf_pso=PsoConfig(swarm_size=12, iterations=12),
            sca_options={"max_iters": 10, "tol": 1e-3},
        )
        rows, failures = run_experiment(spec)
        assert failures == 0
        by_scheme = {}
        for row in rows:
            by_scheme.setdefault(row.scheme, []).append((row.sweep_value, row.mean_sum_rate))
        for scheme, points in by_scheme.items():
            points.sort()
            means = [m for _, m in points]
            assert all(b >= a - 1e-9 for a, b in zip(means, means[1:])), scheme

    def test_trace_csv_schemas(self, tmp_path):
        spec = ExperimentSpec(
            preset="power_sweep",
            out_dir=str(tmp_path / "traces"),
            schemes=("FA+BF", "RA+ZF"),
            monte_carlo_drops=1,
            seed=4,
            small=True,
            sweep_values=(30.0,),
            zf_pso=PsoConfig(swarm_size=6, iterations=5),
            sca_options={"max_iters": 6, "tol": 1e-3},
        )
        run_experiment(spec)
        sca = (tmp_path / "traces" / "trace_sca_FA_BF.csv").read_text().splitlines()
        assert sca[0] == "iter,surrogate_obj,true_sum_rate,max_kkt_residual"
        pso = (tmp_path / "traces" / "trace_pso_RA_ZF.csv").read_text().splitlines()
        assert pso[0] == "iter,best_fitness,mean_fitness,best_phi_1,best_phi_2"

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ExperimentSpec(preset="power_sweep", out_dir="/tmp/x", monte_carlo_drops=0)
        with pytest.raises(ValueError):
            ExperimentSpec(preset="power_sweep", out_dir="/tmp/x", sweep_values=())
        with pytest.raises(ValueError):
            ExperimentSpec(preset="power_sweep", out_dir="/tmp/x", schemes=("bogus",))
