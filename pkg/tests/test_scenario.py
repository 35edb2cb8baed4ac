import math

import numpy as np
import pytest
import scipy.stats

from ogdoa import (
    Grid,
    Scenario,
    UlaConfig,
    build_dictionary,
    draw_doas,
    generate_sources,
    ground_truth_map,
    inject_outliers,
    ks_gaussian_test,
    load_scenario,
    read_snapshots,
    steering_vector,
    synthesize,
    total_noise,
    write_snapshots,
)


@pytest.fixture
def ula8():
    return UlaConfig(8)


class TestDrawDoas:
    def test_degenerate_interval(self):
        rng = np.random.default_rng(0)
        out = draw_doas([[np.deg2rad(60), np.deg2rad(60)]], rng)
        assert out[0] == np.deg2rad(60)

    def test_each_angle_in_its_interval(self):
        rng = np.random.default_rng(1)
        lo1, hi1 = np.deg2rad(58), np.deg2rad(62)
        lo2, hi2 = np.deg2rad(86), np.deg2rad(90)
        for _ in range(50):
            a, b = draw_doas([[lo1, hi1], [lo2, hi2]], rng)
            assert lo1 <= a <= hi1
            assert lo2 <= b <= hi2

    def test_sample_mean_law_of_large_numbers(self):
        rng = np.random.default_rng(2)
        draws = np.array([draw_doas([[np.deg2rad(58), np.deg2rad(62)]], rng)[0] for _ in range(10_000)])
        assert abs(np.rad2deg(draws.mean()) - 60.0) < 0.1

    def test_overlapping_intervals_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError):
            draw_doas([[0.5, 1.0], [0.9, 1.2]], rng)
        with pytest.raises(ValueError):
            draw_doas([[-0.1, 0.2]], rng)


class TestGenerateSources:
    def test_unit_variance(self):
        rng = np.random.default_rng(4)
        s = generate_sources(1, 100_000, rng)
        assert abs(s.var() - 1.0) < 0.02

    def test_shape(self):
        rng = np.random.default_rng(5)
        assert generate_sources(3, 17, rng).shape == (3, 17)

    def test_deterministic_given_seed(self):
        a = generate_sources(2, 50, np.random.default_rng(6))
        b = generate_sources(2, 50, np.random.default_rng(6))
        np.testing.assert_array_equal(a, b)


class TestSynthesize:
    def test_noiseless_is_exact(self, ula8):
        sc = Scenario(doas=np.deg2rad([40.0, 100.0]), snapshot_count=12, snr_db=math.inf, rng_seed=7)
        data = synthesize(sc, ula8)
        manifold = np.column_stack([steering_vector(t, ula8) for t in sc.doas])
        np.testing.assert_array_equal(data.Y, manifold @ data.S)
        np.testing.assert_array_equal(data.E, 0.0)

    def test_noise_variance_at_zero_db(self, ula8):
        sc = Scenario(doas=np.deg2rad([60.0]), snapshot_count=200, snr_db=0.0, rng_seed=8)
        data = synthesize(sc, ula8)
        assert abs(data.E.var() - 1.0) < 0.05  # 1600 entries

    def test_rank_one_when_single_source(self, ula8):
        sc = Scenario(doas=np.deg2rad([60.0]), snapshot_count=9, snr_db=math.inf, rng_seed=9)
        data = synthesize(sc, ula8)
        a = steering_vector(np.deg2rad(60.0), ula8)
        for t in range(9):
            np.testing.assert_allclose(data.Y[:, t], a * data.S[0, t], rtol=1e-12)

    def test_reproducible(self, ula8):
        sc = Scenario(doas=np.deg2rad([55.0]), snapshot_count=5, snr_db=10.0, rng_seed=10)
        d1, d2 = synthesize(sc, ula8), synthesize(sc, ula8)
        np.testing.assert_array_equal(d1.Y, d2.Y)
        np.testing.assert_array_equal(d1.S, d2.S)
        np.testing.assert_array_equal(d1.E, d2.E)

    def test_unit_modulus_sources(self, ula8):
        sc = Scenario(
            doas=np.deg2rad([55.0, 80.0]), snapshot_count=6, snr_db=math.inf, rng_seed=11,
            source_model="unit_modulus",
        )
        data = synthesize(sc, ula8)
        np.testing.assert_allclose(np.abs(data.S), 1.0, atol=1e-12)


class TestGroundTruthMap:
    def test_on_grid_source(self, ula8):
        grid = Grid.from_interval_deg(2.0)
        sc = Scenario(doas=np.deg2rad([60.0]), snapshot_count=4, snr_db=math.inf, rng_seed=12)
        gt = ground_truth_map(synthesize(sc, ula8), grid)
        assert math.degrees(grid.points[gt.nearest_indices[0]]) == pytest.approx(60.0)
        assert gt.true_beta[gt.nearest_indices[0]] == pytest.approx(0.0, abs=1e-12)

    def test_off_grid_source_from_smv_study(self, ula8):
        grid = Grid.from_interval_deg(2.0)
        sc = Scenario(doas=np.deg2rad([63.2]), snapshot_count=4, snr_db=math.inf, rng_seed=13)
        gt = ground_truth_map(synthesize(sc, ula8), grid)
        assert math.degrees(grid.points[gt.nearest_indices[0]]) == pytest.approx(64.0)
        assert math.degrees(gt.true_beta[gt.nearest_indices[0]]) == pytest.approx(-0.8, abs=1e-9)

    def test_offsets_within_half_cell(self, ula8):
        grid = Grid.from_interval_deg(2.0)
        rng = np.random.default_rng(14)
        for _ in range(20):
            sc = Scenario(
                doas=np.sort(rng.uniform(0.3, 2.8, 2)), snapshot_count=2,
                snr_db=math.inf, rng_seed=int(rng.integers(2**31)),
            )
            try:
                gt = ground_truth_map(synthesize(sc, ula8), grid)
            except ValueError:
                continue  # collision draw
            assert np.all(np.abs(gt.true_beta) <= grid.interval / 2 + 1e-12)
            assert np.count_nonzero(np.any(gt.true_x != 0, axis=1)) == 2

    def test_collision_rejected(self, ula8):
        grid = Grid.from_interval_deg(2.0)
        sc = Scenario(doas=np.deg2rad([59.9, 60.1]), snapshot_count=2, snr_db=math.inf, rng_seed=15)
        with pytest.raises(ValueError):
            ground_truth_map(synthesize(sc, ula8), grid)


class TestTotalNoise:
    def test_on_grid_sources_leave_pure_noise(self, ula8):
        grid = Grid.from_interval_deg(2.0)
        d = build_dictionary(grid, ula8)
        sc = Scenario(doas=np.deg2rad([60.0, 90.0]), snapshot_count=20, snr_db=5.0, rng_seed=16)
        data = synthesize(sc, ula8)
        gt = ground_truth_map(data, grid)
        np.testing.assert_allclose(total_noise(data, d, gt), data.E, atol=1e-10)

    def test_zero_for_noiseless_on_grid(self, ula8):
        grid = Grid.from_interval_deg(2.0)
        d = build_dictionary(grid, ula8)
        sc = Scenario(doas=np.deg2rad([60.0]), snapshot_count=5, snr_db=math.inf, rng_seed=17)
        data = synthesize(sc, ula8)
        gt = ground_truth_map(data, grid)
        np.testing.assert_allclose(total_noise(data, d, gt), 0.0, atol=1e-12)

    def test_linearization_residual_shrinks_quadratically(self, ula8):
        # noiseless off-grid residual is the Taylor remainder: halving the
        # grid must shrink it at least 3.5x
        norms = []
        for r_deg in (4.0, 2.0):
            grid = Grid.from_interval_deg(r_deg)
            d = build_dictionary(grid, ula8)
            offset = 0.45 * grid.interval
            theta = grid.points[20] + offset
            sc = Scenario(doas=np.array([theta]), snapshot_count=50, snr_db=math.inf, rng_seed=18)
            data = synthesize(sc, ula8)
            gt = ground_truth_map(data, grid)
            norms.append(
                np.linalg.norm(total_noise(data, d, gt)) / np.linalg.norm(data.Y)
            )
        assert norms[0] / norms[1] >= 3.5


class TestKsGaussianTest:
    def test_calibration_pass_rate(self):
        # 200 repetitions of 1e4 genuinely standard-normal samples
        rng = np.random.default_rng(19)
        passes = 0
        for _ in range(200):
            z = rng.standard_normal(10_000)
            noise = (z[:5000] + 1j * z[5000:]).reshape(50, 100)
            if ks_gaussian_test(noise, 2.0).passed:  # var 2 => components var 1
                passes += 1
        assert passes >= 186  # >= 93%

    def test_statistic_matches_scipy(self):
        rng = np.random.default_rng(20)
        noise = np.sqrt(0.5) * (rng.standard_normal((8, 40)) + 1j * rng.standard_normal((8, 40)))
        result = ks_gaussian_test(noise, 1.0)
        pooled = np.concatenate([noise.real.ravel(), noise.imag.ravel()]) / np.sqrt(0.5)
        ref = scipy.stats.kstest(pooled, "norm").statistic
        assert result.statistic == pytest.approx(ref, rel=1e-12)
        assert result.sample_count == 640

    def test_constant_input_fails(self):
        noise = np.full((8, 200), 0.3 + 0.1j)
        assert not ks_gaussian_test(noise, 1.0).passed

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            ks_gaussian_test(np.array([]), 1.0)
        with pytest.raises(ValueError):
            ks_gaussian_test(np.ones((2, 2)), 0.0)


class TestInjectOutliers:
    def test_unit_ratio_is_identity(self):
        rng = np.random.default_rng(21)
        y = rng.standard_normal((8, 10)) + 1j * rng.standard_normal((8, 10))
        np.testing.assert_array_equal(inject_outliers(y, 3, 1.0, np.random.default_rng(0)), y)

    def test_zero_count_is_identity(self):
        rng = np.random.default_rng(22)
        y = rng.standard_normal((4, 5)) + 0j
        np.testing.assert_array_equal(inject_outliers(y, 0, 10.0, rng), y)

    def test_exactly_count_entries_change(self):
        rng = np.random.default_rng(23)
        y = np.ones((8, 200), dtype=complex)
        out = inject_outliers(y, 3, 10.0, rng)
        assert np.count_nonzero(out != y) == 3
        np.testing.assert_allclose(out[out != y], 10.0)

    def test_count_out_of_range(self):
        with pytest.raises(ValueError):
            inject_outliers(np.ones((2, 2), dtype=complex), 5, 2.0, np.random.default_rng(0))


class TestScenarioIo:
    def test_load_fixed_doas(self):
        sc = load_scenario({"doas_deg": [63.2, 90.3], "T": 1, "snr_db": 20, "seed": 5})
        np.testing.assert_allclose(np.rad2deg(sc.doas), [63.2, 90.3])
        assert sc.snapshot_count == 1 and sc.rng_seed == 5

    def test_load_intervals_draws_deterministically(self):
        spec = {"intervals_deg": [[58, 62], [86, 90]], "T": 200, "snr_db": "inf", "seed": 9}
        a, b = load_scenario(spec), load_scenario(spec)
        np.testing.assert_array_equal(a.doas, b.doas)
        assert math.isinf(a.snr_db)

    def test_snapshot_csv_round_trip(self, tmp_path, ula8):
        sc = Scenario(doas=np.deg2rad([50.0, 120.0]), snapshot_count=7, snr_db=10.0, rng_seed=24)
        data = synthesize(sc, ula8)
        path = tmp_path / "snaps.csv"
        write_snapshots(path, data.Y)
        back = read_snapshots(path)
        np.testing.assert_array_equal(back, data.Y)
