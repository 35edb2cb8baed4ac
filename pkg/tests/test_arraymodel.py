import numpy as np
import pytest

from ogdoa import (
    Grid,
    UlaConfig,
    build_dictionary,
    perturbed_manifold,
    steering_derivative,
    steering_vector,
)


@pytest.fixture
def ula8():
    return UlaConfig(8)


class TestSteeringVector:
    def test_broadside_is_all_ones(self, ula8):
        v = steering_vector(np.pi / 2, ula8)
        np.testing.assert_allclose(v, np.ones(8), atol=1e-12)

    def test_endfire_matches_direct_evaluation(self, ula8):
        v = steering_vector(0.0, ula8)
        expected = np.exp(1j * np.pi * (np.arange(1, 9) - 4.5))
        np.testing.assert_allclose(v, expected, rtol=1e-15)
        np.testing.assert_allclose(v[0], 1j, atol=1e-12)

    def test_unit_modulus_everywhere(self):
        rng = np.random.default_rng(0)
        for m in (2, 5, 8, 12):
            ula = UlaConfig(m)
            for theta in rng.uniform(0, np.pi, 20):
                np.testing.assert_allclose(np.abs(steering_vector(theta, ula)), 1.0, atol=1e-12)

    def test_squared_norm_is_sensor_count(self, ula8):
        rng = np.random.default_rng(1)
        for theta in rng.uniform(0, np.pi, 25):
            assert np.linalg.norm(steering_vector(theta, ula8)) ** 2 == pytest.approx(8.0, rel=1e-12)

    def test_domain_error(self, ula8):
        with pytest.raises(ValueError):
            steering_vector(-0.1, ula8)
        with pytest.raises(ValueError):
            steering_vector(np.pi + 0.1, ula8)


class TestSteeringDerivative:
    def test_zero_at_endpoints(self, ula8):
        np.testing.assert_allclose(steering_derivative(0.0, ula8), 0.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(steering_derivative(np.pi, ula8)), 0.0, atol=1e-11)

    def test_broadside_direct_evaluation(self, ula8):
        d = steering_derivative(np.pi / 2, ula8)
        expected = -1j * np.pi * (np.arange(1, 9) - 4.5)
        np.testing.assert_allclose(d, expected, rtol=1e-12)

    def test_matches_finite_difference(self, ula8):
        # central difference of the steering vector is the independent oracle
        rng = np.random.default_rng(2)
        h = 1e-6
        for theta in rng.uniform(0.05, np.pi - 0.05, 15):
            fd = (steering_vector(theta + h, ula8) - steering_vector(theta - h, ula8)) / (2 * h)
            an = steering_derivative(theta, ula8)
            np.testing.assert_allclose(an, fd, rtol=1e-6)


class TestBuildDictionary:
    def test_small_composition(self):
        grid = Grid.with_point_count(3)
        ula = UlaConfig(2)
        d = build_dictionary(grid, ula)
        np.testing.assert_array_equal(d.A[:, 0], steering_vector(0.0, ula))
        np.testing.assert_array_equal(d.A[:, 1], steering_vector(np.pi / 2, ula))
        np.testing.assert_array_equal(d.A[:, 2], steering_vector(np.pi, ula))
        np.testing.assert_allclose(d.A[:, 1], 1.0, atol=1e-12)

    def test_two_degree_grid_shape(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(2.0), ula8)
        assert d.A.shape == (8, 91)
        assert d.B.shape == (8, 91)

    def test_derivative_columns_zero_at_grid_ends(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(4.0), ula8)
        np.testing.assert_allclose(d.B[:, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(d.B[:, -1], 0.0, atol=1e-11)

    def test_columns_match_pointwise_ops(self, ula8):
        grid = Grid.from_interval_deg(4.0)
        d = build_dictionary(grid, ula8)
        for n in (0, 7, 23, 45):
            np.testing.assert_array_equal(d.A[:, n], steering_vector(grid.points[n], ula8))
            np.testing.assert_array_equal(d.B[:, n], steering_derivative(grid.points[n], ula8))

    def test_grid_must_exceed_sensor_count(self):
        with pytest.raises(ValueError):
            build_dictionary(Grid.with_point_count(5), UlaConfig(8))


class TestGrid:
    def test_divisibility_validation(self):
        assert Grid.from_interval_deg(2.0).point_count == 91
        assert Grid.from_interval_deg(0.5).point_count == 361
        with pytest.raises(ValueError):
            Grid.from_interval_deg(1.7)

    def test_uniform_spacing(self):
        g = Grid.from_interval_deg(1.0)
        np.testing.assert_allclose(np.diff(g.points), g.interval, rtol=1e-12)
        assert g.points[0] == 0.0
        assert g.points[-1] == pytest.approx(np.pi, abs=0)

    def test_radian_constructor(self):
        assert Grid.from_interval(np.pi / 2).point_count == 3


class TestPerturbedManifold:
    def test_zero_offsets_reproduce_a_exactly(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(2.0), ula8)
        phi = perturbed_manifold(d, np.zeros(91))
        np.testing.assert_array_equal(phi, d.A)

    def test_single_offset_is_local(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(2.0), ula8)
        beta = np.zeros(91)
        beta[40] = d.grid.interval / 4
        phi = perturbed_manifold(d, beta)
        mask = np.ones(91, bool)
        mask[40] = False
        np.testing.assert_array_equal(phi[:, mask], d.A[:, mask])
        assert not np.array_equal(phi[:, 40], d.A[:, 40])

    def test_out_of_box_rejected(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(2.0), ula8)
        beta = np.zeros(91)
        beta[3] = d.grid.interval
        with pytest.raises(ValueError):
            perturbed_manifold(d, beta)

    def test_first_order_taylor_error_shrinks_quadratically(self, ula8):
        # halving the grid interval must cut the linearization error ~4x
        errors = []
        for r_deg in (4.0, 2.0):
            grid = Grid.from_interval_deg(r_deg)
            d = build_dictionary(grid, ula8)
            half = grid.interval / 2
            n = np.argmin(np.abs(grid.points - np.deg2rad(61.0)))
            exact = steering_vector(grid.points[n] + half, ula8)
            linear = d.A[:, n] + half * d.B[:, n]
            errors.append(np.linalg.norm(exact - linear))
        assert errors[0] / errors[1] >= 3.5
