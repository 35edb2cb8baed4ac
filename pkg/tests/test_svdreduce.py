import math

import numpy as np
import pytest

from ogdoa import (
    Grid,
    InferenceConfig,
    Scenario,
    UlaConfig,
    build_dictionary,
    estimate_powers,
    extract_doas,
    run_ogsbi,
    run_ogsbi_svd,
    svd_reduce,
    synthesize,
)


@pytest.fixture
def ula8():
    return UlaConfig(8)


class TestSvdReduce:
    def test_rank_k_data_fully_preserved(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
        s = rng.standard_normal((2, 50)) + 1j * rng.standard_normal((2, 50))
        y = a @ s
        red = svd_reduce(y, 2)
        recon = y @ red.v1 @ red.v1.conj().T
        assert np.linalg.norm(recon - y) / np.linalg.norm(y) < 1e-10

    def test_no_reduction_when_t_equals_k(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
        red = svd_reduce(y, 2)
        np.testing.assert_allclose(red.v1.conj().T @ red.v1, np.eye(2), atol=1e-12)
        # spans the same column space
        proj = red.y_sv @ np.linalg.pinv(red.y_sv)
        np.testing.assert_allclose(proj @ y, y, atol=1e-9)

    def test_energy_matches_singular_values(self):
        # oracle: eigenvalues of Y^H Y computed independently
        rng = np.random.default_rng(2)
        y = rng.standard_normal((8, 200)) + 1j * rng.standard_normal((8, 200))
        red = svd_reduce(y, 2)
        eigs = np.sort(np.linalg.eigvalsh(y.conj().T @ y))[::-1]
        assert np.linalg.norm(red.y_sv) ** 2 == pytest.approx(eigs[:2].sum(), rel=1e-8)

    def test_columns_ordered_by_energy(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal((8, 30)) + 1j * rng.standard_normal((8, 30))
        red = svd_reduce(y, 3)
        norms = np.linalg.norm(red.y_sv, axis=0)
        assert np.all(np.diff(norms) <= 1e-12)
        assert np.all(np.diff(red.singular_values) <= 1e-12)

    def test_orthonormal_columns(self):
        rng = np.random.default_rng(4)
        y = rng.standard_normal((8, 40)) + 1j * rng.standard_normal((8, 40))
        red = svd_reduce(y, 2)
        np.testing.assert_allclose(red.v1.conj().T @ red.v1, np.eye(2), atol=1e-10)

    def test_subspace_dimension_validated(self):
        y = np.ones((8, 4), dtype=complex)
        with pytest.raises(ValueError):
            svd_reduce(y, 0)
        with pytest.raises(ValueError):
            svd_reduce(y, 5)


class TestRunOgsbiSvd:
    def test_single_snapshot_degenerates_to_plain_run(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(2.0), ula8)
        sc = Scenario(doas=np.deg2rad([63.2, 90.3]), snapshot_count=1, snr_db=20.0, rng_seed=5)
        data = synthesize(sc, ula8)
        cfg = InferenceConfig(sources=2)
        plain = run_ogsbi(data.Y, d, cfg)
        reduced = run_ogsbi_svd(data.Y, d, cfg)
        assert reduced.v1.shape == (1, 1)
        assert abs(abs(reduced.v1[0, 0]) - 1.0) < 1e-12
        np.testing.assert_allclose(reduced.state.alpha, plain.state.alpha, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(reduced.state.beta, plain.state.beta, atol=1e-8)
        sp_plain = estimate_powers(plain.posterior, d.grid, plain.state.beta, 1)
        sp_red = estimate_powers(reduced.posterior, d.grid, reduced.state.beta, 1)
        np.testing.assert_allclose(sp_red.powers, sp_plain.powers, rtol=1e-8, atol=1e-12)
        est_plain = extract_doas(sp_plain, 2)
        est_red = extract_doas(sp_red, 2)
        np.testing.assert_allclose(est_red.angles, est_plain.angles, atol=1e-8)

    def test_two_sources_end_to_end(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(2.0), ula8)
        sc = Scenario(doas=np.deg2rad([61.3, 88.7]), snapshot_count=200, snr_db=10.0, rng_seed=6)
        data = synthesize(sc, ula8)
        res = run_ogsbi_svd(data.Y, d, InferenceConfig(sources=2))
        spec = estimate_powers(res.posterior, d.grid, res.state.beta, 200)
        est = extract_doas(spec, 2)
        errors = np.abs(np.rad2deg(est.angles) - [61.3, 88.7])
        assert np.all(errors < 0.5)

    def test_noiseless_on_grid_offset_stays_zero(self, ula8):
        d = build_dictionary(Grid.from_interval_deg(2.0), ula8)
        sc = Scenario(doas=np.deg2rad([60.0]), snapshot_count=50, snr_db=math.inf, rng_seed=7)
        data = synthesize(sc, ula8)
        res = run_ogsbi_svd(data.Y, d, InferenceConfig(sources=1))
        peak = int(np.argmax(res.state.alpha))
        assert abs(math.degrees(res.state.beta[peak])) < 0.01
