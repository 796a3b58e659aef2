import numpy as np
import pytest

from cggm_mix.datagen import (HighDimConfig, ToyConfig, gen_highdim, gen_sparse_spd_precision, gen_toy_2d,
                              highdim_truth)
from cggm_mix.em import labels_params
from cggm_mix.model import chol_lower


class TestSparsePrecision:
    def test_support_and_pd(self):
        for count in (0, 7, 16, 45):
            lam = gen_sparse_spd_precision(10, count, seed=count)
            chol_lower(lam)
            off = lam[np.triu_indices(10, 1)]
            assert np.count_nonzero(off) == count
            np.testing.assert_array_equal(lam, lam.T)

    def test_magnitudes(self):
        lam = gen_sparse_spd_precision(10, 20, (0.2, 0.6), seed=1)
        vals = np.abs(lam[np.triu_indices(10, 1)])
        vals = vals[vals > 0]
        assert vals.min() >= 0.2 and vals.max() <= 0.6

    def test_too_many(self):
        with pytest.raises(ValueError):
            gen_sparse_spd_precision(3, 4)


class TestToy:
    def test_shapes_and_labels(self):
        data, z, truth = gen_toy_2d(ToyConfig(n=500, seed=1))
        assert data.Y.shape == (500, 2) and data.X.shape == (500, 1)
        assert set(np.unique(data.X)) == {-1.0, 1.0}
        assert set(np.unique(z)) == {0, 1}
        assert truth.K == 2

    def test_conditional_means(self):
        cfg = ToyConfig()
        truth = gen_toy_2d(cfg)[2]
        for k, beta in enumerate((cfg.beta1, cfg.beta2)):
            c = truth.classes[k]
            np.testing.assert_allclose(-np.linalg.solve(c.lam, c.theta[0]), beta, atol=1e-12)
        np.testing.assert_allclose(cfg.beta1, [2.5 / np.sqrt(2), 2.5 / np.sqrt(2)], atol=1e-12)

    def test_deterministic(self):
        a = gen_toy_2d(ToyConfig(seed=4))
        b = gen_toy_2d(ToyConfig(seed=4))
        np.testing.assert_array_equal(a[0].Y, b[0].Y)
        np.testing.assert_array_equal(a[1], b[1])

    def test_identical_effects_rejected(self):
        with pytest.raises(ValueError):
            ToyConfig(beta2=ToyConfig().beta1)


class TestHighDim:
    def test_shapes(self):
        data, z, truth = gen_highdim()
        assert data.Y.shape == (100, 10) and data.X.shape == (100, 5)
        np.testing.assert_array_equal(data.X[:, -1], 1.0)
        assert set(np.unique(data.X[:, :-1])) == {-1.0, 1.0}
        np.testing.assert_allclose(truth.weights, 1 / 3)

    def test_support_sizes(self):
        cfg = HighDimConfig()
        truth = highdim_truth(cfg, 3)
        for k, c in enumerate(truth.classes):
            assert np.count_nonzero(c.lam[np.triu_indices(10, 1)]) == cfg.lambda_counts[k]
            assert np.count_nonzero(c.theta) == cfg.theta_counts[k]
            assert np.all(np.diag(c.theta)[:cfg.n_forced_diag] != 0)

    def test_sparsity_rates(self):
        # 25 of 135 off-diagonal pairs and 29 of 150 transition entries are nonzero
        cfg = HighDimConfig()
        lam_rate = sum(cfg.lambda_counts) / (3 * 45)
        theta_rate = sum(cfg.theta_counts) / (3 * 50)
        assert lam_rate == pytest.approx(0.185, abs=1e-3)
        assert theta_rate == pytest.approx(0.193, abs=1e-3)

    def test_oracle_label_consistency(self):
        data, z, truth = gen_highdim(HighDimConfig(n=10_000, seed=5))
        est = labels_params(data, z, 3)
        for c, t in zip(est.classes, truth.classes):
            assert np.linalg.norm(c.lam - t.lam) <= 0.1 * np.linalg.norm(t.lam)
            assert np.linalg.norm(c.theta - t.theta) <= 0.1 * np.linalg.norm(t.theta)

    def test_deterministic(self):
        a = gen_highdim(HighDimConfig(seed=2))
        b = gen_highdim(HighDimConfig(seed=2))
        np.testing.assert_array_equal(a[0].Y, b[0].Y)

    def test_invalid(self):
        with pytest.raises(ValueError):
            HighDimConfig(theta_counts=(3, 14, 4))
