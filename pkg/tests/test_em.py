import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import logsumexp

from cggm_mix.datagen import ToyConfig, gen_toy_2d
from cggm_mix.em import (EMConfig, e_step, em_fit, fit_all_restarts, init_params, labels_params,
                         random_params, sufficient_stats, update_weights)
from cggm_mix.model import (ClassParams, Dataset, MixtureParams, PenaltyConfig, chol_lower,
                            log_density_cggm, penalised_observed_neg_loglik)
from cggm_mix.penalty import conditional_mle

from helpers import random_class


def toy(seed=0, n=500):
    return gen_toy_2d(ToyConfig(n=n, seed=seed))


class TestEStep:
    def test_matches_naive(self):
        rng = np.random.default_rng(0)
        mp = MixtureParams(tuple(random_class(rng, 3, 2) for _ in range(3)), [0.2, 0.3, 0.5])
        data = Dataset(rng.normal(size=(15, 3)), rng.normal(size=(15, 2)))
        resp = e_step(data, mp)
        for i in range(15):
            logs = [np.log(w) + log_density_cggm(data.Y[i], data.X[i], c) for w, c in zip(mp.weights, mp.classes)]
            np.testing.assert_allclose(resp[i], np.exp(np.array(logs) - logsumexp(logs)), rtol=1e-12)

    def test_far_points_stay_finite(self):
        p = 10
        mp = MixtureParams((ClassParams(np.eye(p) * 50, np.zeros((1, p))),
                            ClassParams(np.eye(p) * 50, np.full((1, p), -500.0))), [0.5, 0.5])
        data = Dataset(np.full((4, p), 40.0), np.ones((4, 1)))
        resp = e_step(data, mp)
        assert np.all(np.isfinite(resp))
        np.testing.assert_allclose(resp.sum(axis=1), 1.0)

    def test_zero_weight_class(self):
        rng = np.random.default_rng(1)
        mp = MixtureParams((random_class(rng, 2, 1), random_class(rng, 2, 1)), [1.0, 0.0])
        resp = e_step(Dataset(rng.normal(size=(5, 2)), np.ones((5, 1))), mp)
        np.testing.assert_array_equal(resp[:, 1], 0.0)


class TestSufficientStats:
    def test_matches_loop(self):
        rng = np.random.default_rng(2)
        data = Dataset(rng.normal(size=(12, 3)), rng.normal(size=(12, 2)))
        resp = rng.dirichlet(np.ones(2), size=12)
        s = sufficient_stats(data, resp)
        for k in range(2):
            syy = sum(resp[i, k] * np.outer(data.Y[i], data.Y[i]) for i in range(12)) / 12
            syx = sum(resp[i, k] * np.outer(data.Y[i], data.X[i]) for i in range(12)) / 12
            sxx = sum(resp[i, k] * np.outer(data.X[i], data.X[i]) for i in range(12)) / 12
            np.testing.assert_allclose(s.syy[k], syy, rtol=1e-12)
            np.testing.assert_allclose(s.syx[k], syx, rtol=1e-12)
            np.testing.assert_allclose(s.sxx[k], sxx, rtol=1e-12)
        np.testing.assert_allclose(s.nk, resp.sum(axis=0))
        np.testing.assert_allclose(update_weights(s), resp.mean(axis=0))

    def test_floor_keeps_counts_positive(self):
        rng = np.random.default_rng(3)
        data = Dataset(rng.normal(size=(6, 2)), np.ones((6, 1)))
        resp = np.column_stack([np.ones(6), np.zeros(6)])
        s = sufficient_stats(data, resp, floor=1e-10)
        assert s.nk[1] > 0
        assert s.nk.sum() == pytest.approx(6.0)


class TestInit:
    def test_random_deterministic_and_pd(self):
        a = random_params(3, 4, 2, 5)
        b = random_params(3, 4, 2, 5)
        np.testing.assert_array_equal(a.lam_stack, b.lam_stack)
        np.testing.assert_array_equal(a.theta_stack, b.theta_stack)
        for c in a.classes:
            chol_lower(c.lam)
        np.testing.assert_allclose(a.weights, 1 / 3)

    def test_precisions_shared_across_q(self):
        np.testing.assert_array_equal(random_params(2, 3, 5, 9).lam_stack, random_params(2, 3, 1, 9).lam_stack)

    def test_labels_single_class_is_conditional_mle(self):
        data, _, _ = toy(1, 200)
        got = labels_params(data, np.zeros(data.n, dtype=int), 1, floor=0.0)
        ref = conditional_mle(sufficient_stats(data, np.ones((data.n, 1))))[0]
        np.testing.assert_allclose(got.classes[0].lam, ref.lam, rtol=1e-10)
        np.testing.assert_allclose(got.classes[0].theta, ref.theta, rtol=1e-10, atol=1e-12)

    def test_labels_recover_truth(self):
        data, z, truth = toy(2, 500)
        got = labels_params(data, z, 2)
        for c, t in zip(got.classes, truth.classes):
            assert np.linalg.norm(c.lam - t.lam) <= 0.3 * np.linalg.norm(t.lam)

    def test_labels_too_small_class(self):
        data, _, _ = toy(3, 20)
        labels = np.zeros(20, dtype=int)
        labels[0] = 1
        with pytest.raises(ValueError):
            labels_params(data, labels, 2)

    def test_kmeans_mode(self):
        data, _, _ = toy(4, 200)
        params = init_params(data, 2, 0, mode="kmeans")
        assert params.K == 2 and params.q == 1


class TestEmFit:
    @pytest.mark.parametrize("seed", range(3))
    def test_monotone_trace(self, seed):
        data, _, _ = toy(seed)
        fit = em_fit(data, 2, EMConfig(seed=seed))
        assert np.all(np.diff(fit.objective_trace) <= 1e-8)
        assert not fit.failed

    def test_trace_is_penalised_objective(self):
        data, _, _ = toy(5, 300)
        pen = PenaltyConfig(0.01, 0.01, 0.01, 0.01)
        fit = em_fit(data, 2, EMConfig(pen=pen))
        assert fit.objective == pytest.approx(penalised_observed_neg_loglik(data, fit.params, pen), rel=1e-12)
        assert len(fit.time_trace) == len(fit.objective_trace)

    def test_recovers_toy_clusters(self):
        from cggm_mix.evaluation import misclassification

        data, z, _ = toy(6)
        fit = em_fit(data, 2, EMConfig(restarts=5))
        assert misclassification(z, fit.resp).matched_hard_error < 0.05

    def test_restarts_keep_best(self):
        data, _, _ = toy(7, 200)
        cfg = EMConfig(restarts=4, seed=3)
        best = em_fit(data, 2, cfg)
        runs = fit_all_restarts(data, 2, cfg)
        assert best.objective == min(r.objective for r in runs if not r.is_spurious())

    def test_spurious_runs_lose(self):
        data, _, _ = toy(8, 200)
        runs = fit_all_restarts(data, 2, EMConfig(restarts=3))
        tiny = runs[0]
        tiny.resp = np.column_stack([np.ones(data.n), np.zeros(data.n)])
        assert tiny.is_spurious()
        assert not runs[1].is_spurious()

    def test_empty_class_flagged_not_raised(self):
        rng = np.random.default_rng(9)
        data = Dataset(rng.normal(size=(100, 2)), np.ones((100, 1)))
        far = ClassParams(np.eye(2), [[-1e4, -1e4]])
        init = MixtureParams((ClassParams(np.eye(2), [[0.0, 0.0]]), far), [0.5, 0.5])
        fit = em_fit(data, 2, EMConfig(max_iters=20), init=init)
        assert fit.degenerate and not fit.failed

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            em_fit(Dataset(np.zeros((2, 1)), np.ones((2, 1))), 2)

    def test_init_dimension_check(self):
        data, _, _ = toy(0, 50)
        with pytest.raises(ValueError):
            em_fit(data, 2, init=random_params(2, 2, 3, 0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EMConfig(init="bogus")
        with pytest.raises(ValueError):
            EMConfig(rel_tol=0)


def test_backend_env_override():
    env = dict(os.environ, CGGM_MIX_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from cggm_mix import _backend; print(_backend.name)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_python_backend_fit_matches_compiled():
    from cggm_mix import _backend

    if _backend.compiled is None:
        pytest.skip("compiled kernels not built")
    code = ("from cggm_mix.datagen import gen_toy_2d, ToyConfig; from cggm_mix.em import em_fit, EMConfig;"
            "d,_,_=gen_toy_2d(ToyConfig(n=200, seed=1)); print(repr(em_fit(d, 2, EMConfig()).objective))")
    vals = []
    for backend in ("python", "compiled"):
        env = dict(os.environ, CGGM_MIX_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        vals.append(float(out.stdout))
    assert vals[0] == pytest.approx(vals[1], rel=1e-9)
