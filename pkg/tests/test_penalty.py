import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from cggm_mix import _backend
from cggm_mix.em import sufficient_stats
from cggm_mix.model import ClassParams, NotPositiveDefiniteError, PenaltyConfig
from cggm_mix.penalty import (ProxConfig, SufficientStats, conditional_mle, ggl_penalty, prox_ggl,
                              smooth_gradient, smooth_objective, soft_threshold, solve_m_step)

from helpers import random_class, random_spd, random_stats
from oracles import TIGHT, closed_form_case, gradient_rel_error, prox_kkt_residual, prox_numeric

class TestSoftThreshold:
    def test_values(self):
        np.testing.assert_array_equal(soft_threshold(np.array([3.0, -0.5, -2.0]), 1.0), [2.0, 0.0, -1.0])

    @given(arrays(float, 6, elements=st.floats(-10, 10)), st.floats(0, 5))
    def test_shrinks(self, x, lam):
        out = soft_threshold(x, lam)
        assert np.all(np.abs(out) <= np.abs(x))
        assert np.all(out * x >= 0)


class TestGglPenalty:
    def test_against_loop(self):
        rng = np.random.default_rng(0)
        classes = [random_class(rng, 4, 3) for _ in range(3)]
        pen = PenaltyConfig(0.3, 0.7, 0.2, 0.4)
        expected = 0.0
        for i in range(4):
            for j in range(4):
                if i != j:
                    g = np.array([c.lam[i, j] for c in classes])
                    expected += 0.3 * np.abs(g).sum() + 0.7 * np.linalg.norm(g)
        for i in range(3):
            for j in range(4):
                g = np.array([c.theta[i, j] for c in classes])
                expected += 0.2 * np.abs(g).sum() + 0.4 * np.linalg.norm(g)
        assert ggl_penalty(classes, pen) == pytest.approx(expected, rel=1e-13)

    def test_diagonal_free(self):
        cp = ClassParams(np.diag([5.0, 7.0]), np.zeros((1, 2)))
        assert ggl_penalty([cp, cp], PenaltyConfig(1, 1, 1, 1)) == 0.0


class TestProx:
    def test_scalar_pair_example(self):
        out = prox_ggl(np.array([3.0, 4.0]), 1.0, 0.0, 1.0)
        np.testing.assert_allclose(out, [2.4, 3.2], atol=1e-15)

    def test_zero_penalty_is_identity(self):
        x = np.random.default_rng(1).normal(size=(3, 4, 4))
        np.testing.assert_array_equal(prox_ggl(x, 0.7, 0.0, 0.0), x)

    def test_zero_group(self):
        out = prox_ggl(np.array([0.3, -0.4]), 1.0, 0.0, 1.0)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_kkt_random_groups(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            K = int(rng.integers(1, 5))
            x = rng.normal(scale=2.0, size=K)
            alpha, lam1, lam2 = rng.uniform(0.05, 2.0), rng.uniform(0, 1.5), rng.uniform(0, 1.5)
            out = prox_ggl(x, alpha, lam1, lam2)
            assert prox_kkt_residual(x, out, alpha, lam1, lam2) <= 1e-8

    def test_matches_numeric_minimiser(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(scale=2.0, size=2)
            alpha, lam1, lam2 = rng.uniform(0.1, 2.0), rng.uniform(0, 1.0), rng.uniform(0, 1.0)
            np.testing.assert_allclose(prox_ggl(x, alpha, lam1, lam2), prox_numeric(x, alpha, lam1, lam2),
                                       atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 3.0))
    def test_positive_homogeneity(self, seed, c):
        # prox_{alpha pen}(c x) with thresholds scaled by c equals c prox(x)
        x = np.random.default_rng(seed).normal(size=(2, 3))
        np.testing.assert_allclose(prox_ggl(c * x, 1.0, 0.3 * c, 0.5 * c), c * prox_ggl(x, 1.0, 0.3, 0.5),
                                   atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonexpansive(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 3, 5))
        d_out = np.linalg.norm(prox_ggl(x, 0.5, 0.2, 0.4) - prox_ggl(y, 0.5, 0.2, 0.4))
        assert d_out <= np.linalg.norm(x - y) + 1e-12

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            prox_ggl(np.ones(2), 0.0, 1.0, 1.0)


class TestSmoothPart:
    def test_gradient_finite_differences(self):
        assert max(gradient_rel_error(s) for s in range(50)) <= 1e-5

    def test_not_pd_is_infinite(self):
        rng = np.random.default_rng(4)
        _, stats = random_stats(rng, 20, 2, 1, 1)
        bad = ClassParams.__new__(ClassParams)
        object.__setattr__(bad, "lam", np.diag([1.0, -1.0]))
        object.__setattr__(bad, "theta", np.zeros((1, 2)))
        assert smooth_objective([bad], stats) == np.inf

    def test_equals_twice_weighted_nll(self):
        # g + const = -(2/n) sum_i r_ik log N(y_i | x_i) summed over classes
        from cggm_mix.model import class_log_densities

        rng = np.random.default_rng(5)
        data, stats = random_stats(rng, 30, 3, 2, 2)
        resp = rng.dirichlet(np.ones(2), size=30)
        stats = sufficient_stats(data, resp)
        classes = [random_class(rng, 3, 2) for _ in range(2)]
        nll = sum(-(2 / data.n) * (resp[:, k] * class_log_densities(data.Y, data.X, c)).sum()
                  for k, c in enumerate(classes))
        const = data.p * np.log(2 * np.pi)  # sum_k w_k p log(2 pi) with sum w_k = 1
        assert smooth_objective(classes, stats) + const == pytest.approx(nll, rel=1e-12)


class TestMStep:
    def test_closed_form_single_class(self):
        assert max(closed_form_case(s) for s in range(20)) <= 1e-4

    def test_closed_form_is_stationary(self):
        rng = np.random.default_rng(6)
        _, stats = random_stats(rng, 80, 3, 2, 2)
        for g_lam, g_theta in smooth_gradient(conditional_mle(stats), stats):
            assert np.abs(g_lam).max() < 1e-10 and np.abs(g_theta).max() < 1e-10

    def test_trace_monotone(self):
        rng = np.random.default_rng(7)
        _, stats = random_stats(rng, 50, 4, 3, 3)
        init = [ClassParams(np.eye(4), np.zeros((3, 4)))] * 3
        res = solve_m_step(init, stats, PenaltyConfig(0.05, 0.05, 0.02, 0.02), return_info=True)
        assert np.all(np.diff(res.objective_trace) <= 1e-12)
        assert res.status in ("grad_tol", "obj_tol", "max_iters")

    def test_large_penalties_zero_groups(self):
        rng = np.random.default_rng(8)
        _, stats = random_stats(rng, 50, 4, 3, 2)
        big = 1e3 * np.abs(stats.syy).max()
        init = [random_class(rng, 4, 3, 0.5) for _ in range(2)]
        out = solve_m_step(init, stats, PenaltyConfig(0.0, big, 0.0, 1e3 * np.abs(stats.syx).max()))
        for c in out:
            np.testing.assert_array_equal(c.lam - np.diag(np.diag(c.lam)), 0.0)
            np.testing.assert_array_equal(c.theta, 0.0)

    def test_not_pd_init(self):
        rng = np.random.default_rng(9)
        _, stats = random_stats(rng, 20, 2, 1, 1)
        bad = ClassParams.__new__(ClassParams)
        object.__setattr__(bad, "lam", np.diag([1.0, -1.0]))
        object.__setattr__(bad, "theta", np.zeros((1, 2)))
        with pytest.raises(NotPositiveDefiniteError):
            solve_m_step([bad], stats, PenaltyConfig())

    def test_tiny_instance_against_generic_solver(self):
        rng = np.random.default_rng(10)
        _, stats = random_stats(rng, 40, 2, 1, 2)
        pen = PenaltyConfig(0.1, 0.1, 0.05, 0.05)

        def unpack(v):
            classes = []
            for k in range(2):
                a, b, c, t0, t1 = v[5 * k:5 * k + 5]
                lam = np.array([[a, b], [b, c]])
                if a <= 0 or a * c - b * b <= 0:
                    return None
                classes.append(ClassParams(lam, [[t0, t1]]))
            return classes

        def f(v):
            cl = unpack(v)
            if cl is None:
                return np.inf
            return smooth_objective(cl, stats) + ggl_penalty(cl, pen)

        oracle = np.inf
        for _ in range(10):
            v = np.concatenate([[1 + rng.uniform(), 0, 1 + rng.uniform(), *rng.normal(size=2)] for _ in range(2)])
            for _ in range(5):
                v = minimize(f, v, method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 40_000, "maxfev": 40_000}).x
            oracle = min(oracle, f(v))
        init = [ClassParams(np.eye(2), np.zeros((1, 2)))] * 2
        out = solve_m_step(init, stats, pen, TIGHT)
        ours = smooth_objective(out, stats) + ggl_penalty(out, pen)
        assert abs(ours - oracle) <= 1e-4


@pytest.mark.skipif(_backend.compiled is None, reason="compiled kernels not built")
class TestBackendParity:
    @pytest.mark.parametrize("seed", range(5))
    def test_same_result(self, seed):
        rng = np.random.default_rng(seed)
        _, stats = random_stats(rng, 60, 4, 3, 3)
        init = [random_class(rng, 4, 3, 0.3) for _ in range(3)]
        pen = PenaltyConfig(0.05, 0.05, 0.02, 0.02)
        a = solve_m_step(init, stats, pen, return_info=True, backend="python")
        b = solve_m_step(init, stats, pen, return_info=True, backend="compiled")
        assert a.n_iters == b.n_iters
        for ca, cb in zip(a.classes, b.classes):
            np.testing.assert_allclose(ca.lam, cb.lam, atol=1e-9)
            np.testing.assert_allclose(ca.theta, cb.theta, atol=1e-9)

    def test_smooth_parts_agree(self):
        rng = np.random.default_rng(11)
        _, stats = random_stats(rng, 30, 3, 2, 2)
        lam = np.stack([random_spd(rng, 3) for _ in range(2)])
        theta = rng.normal(size=(2, 2, 3))
        args = (lam, theta, stats.syy, stats.syx, stats.sxx, stats.weights)
        assert _backend.compiled.smooth_objective(*args) == pytest.approx(_backend.py.smooth_objective(*args),
                                                                          rel=1e-12)
        for a, b in zip(_backend.compiled.smooth_gradient(*args), _backend.py.smooth_gradient(*args)):
            np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=1e-11, atol=1e-12)


def test_stats_validation():
    with pytest.raises(ValueError):
        SufficientStats(np.array([1.0, 1.0]), np.zeros((2, 1, 1)), np.zeros((2, 1, 1)), np.zeros((2, 1, 1)), 3.0)


def test_prox_config_validation():
    with pytest.raises(ValueError):
        ProxConfig(beta=1.0)
