"""Matérn GP: kernel values, evidence, fitting and posterior against dense oracles."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from greybox_bo.gp import (
    JITTER,
    Dataset,
    FactorizationError,
    GpFitError,
    KernelConfig,
    SearchSpace,
    _lml_and_grad,
    build_model,
    fit_hyperparameters,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    posterior,
    train_gp,
)

LOG_2PI = np.log(2 * np.pi)


def matern_oracle(x, x2, ls, amp, nu):
    """Closed-form Matérn written independently of the library."""
    r = np.sqrt(np.sum(((np.asarray(x) - np.asarray(x2)) / np.asarray(ls)) ** 2))
    if nu == 1.5:
        return amp * (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)
    return amp * (1 + np.sqrt(5) * r + 5 * r * r / 3) * np.exp(-np.sqrt(5) * r)


def dense_posterior(X, y, Q, cfg):
    """Explicit-inverse posterior; no Cholesky."""
    K = np.array([[matern_oracle(a, b, cfg.length_scales, cfg.output_scale, cfg.nu) for b in X] for a in X])
    K += (cfg.noise + JITTER) * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    Ks = np.array([[matern_oracle(q, b, cfg.length_scales, cfg.output_scale, cfg.nu) for b in X] for q in Q])
    mean = Ks @ Kinv @ y
    var = cfg.output_scale - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    return mean, np.maximum(var, 0.0)


def random_case(rng):
    n = int(rng.integers(1, 16))
    d = int(rng.integers(1, 6))
    X = rng.uniform(size=(n, d))
    y = rng.normal(size=n)
    cfg = KernelConfig(rng.uniform(0.3, 2.0, d), rng.uniform(0.5, 2.0), rng.uniform(1e-4, 1e-2),
                       float(rng.choice([1.5, 2.5])))
    Q = rng.uniform(size=(4, d))
    return X, y, Q, cfg


class TestKernel:
    def test_zero_distance_gives_output_scale(self):
        cfg = KernelConfig([0.7, 3.0], output_scale=2.5, nu=1.5)
        assert kernel_eval(cfg, [0.1, 0.2], [0.1, 0.2]) == pytest.approx(2.5)

    def test_matern32_unit_distance(self):
        cfg = KernelConfig([1.0], 1.0, nu=1.5)
        expected = (1 + np.sqrt(3)) * np.exp(-np.sqrt(3))
        assert kernel_eval(cfg, [0.0], [1.0]) == pytest.approx(expected, rel=1e-12)
        assert kernel_eval(cfg, [0.0], [1.0]) == pytest.approx(0.48335, abs=1e-5)

    def test_matern52_scaled_distance_one(self):
        cfg = KernelConfig([2.0, 2.0], 1.0, nu=2.5)
        assert kernel_eval(cfg, [0.0, 0.0], [2.0, 0.0]) == pytest.approx(0.52399, abs=5e-6)

    def test_dimension_mismatch(self):
        cfg = KernelConfig([1.0, 1.0])
        with pytest.raises(ValueError):
            kernel_eval(cfg, [0.0], [1.0, 2.0])

    def test_nonfinite_input(self):
        cfg = KernelConfig([1.0])
        with pytest.raises(ValueError):
            kernel_eval(cfg, [np.nan], [1.0])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            KernelConfig([1.0], nu=0.5)
        with pytest.raises(ValueError):
            KernelConfig([0.0])
        with pytest.raises(ValueError):
            KernelConfig([1.0], noise=-1.0)

    def test_matrix_matches_pointwise(self, rng):
        cfg = KernelConfig([0.5, 1.5, 0.8], 1.7, nu=1.5)
        A, B = rng.uniform(size=(4, 3)), rng.uniform(size=(3, 3))
        K = kernel_matrix(cfg, A, B)
        ref = [[matern_oracle(a, b, cfg.length_scales, 1.7, 1.5) for b in B] for a in A]
        np.testing.assert_allclose(K, ref, rtol=1e-12)

    @given(
        arrays(float, 3, elements=st.floats(-5, 5)),
        arrays(float, 3, elements=st.floats(-5, 5)),
        arrays(float, 3, elements=st.floats(0.05, 10)),
        st.sampled_from([1.5, 2.5]),
    )
    def test_symmetric_and_bounded(self, a, b, ls, nu):
        cfg = KernelConfig(ls, 1.3, nu=nu)
        kab, kba = kernel_eval(cfg, a, b), kernel_eval(cfg, b, a)
        assert kab == kba
        assert 0.0 <= kab <= 1.3 + 1e-12

    @given(st.integers(1, 20), st.integers(1, 4), st.integers(0, 2**31 - 1), st.sampled_from([1.5, 2.5]))
    def test_gram_factorizes_with_jitter(self, n, d, seed, nu):
        r = np.random.default_rng(seed)
        cfg = KernelConfig(r.uniform(0.1, 3.0, d), nu=nu)
        X = r.uniform(size=(n, d))
        K = kernel_matrix(cfg, X, X) + JITTER * np.eye(n)
        np.linalg.cholesky(K)


class TestLogMarginalLikelihood:
    def test_single_zero_observation(self):
        lml = log_marginal_likelihood(Dataset([[0.0]], [0.0]), KernelConfig([1.0]))
        assert lml == pytest.approx(-0.5 * LOG_2PI, abs=1e-9)
        assert lml == pytest.approx(-0.91894, abs=5e-6)

    def test_single_observation_of_two(self):
        lml = log_marginal_likelihood(Dataset([[0.0]], [2.0]), KernelConfig([1.0]))
        assert lml == pytest.approx(-2.91894, abs=5e-6)

    def test_identity_gram(self):
        # points far apart give K = I
        lml = log_marginal_likelihood(Dataset([[0.0], [1e4]], [1.0, 1.0]), KernelConfig([1.0]))
        assert lml == pytest.approx(-1 - LOG_2PI, abs=1e-9)

    def test_factorization_error_is_distinct(self, monkeypatch):
        import greybox_bo.gp as gp

        monkeypatch.setattr(gp, "JITTER", -10.0)
        with pytest.raises(FactorizationError):
            gp.log_marginal_likelihood(Dataset([[0.0], [5.0]], [1.0, 2.0]), KernelConfig([1.0]))

    @pytest.mark.parametrize("nu", [1.5, 2.5])
    def test_gradient_matches_finite_difference(self, rng, nu):
        X = rng.uniform(size=(12, 3))
        y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2
        p = np.log(np.array([0.4, 0.9, 1.7, 1.3, 1e-3]))
        _, grad = _lml_and_grad(p, X, y, nu)
        h = 1e-6
        for i in range(3):
            e = np.zeros_like(p)
            e[i] = h
            fd = (_lml_and_grad(p + e, X, y, nu)[0] - _lml_and_grad(p - e, X, y, nu)[0]) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_internal_lml_matches_public(self, rng):
        X = rng.uniform(size=(7, 2))
        y = rng.normal(size=7)
        cfg = KernelConfig([0.6, 1.1], 1.4, 2e-3, 2.5)
        lml, _ = _lml_and_grad(cfg.to_log_params(), X, y, 2.5)
        assert lml == pytest.approx(log_marginal_likelihood(Dataset(X, y), cfg), rel=1e-10)


class TestFit:
    def test_truth_candidate_is_dominated(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(20, 1))
        truth = KernelConfig([1.0], 1.0, 1e-6, 2.5)
        K = kernel_matrix(truth, X, X) + 1e-8 * np.eye(20)
        y = np.linalg.cholesky(K) @ rng.normal(size=20)
        data = Dataset(X, y)
        fitted = fit_hyperparameters(data, restarts=3, seed=0, candidates=[truth])
        assert log_marginal_likelihood(data, fitted) >= log_marginal_likelihood(data, truth) - 1e-9

    def test_constant_outputs(self):
        data = Dataset(np.linspace(0, 1, 6)[:, None], np.full(6, 3.0))
        cfg = fit_hyperparameters(data, restarts=2, seed=0)
        assert cfg.noise >= 1e-6 * (1 - 1e-12)
        assert np.isfinite(log_marginal_likelihood(data, cfg))

    def test_three_points_inside_bounds(self):
        space = SearchSpace()
        data = Dataset([[0.0], [1.0], [2.0]], [0.0, 1.0, 0.0])
        cfg = fit_hyperparameters(data, space, restarts=4, seed=1)
        lo, hi = space.length_scale
        assert lo * (1 - 1e-9) <= cfg.length_scales[0] <= hi * (1 + 1e-9)
        assert np.isfinite(log_marginal_likelihood(data, cfg))

    def test_deterministic_for_seed(self, rng):
        data = Dataset(rng.uniform(size=(9, 2)), rng.normal(size=9))
        a = fit_hyperparameters(data, restarts=3, seed=7)
        b = fit_hyperparameters(data, restarts=3, seed=7)
        np.testing.assert_array_equal(a.to_log_params(), b.to_log_params())

    def test_never_worse_than_starts(self, rng):
        from scipy.stats import qmc

        data = Dataset(rng.uniform(size=(10, 2)), rng.normal(size=10))
        space = SearchSpace()
        cfg = fit_hyperparameters(data, space, restarts=4, seed=11)
        bounds = np.array(space.log_bounds(2))
        starts = qmc.scale(qmc.LatinHypercube(d=4, seed=np.random.default_rng(11)).random(4),
                           bounds[:, 0], bounds[:, 1])
        best = log_marginal_likelihood(data, cfg)
        for p in starts:
            assert best >= log_marginal_likelihood(data, KernelConfig.from_log_params(p)) - 1e-9

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            fit_hyperparameters(Dataset([[0.0]], [1.0]))

    def test_all_restarts_fail(self, monkeypatch):
        import greybox_bo.gp as gp

        def boom(*a, **k):
            raise FactorizationError("forced")

        monkeypatch.setattr(gp, "_lml_and_grad", boom)
        with pytest.raises(GpFitError) as info:
            gp.fit_hyperparameters(Dataset([[0.0], [1.0]], [0.0, 1.0]), restarts=2)
        assert info.value.diagnostics


class TestPosterior:
    def test_interpolates_training_point(self, rng):
        X = rng.uniform(size=(6, 2))
        y = rng.normal(size=6)
        model = build_model(Dataset(X, y), KernelConfig([0.5, 0.5], 1.0, 0.0))
        m, v = posterior(model, X[2])
        assert m == pytest.approx(y[2], abs=1e-8)
        assert v <= 1e-8

    def test_prior_reversion_far_away(self, rng):
        X = rng.uniform(size=(5, 1))
        model = build_model(Dataset(X, rng.normal(size=5)), KernelConfig([0.1], 2.0, 0.0))
        m, v = posterior(model, [5.0])
        assert abs(m) <= 1e-6 * 2.0
        assert v == pytest.approx(2.0, abs=1e-6)

    def test_single_point_hand_value(self):
        # k(q, x1) = 0.5 under Matérn-3/2 with unit length scale at distance r solving (1+√3 r)e^{-√3 r} = 0.5
        from scipy.optimize import brentq

        r = brentq(lambda r: (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r) - 0.5, 0.0, 5.0)
        model = build_model(Dataset([[0.0]], [2.0]), KernelConfig([1.0], 1.0, 0.0, 1.5))
        m, v = posterior(model, [r])
        assert m == pytest.approx(1.0, abs=1e-8)
        assert v == pytest.approx(0.75, abs=1e-8)

    def test_dimension_mismatch(self):
        model = build_model(Dataset([[0.0, 1.0]], [2.0]), KernelConfig([1.0, 1.0]))
        with pytest.raises(ValueError):
            posterior(model, [0.0])

    def test_matches_dense_inverse_on_random_datasets(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            X, y, Q, cfg = random_case(rng)
            model = build_model(Dataset(X, y), cfg)
            m, v = model.predict(Q)
            mo, vo = dense_posterior(X, y, Q, cfg)
            np.testing.assert_allclose(m, mo, atol=1e-8)
            np.testing.assert_allclose(v, vo, atol=1e-8)

    def test_cholesky_reconstructs_gram(self, rng):
        X = rng.uniform(size=(8, 2))
        cfg = KernelConfig([0.4, 0.7], 1.2, 1e-3)
        model = build_model(Dataset(X, rng.normal(size=8)), cfg)
        K = kernel_matrix(cfg, X, X) + (cfg.noise + JITTER) * np.eye(8)
        L = model.chol_factor
        assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-8

    def test_model_is_read_only(self, rng):
        model = build_model(Dataset(rng.uniform(size=(3, 1)), [1.0, 2.0, 3.0]), KernelConfig([1.0]))
        with pytest.raises(ValueError):
            model.weights[0] = 0.0

    @given(st.integers(0, 2**31 - 1), st.floats(1e-6, 0.5), st.floats(1e-6, 0.5))
    def test_more_noise_never_lowers_variance(self, seed, n1, n2):
        r = np.random.default_rng(seed)
        lo, hi = sorted((n1, n2))
        X = r.uniform(size=(6, 2))
        y = r.normal(size=6)
        q = r.uniform(size=(3, 2))
        _, v_lo = build_model(Dataset(X, y), KernelConfig([0.5, 0.5], 1.0, lo)).predict(q)
        _, v_hi = build_model(Dataset(X, y), KernelConfig([0.5, 0.5], 1.0, hi)).predict(q)
        assert np.all(v_hi >= v_lo - 1e-12)

    @given(st.integers(0, 2**31 - 1))
    def test_variance_nonnegative_with_duplicates(self, seed):
        r = np.random.default_rng(seed)
        X = r.uniform(size=(5, 2))
        X = np.vstack([X, X[:2] + 1e-12])
        model = build_model(Dataset(X, r.normal(size=7)), KernelConfig([0.3, 0.3], 1.0, 0.0))
        _, v = model.predict(np.vstack([X, r.uniform(size=(4, 2))]))
        assert np.all(v >= 0.0)


class TestTrainGp:
    def test_scaled_predictions_interpolate(self, rng):
        X = rng.uniform([10, -5], [20, 5], size=(15, 2))
        y = 1000.0 + 50.0 * np.sin(X[:, 0] / 3.0) + X[:, 1] ** 2
        model = train_gp(Dataset(X, y), bounds=([10, -5], [20, 5]), restarts=2, seed=0)
        m, _ = model.predict(X)
        np.testing.assert_allclose(m, y, rtol=1e-3)

    def test_nonfinite_bounds_fall_back_to_data_range(self, rng):
        X = rng.uniform(size=(6, 2)) * 4.0
        model = train_gp(Dataset(X, X.sum(axis=1)), bounds=([0.0, np.nan], [4.0, np.inf]), restarts=1)
        assert model.input_scale[0] == pytest.approx(4.0)
        assert model.input_scale[1] == pytest.approx(np.ptp(X[:, 1]))

    def test_warm_start_is_considered(self, rng):
        X = rng.uniform(size=(10, 1))
        data = Dataset(X, np.sin(6 * X[:, 0]))
        first = train_gp(data, restarts=3, seed=0)
        warm = train_gp(data, restarts=0, seed=1, warm_start=first.kernel)
        assert log_marginal_likelihood(Dataset(first.scaled_inputs, (data.outputs - first.output_mean)
                                               / first.output_std), warm.kernel) >= \
            log_marginal_likelihood(Dataset(first.scaled_inputs, (data.outputs - first.output_mean)
                                            / first.output_std), first.kernel) - 1e-8

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            Dataset([[0.0], [1.0]], [1.0])
        with pytest.raises(ValueError):
            Dataset([[np.inf]], [1.0])
        with pytest.raises(ValueError):
            Dataset(np.zeros((0, 1)), [])
