import numpy as np
import pytest

from hutamp.bigamp import (
    BigAmpInit,
    BigAmpOptions,
    ElementPriorA,
    ElementPriorS,
    FixedPriorA,
    GaussianPriorA,
    likelihood_moments,
    run_bigamp,
)
from hutamp.errors import ParameterError
from hutamp.priors import NngmParams, sample_trunc_gauss


def make_bilinear_case(rng, m=20, n=2, t=30, active=0.6):
    s = sample_trunc_gauss(0.5, 0.05, (m, n), rng)
    slab = NngmParams(np.array([1.0]), np.array([0.8]), np.array([0.04]))
    act = rng.random((n, t)) < active
    a = np.where(act, sample_trunc_gauss(0.8, 0.04, (n, t), rng), 0.0)
    sbar = np.vstack([s, np.ones((1, n))])
    ybar = np.vstack([s @ a, a.sum(axis=0, keepdims=True)])
    return s, a, slab, sbar, ybar


class TestLikelihoodMoments:
    def test_gaussian_conjugate_product(self):
        assert likelihood_moments(2.0, "gaussian", 1.0, 0.0, 1.0) == (1.0, 0.5)

    def test_dirac_row_pins_observation(self):
        zhat, zvar = likelihood_moments(np.array([1.0]), "dirac", None, np.array([5.0]), np.array([2.0]))
        assert zhat[0] == 1.0 and zvar[0] == 0.0

    def test_uninformative_measurement(self):
        zhat, zvar = likelihood_moments(3.0, "gaussian", 1e12, 0.5, 2.0)
        assert zhat == pytest.approx(0.5, abs=1e-9)
        assert zvar == pytest.approx(2.0, rel=1e-9)

    def test_rejects_bad_noise(self):
        with pytest.raises(ParameterError):
            likelihood_moments(1.0, "gaussian", 0.0, 0.0, 1.0)
        with pytest.raises(ParameterError):
            likelihood_moments(1.0, "huber", 1.0, 0.0, 1.0)


class TestRunBigamp:
    def test_reduces_to_linear_gaussian_inference(self, rng):
        # with the left factor pinned, the engine is a per-column linear
        # solver whose posterior means have a closed form
        m, n, t = 20, 3, 15
        s = sample_trunc_gauss(0.5, 0.05, (m, n), rng)
        sbar = np.vstack([s - 0.45, np.ones((1, n))])
        a = rng.dirichlet(np.ones(n), size=t).T
        ybar = sbar @ a
        psi = np.full(m, 1e-8)
        m0 = np.full((n, t), 1.0 / n)
        v0 = np.full((n, t), 0.5)
        out = run_bigamp(
            ybar,
            ElementPriorS(mean=sbar, var=np.zeros_like(sbar)),
            GaussianPriorA(mean=m0, var=v0),
            psi,
            opts=BigAmpOptions(max_iters=3000, stop_tol=1e-13),
        )

        def oracle_col(y_col, m0c, v0c):
            v0inv = np.diag(1.0 / v0c)
            su = sbar[:m]
            sig = np.linalg.inv(v0inv + su.T @ np.diag(1.0 / psi) @ su)
            mu1 = sig @ (v0inv @ m0c + su.T @ (y_col[:m] / psi))
            s1 = sig @ np.ones(n)
            return mu1 + s1 * (1.0 - np.ones(n) @ mu1) / (np.ones(n) @ s1)

        a_ref = np.column_stack(
            [oracle_col(ybar[:, j], m0[:, j], v0[:, j]) for j in range(t)]
        )
        assert np.max(np.abs(out.ahat_post - a_ref)) < 1e-6

    def test_noiseless_bilinear_recovery(self, rng):
        s, a, slab, sbar, ybar = make_bilinear_case(rng)
        m, n = s.shape
        priors_s = ElementPriorS(
            mean=sbar,
            var=np.vstack([np.full((m, n), 1e-2), np.zeros((1, n))]),
        )
        priors_a = ElementPriorA(pi=np.full(a.shape, 0.6), slabs=[slab] * n)
        out = run_bigamp(
            ybar, priors_s, priors_a, np.full(m, 1e-10),
            opts=BigAmpOptions(max_iters=2000, stop_tol=1e-12),
        )
        z = s @ a
        nmse = 10 * np.log10(np.sum((out.zhat_post[:m] - z) ** 2) / np.sum(z**2))
        assert nmse < -60.0

    def test_zero_iterations_returns_init(self, rng):
        s, a, slab, sbar, ybar = make_bilinear_case(rng, m=8, t=10)
        m, n = s.shape
        priors_s = ElementPriorS(mean=sbar, var=np.zeros_like(sbar))
        priors_a = ElementPriorA(pi=np.full(a.shape, 0.5), slabs=[slab] * n)
        init = BigAmpInit(
            shat=sbar.copy(),
            svar=np.zeros_like(sbar),
            ahat=a.copy(),
            avar=np.zeros_like(a),
        )
        out = run_bigamp(ybar, priors_s, priors_a, np.full(m, 0.1), init=init,
                         opts=BigAmpOptions(max_iters=0))
        assert out.iterations_run == 0
        np.testing.assert_array_equal(out.shat_post, sbar)
        np.testing.assert_array_equal(out.ahat_post, a)
        assert out.final_residual == pytest.approx(
            np.linalg.norm(ybar[:m] - (sbar @ a)[:m])
        )

    def test_all_point_mass_priors_pass_through(self, rng):
        s, a, slab, sbar, ybar = make_bilinear_case(rng, m=10, t=12)
        m, n = s.shape
        out = run_bigamp(
            ybar,
            ElementPriorS(mean=sbar, var=np.zeros_like(sbar)),
            FixedPriorA(value=a),
            np.full(m, 1e-6),
            opts=BigAmpOptions(max_iters=30),
        )
        np.testing.assert_array_equal(out.shat_post, sbar)
        np.testing.assert_array_equal(out.ahat_post, a)
        np.testing.assert_array_equal(out.zhat_post, sbar @ a)
        assert np.all(out.svar_post == 0) and np.all(out.avar_post == 0)

    def test_variances_stay_nonnegative(self, rng):
        s, a, slab, sbar, ybar = make_bilinear_case(rng, m=12, t=16)
        m, n = s.shape
        noisy = sbar.copy()
        noisy[:m] += 0.05 * rng.standard_normal((m, n))
        priors_s = ElementPriorS(
            mean=noisy,
            var=np.vstack([np.full((m, n), 0.05), np.zeros((1, n))]),
        )
        priors_a = ElementPriorA(pi=np.full(a.shape, 0.5), slabs=[slab] * n)
        out = run_bigamp(ybar, priors_s, priors_a, np.full(m, 1e-4),
                         opts=BigAmpOptions(max_iters=60))
        for arr in (out.nuq, out.nur, out.svar_post, out.avar_post, out.zvar_post):
            assert np.all(arr >= 0)
        assert np.array_equal(out.shat_post[m], np.ones(n))

    def test_permutation_equivariance(self, rng):
        s, a, slab, sbar, ybar = make_bilinear_case(rng, m=10, n=3, t=12)
        m, n = s.shape
        perm = np.array([2, 0, 1])
        svar = np.vstack([np.full((m, n), 0.05), np.zeros((1, n))])
        pi = rng.uniform(0.3, 0.7, size=a.shape)
        opts = BigAmpOptions(max_iters=40)
        out1 = run_bigamp(
            ybar,
            ElementPriorS(mean=sbar, var=svar),
            ElementPriorA(pi=pi, slabs=[slab] * n),
            np.full(m, 1e-4),
            opts=opts,
        )
        out2 = run_bigamp(
            ybar,
            ElementPriorS(mean=sbar[:, perm], var=svar[:, perm]),
            ElementPriorA(pi=pi[perm], slabs=[slab] * n),
            np.full(m, 1e-4),
            opts=opts,
        )
        np.testing.assert_allclose(out2.qhat, out1.qhat[:, perm], atol=1e-10)
        np.testing.assert_allclose(out2.rhat, out1.rhat[perm, :], atol=1e-10)
        np.testing.assert_allclose(out2.zhat_post, out1.zhat_post, atol=1e-10)

    def test_fixed_point_consistency_of_posts(self, rng):
        s, a, slab, sbar, ybar = make_bilinear_case(rng, m=14, t=20)
        m, n = s.shape
        priors_s = ElementPriorS(
            mean=sbar, var=np.vstack([np.full((m, n), 0.02), np.zeros((1, n))])
        )
        priors_a = ElementPriorA(pi=np.full(a.shape, 0.6), slabs=[slab] * n)
        out = run_bigamp(ybar, priors_s, priors_a, np.full(m, 1e-6))
        s_re, _ = priors_s.denoise(out.qhat, out.nuq)
        a_re, _ = priors_a.denoise(out.rhat, out.nur)
        np.testing.assert_array_equal(s_re, out.shat_post)
        np.testing.assert_array_equal(a_re, out.ahat_post)

    def test_undamped_run_reaches_same_fixed_point(self, rng):
        # well-conditioned small case: damping must not change the answer
        m, n, t = 30, 2, 40
        s = sample_trunc_gauss(0.5, 0.05, (m, n), rng)
        a = rng.dirichlet(np.ones(n), size=t).T
        sbar = np.vstack([s - 0.5, np.ones((1, n))])
        ybar = sbar @ a
        priors_s = ElementPriorS(mean=sbar, var=np.zeros_like(sbar))
        priors_a = GaussianPriorA(mean=np.full((n, t), 0.5), var=np.full((n, t), 0.25))
        psi = np.full(m, 1e-4)
        res = []
        for damping, adapt in ((1.0, False), (0.3, True)):
            out = run_bigamp(
                ybar, priors_s, priors_a, psi,
                opts=BigAmpOptions(max_iters=4000, stop_tol=1e-12,
                                   damping=damping, adapt_damping=adapt),
            )
            res.append(out.final_residual)
        assert res[0] == pytest.approx(res[1], abs=1e-6)

    def test_shape_validation(self, rng):
        s, a, slab, sbar, ybar = make_bilinear_case(rng, m=6, t=8)
        priors_s = ElementPriorS(mean=sbar, var=np.zeros_like(sbar))
        priors_a = ElementPriorA(pi=np.full((2, 7), 0.5), slabs=[slab] * 2)
        with pytest.raises(ParameterError):
            run_bigamp(ybar, priors_s, priors_a, np.full(6, 0.1))
