"""Closed-form scalar denoisers for nonnegative and spike-and-slab priors.

Everything here is an elementwise computation under a Gaussian
pseudo-likelihood N(x; rhat, nu): moments of Gaussians truncated to x >= 0,
of nonnegative Gaussian mixtures (NNGM), and of Bernoulli-NNGM
(spike-and-slab) priors, plus the log-evidence ratios that drive support
inference.  All functions broadcast over numpy arrays and are safe deep in
the tails: normalizer ratios are evaluated through scaled complementary
error functions and log-domain CDFs, never as raw pdf/cdf quotients.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfcx, log_ndtr, logsumexp, ndtri_exp

from .errors import ParameterError

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)

# Activity probabilities are clamped away from {0, 1} before use so that
# log-odds stay finite.
PROB_CLAMP = 1e-12

# Beyond this standardized truncation point the direct moment formulas lose
# precision to cancellation and we switch to an asymptotic expansion.
_SERIES_CUT = 60.0

# Pseudo-likelihood variances above this are treated as flat priors.
VAR_CAP = 1e18


def clamp_prob(p):
    """Clamp probabilities into [PROB_CLAMP, 1 - PROB_CLAMP]."""
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def norm_logpdf(x, mean, var):
    """Log density of N(x; mean, var)."""
    var = np.asarray(var, dtype=float)
    return -_HALF_LOG_2PI - 0.5 * np.log(var) - (np.asarray(x) - mean) ** 2 / (2.0 * var)


def hazard(a):
    """phi(a) / Phi_c(a) for the unit normal, stable for any finite a."""
    a = np.asarray(a, dtype=float)
    return _SQRT_2_OVER_PI / erfcx(a / np.sqrt(2.0))


def _mean_var_factors(a):
    """Standardized moments of Z ~ N(0,1) | Z >= a.

    Returns (g, f) with E{Z | Z >= a} = a + g and Var{Z | Z >= a} = f.
    A series in 1/a replaces the direct formulas for large a, where
    1 + a*h - h^2 cancels catastrophically.
    """
    a = np.asarray(a, dtype=float)
    h = hazard(a)
    g_direct = h - a
    f_direct = 1.0 + a * h - h * h

    a_safe = np.where(a >= _SERIES_CUT, a, _SERIES_CUT)
    w = 1.0 / a_safe
    w2 = w * w
    g_series = w * (1.0 - w2 * (2.0 - w2 * (10.0 - 74.0 * w2)))
    f_series = w2 * (1.0 - w2 * (6.0 - 50.0 * w2))

    deep = a >= _SERIES_CUT
    g = np.where(deep, g_series, g_direct)
    f = np.where(deep, f_series, f_direct)
    # mathematical bounds: 0 < f <= 1, g > 0
    f = np.clip(f, 1e-300, 1.0)
    g = np.maximum(g, 1e-300)
    return g, f


def trunc_gauss_moments(theta, phi):
    """Moments of a Gaussian with location theta / scale phi truncated to x >= 0.

    Returns (mean, var, log_normalizer) where the normalizer is the mass the
    parent N(theta, phi) places on [0, inf).  mean > 0 and 0 < var <= phi for
    all valid inputs.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise ParameterError("truncated-Gaussian scale must be positive")
    sd = np.sqrt(phi)
    a = -theta / sd
    # mean = theta + sd * h(a) = sd * (h(a) - a); g is the stable form of h - a
    g, f = _mean_var_factors(a)
    mean = sd * g
    var = phi * f
    log_norm = log_ndtr(-a)
    return mean, var, log_norm


def gaussian_product(m1, v1, m2, v2):
    """Mean and variance of the normalized product of two Gaussian densities."""
    m1, v1 = np.asarray(m1, dtype=float), np.asarray(v1, dtype=float)
    m2, v2 = np.asarray(m2, dtype=float), np.asarray(v2, dtype=float)
    if np.any(v1 <= 0) or np.any(v2 <= 0):
        raise ParameterError("gaussian_product requires positive variances")
    v = 1.0 / (1.0 / v1 + 1.0 / v2)
    m = v * (m1 / v1 + m2 / v2)
    return m, v


@dataclass(frozen=True)
class TruncGauss:
    """Location/scale parameters of a Gaussian truncated to x >= 0."""

    theta: float
    phi: float

    def __post_init__(self):
        if self.phi <= 0:
            raise ParameterError("truncated-Gaussian scale must be positive")


def trunc_gauss_posterior(theta, phi, rhat, nu):
    """Posterior moments and evidence for a truncated-Gaussian prior.

    The prior is the x >= 0 truncation of N(theta, phi) and the likelihood is
    N(x; rhat, nu); the posterior is again a truncated Gaussian with fused
    parameters.  Returns (mean, var, log_evidence) where the evidence is the
    integral of prior times likelihood over x >= 0.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    rhat = np.asarray(rhat, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ParameterError("likelihood variance must be positive")
    mf, vf = gaussian_product(theta, phi, rhat, nu)
    mean, var, log_norm_post = trunc_gauss_moments(mf, vf)
    _, _, log_norm_prior = trunc_gauss_moments(theta, phi)
    log_evidence = norm_logpdf(rhat, theta, phi + nu) + log_norm_post - log_norm_prior
    return mean, var, log_evidence


@dataclass(frozen=True)
class NngmParams:
    """Weights, locations, and scales of a nonnegative Gaussian mixture."""

    omega: np.ndarray
    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if not (omega.shape == theta.shape == phi.shape) or omega.ndim != 1:
            raise ParameterError("mixture parameter arrays must share one shape")
        if omega.size < 1:
            raise ParameterError("mixture needs at least one component")
        if np.any(omega < 0) or abs(omega.sum() - 1.0) > 1e-12:
            raise ParameterError("mixture weights must be nonnegative and sum to 1")
        if np.any(phi <= 0):
            raise ParameterError("mixture scales must be positive")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @property
    def n_components(self) -> int:
        return self.omega.size

    def prior_moments(self) -> tuple[float, float]:
        """Mean and variance of the mixture itself."""
        m, v, _ = trunc_gauss_moments(self.theta, self.phi)
        mean = float(np.dot(self.omega, m))
        var = float(np.dot(self.omega, v + m**2) - mean**2)
        return mean, var


@dataclass(frozen=True)
class SpikeSlab:
    """Bernoulli-NNGM prior: point mass at zero plus an active-value mixture."""

    pi: float
    slab: NngmParams

    def __post_init__(self):
        pi = float(np.clip(self.pi, PROB_CLAMP, 1.0 - PROB_CLAMP))
        object.__setattr__(self, "pi", pi)


def nngm_posterior(slab: NngmParams, rhat, nu):
    """Componentwise posterior statistics of an NNGM prior under N(x; rhat, nu).

    Returns a dict with the slab log-evidence, slab posterior mean/var, and
    the per-component responsibilities and truncated moments (leading axis is
    the component index) that the EM updates consume.
    """
    rhat = np.asarray(rhat, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ParameterError("likelihood variance must be positive")
    th = slab.theta.reshape((-1,) + (1,) * rhat.ndim)
    ph = slab.phi.reshape((-1,) + (1,) * rhat.ndim)
    lw = np.log(np.maximum(slab.omega, 1e-300)).reshape(th.shape)
    c_mean, c_var, c_logev = trunc_gauss_posterior(th, ph, rhat, nu)
    log_terms = lw + c_logev
    log_evidence = logsumexp(log_terms, axis=0)
    resp = np.exp(log_terms - log_evidence)
    mean = np.sum(resp * c_mean, axis=0)
    var = np.sum(resp * (c_var + c_mean**2), axis=0) - mean**2
    var = np.maximum(var, 0.0)
    return {
        "log_evidence": log_evidence,
        "mean": mean,
        "var": var,
        "resp": resp,
        "comp_mean": c_mean,
        "comp_var": c_var,
    }


def spike_slab_posterior(pi, slab: NngmParams, rhat, nu):
    """Posterior under a Bernoulli-NNGM prior and Gaussian pseudo-likelihood.

    Returns (post_pi, mean, var, llr_active).  llr_active is the log ratio of
    the slab evidence to the spike evidence N(0; rhat, nu); it does not depend
    on pi.  post_pi folds the prior activity back in through Bayes' rule, and
    (mean, var) are the moments of the full zero-inflated posterior.
    """
    rhat = np.asarray(rhat, dtype=float)
    nu = np.asarray(nu, dtype=float)
    pi = clamp_prob(np.asarray(pi, dtype=float))
    post = nngm_posterior(slab, rhat, nu)
    llr = post["log_evidence"] - norm_logpdf(0.0, rhat, nu)
    log_odds = llr + np.log(pi) - np.log1p(-pi)
    post_pi = _sigmoid(log_odds)
    mean = post_pi * post["mean"]
    var = post_pi * (post["var"] + post["mean"] ** 2) - mean**2
    var = np.maximum(var, 0.0)
    return post_pi, mean, var, llr


def activity_message(slab: NngmParams, rhat, nu):
    """Probability that the hidden support variable is active.

    This is the outgoing belief toward the support field: the slab evidence
    against the spike evidence, with the incoming support prior deliberately
    excluded (extrinsic message).
    """
    post = nngm_posterior(slab, rhat, nu)
    llr = post["log_evidence"] - norm_logpdf(0.0, np.asarray(rhat, dtype=float), nu)
    return _sigmoid(llr)


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Moment matching and fitting
# ---------------------------------------------------------------------------


def match_trunc_gauss_moments(mean, var):
    """Location/scale of the truncated Gaussian with the given mean/variance.

    Solves for the standardized truncation point by bisection on the
    monotone variance-to-squared-mean ratio, which spans (0, 1) between the
    untruncated and exponential-like extremes.  Targets outside that range
    are clamped to the nearest attainable distribution.
    """
    mean = float(mean)
    var = float(var)
    if mean <= 0 or var <= 0:
        raise ParameterError("moment matching needs positive mean and variance")
    rho = var / mean**2

    def ratio(a):
        g, f = _mean_var_factors(np.asarray(a))
        return float(f / g**2)

    lo, hi = -1e7, 1e7
    if rho <= ratio(lo):
        a = lo
    elif rho >= ratio(hi):
        a = hi
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ratio(mid) < rho:
                lo = mid
            else:
                hi = mid
        a = 0.5 * (lo + hi)
    g, _ = _mean_var_factors(np.asarray(a))
    sd = mean / float(g)
    return -a * sd, sd * sd


def fit_nngm(weights, means, variances, min_phi: float = 1e-10) -> NngmParams:
    """Build mixture parameters from per-component weighted posterior stats.

    ``weights`` (L, K) are nonnegative responsibilities over K observations;
    ``means``/``variances`` (L, K) are the matching posterior moments.  Each
    component is moment-matched to its responsibility-weighted statistics and
    the weights are renormalized to sum to one.
    """
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    mass = weights.sum(axis=1)
    total = mass.sum()
    if total <= 0:
        raise ParameterError("no responsibility mass to fit")
    omega = mass / total
    thetas, phis = [], []
    for ell in range(weights.shape[0]):
        w = weights[ell]
        if mass[ell] <= 1e-12 * total:
            # starved component: park it at the global stats
            w = weights.sum(axis=0)
        wsum = w.sum()
        m_bar = float(np.dot(w, means[ell]) / wsum)
        v_bar = float(np.dot(w, variances[ell] + means[ell] ** 2) / wsum - m_bar**2)
        v_bar = max(v_bar, min_phi)
        m_bar = max(m_bar, np.sqrt(min_phi))
        th, ph = match_trunc_gauss_moments(m_bar, v_bar)
        thetas.append(th)
        phis.append(max(ph, min_phi))
    omega = np.maximum(omega, 0.0)
    omega = omega / omega.sum()
    return NngmParams(omega=omega, theta=np.array(thetas), phi=np.array(phis))


@lru_cache(maxsize=8)
def uniform_slab(n_components: int = 3, grid: int = 1024, iters: int = 300) -> NngmParams:
    """Best n-component NNGM fit to the uniform distribution on [0, 1].

    Deterministic grid EM: the uniform density is represented by equally
    weighted grid points and the mixture is refit until convergence.  Used as
    the data-agnostic starting point for the abundance prior.
    """
    x = (np.arange(grid) + 0.5) / grid
    L = int(n_components)
    theta = (np.arange(L) + 0.5) / L
    phi = np.full(L, (0.75 / L) ** 2)
    omega = np.full(L, 1.0 / L)
    for _ in range(iters):
        m, v, log_norm = trunc_gauss_moments(theta[:, None], phi[:, None])
        log_comp = (
            np.log(omega[:, None])
            + norm_logpdf(x[None, :], theta[:, None], phi[:, None])
            - log_norm
        )
        log_tot = logsumexp(log_comp, axis=0)
        resp = np.exp(log_comp - log_tot)
        fitted = fit_nngm(resp, np.broadcast_to(x, resp.shape), np.zeros_like(resp))
        if (
            np.allclose(fitted.theta, theta, atol=1e-12)
            and np.allclose(fitted.phi, phi, atol=1e-12)
            and np.allclose(fitted.omega, omega, atol=1e-12)
        ):
            omega, theta, phi = fitted.omega, fitted.theta, fitted.phi
            break
        omega, theta, phi = fitted.omega, fitted.theta, fitted.phi
    return NngmParams(omega=omega, theta=theta, phi=phi)


def sample_trunc_gauss(theta, phi, size, rng) -> np.ndarray:
    """Draw from a Gaussian truncated to x >= 0.

    Rejection from the parent Gaussian when acceptance is healthy; inverse-CDF
    in the log domain for deep-tail parameters.
    """
    theta = float(theta)
    phi = float(phi)
    sd = np.sqrt(phi)
    accept = float(np.exp(log_ndtr(theta / sd)))
    n = int(np.prod(size)) if not np.isscalar(size) else int(size)
    if accept > 0.01:
        out = np.empty(0)
        while out.size < n:
            batch = max(int((n - out.size) / max(accept, 0.01) * 1.2), 16)
            draw = theta + sd * rng.standard_normal(batch)
            out = np.concatenate([out, draw[draw >= 0]])
        out = out[:n]
    else:
        a = -theta / sd
        u = rng.random(n)
        # z = Phi_c^{-1}(u * Phi_c(a)) computed without underflow
        log_tail = np.log(u) + log_ndtr(-a)
        out = theta - sd * ndtri_exp(log_tail)
    return out.reshape(size) if not np.isscalar(size) else out
