"""Exact Gaussian inference on stationary first-order chains.

Each endmember spectrum is modeled as a chain of correlated amplitudes:
the first element is drawn N(kappa, sigma2) and every subsequent element is
(1 - eta) times the previous one plus eta * kappa plus innovation noise of
variance eta^2 * sigma2.  eta = 1 gives an i.i.d. sequence, eta = 0 a frozen
(constant) one.

``gm_smooth`` runs forward-backward message passing against per-element
Gaussian observations and returns extrinsic messages (everything except the
element's own observation), full posteriors, and adjacent-pair cross moments.
Messages travel in information form (precision, precision-mean) so flat and
near-degenerate inputs need no special casing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError

# Extrinsic variances are capped here when a message carries no information.
FLAT_VAR = 1e18
SIGMA2_FLOOR = 1e-12
ETA_CLIP = (1e-6, 1.0)


@dataclass(frozen=True)
class GmChainParams:
    """Mean, variance, and correlation control of one amplitude chain."""

    kappa: float
    sigma2: float
    eta: float

    def __post_init__(self):
        if not np.isfinite(self.kappa):
            raise ParameterError("chain mean must be finite")
        if self.sigma2 <= 0:
            raise ParameterError("chain variance must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError("chain correlation control must lie in [0, 1]")


class ChainSmooth(NamedTuple):
    ext_mean: np.ndarray
    ext_var: np.ndarray
    post_mean: np.ndarray
    post_var: np.ndarray
    cross: np.ndarray  # cross[m] = E{e_m * e_{m+1}} under the joint posterior


def _info_to_moments(lam, h):
    with np.errstate(divide="ignore"):
        var = np.where(lam > 0, 1.0 / np.maximum(lam, 1.0 / FLAT_VAR), FLAT_VAR)
    mean = np.where(lam > 0, h * var, 0.0)
    return mean, var


def gm_smooth(mean_in, var_in, params: GmChainParams) -> ChainSmooth:
    """Forward-backward smoothing of one chain against Gaussian observations.

    Parameters
    ----------
    mean_in, var_in : arrays of length M
        Per-element Gaussian observations (flat inputs via large variance).
    params : GmChainParams

    Returns
    -------
    ChainSmooth
        Extrinsic and posterior beliefs per element plus E{e_m e_{m+1}} for
        each adjacent pair (needed by the EM update).
    """
    mean_in = np.asarray(mean_in, dtype=float)
    var_in = np.asarray(var_in, dtype=float)
    if mean_in.shape != var_in.shape or mean_in.ndim != 1:
        raise ParameterError("incoming means/variances must be 1-D and congruent")
    if np.any(var_in <= 0):
        raise ParameterError("incoming variances must be positive")
    M = mean_in.size
    kappa, sigma2, eta = params.kappa, params.sigma2, params.eta

    lam_in = 1.0 / var_in
    h_in = mean_in / var_in
    trans_var = eta * eta * sigma2
    decay = 1.0 - eta

    # forward[m]: message into element m from everything before it (prior at 0)
    fwd_lam = np.empty(M)
    fwd_h = np.empty(M)
    fwd_lam[0] = 1.0 / sigma2
    fwd_h[0] = kappa / sigma2
    for m in range(1, M):
        lam = fwd_lam[m - 1] + lam_in[m - 1]
        h = fwd_h[m - 1] + h_in[m - 1]
        # push through e_m = decay * e_{m-1} + eta * kappa + noise(trans_var)
        mean_prev = h / lam
        var_prev = 1.0 / lam
        var_next = decay * decay * var_prev + trans_var
        mean_next = decay * mean_prev + eta * kappa
        fwd_lam[m] = 1.0 / var_next
        fwd_h[m] = mean_next / var_next

    # backward[m]: message into element m from everything after it (flat at M-1)
    bwd_lam = np.zeros(M)
    bwd_h = np.zeros(M)
    for m in range(M - 2, -1, -1):
        lam = bwd_lam[m + 1] + lam_in[m + 1]
        h = bwd_h[m + 1] + h_in[m + 1]
        # absorb the transition noise, then invert the affine map
        lam_eff = lam / (1.0 + lam * trans_var)
        h_eff = h / (1.0 + lam * trans_var)
        bwd_lam[m] = lam_eff * decay * decay
        bwd_h[m] = decay * (h_eff - lam_eff * eta * kappa)

    ext_lam = fwd_lam + bwd_lam
    ext_h = fwd_h + bwd_h
    post_lam = ext_lam + lam_in
    post_h = ext_h + h_in
    ext_mean, ext_var = _info_to_moments(ext_lam, ext_h)
    post_mean, post_var = _info_to_moments(post_lam, post_h)

    cross = np.empty(max(M - 1, 0))
    if eta == 0.0:
        # frozen chain: adjacent elements are the same variable
        for m in range(M - 1):
            cross[m] = 0.5 * (post_var[m] + post_var[m + 1]) + post_mean[m] * post_mean[m + 1]
    else:
        for m in range(M - 1):
            la = fwd_lam[m] + lam_in[m]
            ha = fwd_h[m] + h_in[m]
            lb = bwd_lam[m + 1] + lam_in[m + 1]
            hb = bwd_h[m + 1] + h_in[m + 1]
            j11 = la + decay * decay / trans_var
            j22 = lb + 1.0 / trans_var
            j12 = -decay / trans_var
            h1 = ha - decay * eta * kappa / trans_var
            h2 = hb + eta * kappa / trans_var
            det = j11 * j22 - j12 * j12
            c11 = j22 / det
            c12 = -j12 / det
            c22 = j11 / det
            mu1 = c11 * h1 + c12 * h2
            mu2 = c12 * h1 + c22 * h2
            cross[m] = c12 + mu1 * mu2

    return ChainSmooth(ext_mean, ext_var, post_mean, post_var, cross)


def gm_expected_loglik(post_mean, post_var, cross, params: GmChainParams) -> float:
    """Expected chain log density under the given posterior statistics."""
    mu = np.asarray(post_mean, dtype=float)
    e2 = np.asarray(post_var, dtype=float) + mu**2
    cross = np.asarray(cross, dtype=float)
    kappa, sigma2, eta = params.kappa, params.sigma2, params.eta
    M = mu.size
    total = -0.5 * np.log(2 * np.pi * sigma2) - (
        e2[0] - 2 * kappa * mu[0] + kappa**2
    ) / (2 * sigma2)
    if M == 1:
        return float(total)
    decay = 1.0 - eta
    tv = max(eta * eta * sigma2, 1e-300)
    d = (
        e2[1:]
        - 2 * decay * cross
        - 2 * eta * kappa * mu[1:]
        + decay * decay * e2[:-1]
        + 2 * eta * decay * kappa * mu[:-1]
        + eta * eta * kappa**2
    )
    total += np.sum(-0.5 * np.log(2 * np.pi * tv) - d / (2 * tv))
    return float(total)


def em_update_gm(
    post_mean, post_var, cross, old: GmChainParams, freeze_eta: bool = False
) -> GmChainParams:
    """Closed-form maximization of the expected chain log density.

    The chain mean is updated first (given the old correlation); the
    correlation and variance are then maximized jointly, which reduces to
    one quadratic in the correlation followed by an explicit variance
    formula.  Each step can only increase the objective.  ``freeze_eta``
    keeps the correlation control fixed (used when spectral coherence is
    disabled).
    """
    mu = np.asarray(post_mean, dtype=float)
    e2 = np.asarray(post_var, dtype=float) + mu**2
    cross = np.asarray(cross, dtype=float)
    M = mu.size
    if M == 1:
        kappa = float(mu[0])
        sigma2 = max(float(e2[0] - 2 * kappa * mu[0] + kappa**2), SIGMA2_FLOOR)
        return GmChainParams(kappa=kappa, sigma2=sigma2, eta=old.eta)

    eta = min(max(old.eta, ETA_CLIP[0]), ETA_CLIP[1])
    decay = 1.0 - eta
    kappa = float((eta * mu[0] + np.sum(mu[1:] - decay * mu[:-1])) / (eta * M))

    # statistics of u = e_m - e_{m-1} and w = e_{m-1} - kappa
    sum_u2 = float(np.sum(e2[1:] - 2 * cross + e2[:-1]))
    sum_uw = float(np.sum(cross - e2[:-1] - kappa * mu[1:] + kappa * mu[:-1]))
    sum_w2 = float(np.sum(e2[:-1] - 2 * kappa * mu[:-1] + kappa**2))
    first = float(e2[0] - 2 * kappa * mu[0] + kappa**2)
    if sum_u2 <= 0 and abs(sum_uw) == 0.0:
        # fully degenerate (constant, noise-free) posterior
        sigma2 = max(first, SIGMA2_FLOOR)
        return GmChainParams(kappa=kappa, sigma2=sigma2, eta=old.eta)
    sum_u2 = max(sum_u2, 0.0)

    if freeze_eta:
        eta_new = eta
    else:
        # stationarity of the joint (variance, correlation) maximization:
        # lam*(first + sum_w2) eta^2 + (2 lam - 1) sum_uw eta - (1 - lam) sum_u2 = 0
        lam = (M - 1) / M
        a2 = lam * (first + sum_w2)
        a1 = (2 * lam - 1.0) * sum_uw
        a0 = -(1.0 - lam) * sum_u2
        if a2 <= 0:
            eta_new = eta
        else:
            disc = a1 * a1 - 4.0 * a2 * a0
            eta_new = (-a1 + np.sqrt(max(disc, 0.0))) / (2.0 * a2)
            eta_new = min(max(float(eta_new), ETA_CLIP[0]), ETA_CLIP[1])

    trans = (sum_u2 + 2.0 * eta_new * sum_uw + eta_new * eta_new * sum_w2) / (
        eta_new * eta_new
    )
    sigma2 = float((first + trans) / M)
    sigma2 = max(sigma2, SIGMA2_FLOOR)
    return GmChainParams(kappa=kappa, sigma2=sigma2, eta=eta_new)
