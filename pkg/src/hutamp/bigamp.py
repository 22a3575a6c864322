"""Bilinear inference engine for the augmented observation model.

Estimates both factors of Z = S A from noisy elementwise observations of Z,
given independent per-element priors: Gaussians (or exact point masses) on
the entries of the left factor and Bernoulli-NNGM (spike-and-slab) priors on
the entries of the right factor.  The observation rows are Gaussian with
per-row variance, except the final augmentation row, which is an exact
equality tying each abundance column to sum one.

Each iteration alternates:

1. plug-in moments of the product plane (with the memory-correction term
   subtracted from the mean),
2. scalar posterior moments of each z under its observation row,
3. scaled residuals,
4. Gaussian pseudo-observations (qhat, nuq) for the left factor and
   (rhat, nur) for the right factor, and
5. the scalar prior denoisers.

An adaptive damping factor shrinks the residual and factor updates; it is
halved when the data residual grows and relaxed when it shrinks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericError, ParameterError
from .priors import (
    VAR_CAP,
    NngmParams,
    clamp_prob,
    gaussian_product,
    spike_slab_posterior,
)


@dataclass(frozen=True)
class ElementPriorS:
    """Independent Gaussian priors on the left factor, one per element.

    Entries with ``var == 0`` are exact point masses at ``mean`` (used for the
    augmentation row and for fixed-endmember runs); the denoiser passes them
    through untouched.
    """

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.shape != var.shape or mean.ndim != 2:
            raise ParameterError("left-factor prior arrays must be 2-D and congruent")
        if np.any(var < 0):
            raise ParameterError("prior variances must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    def denoise(self, qhat, nuq):
        fixed = self.var == 0.0
        safe_var = np.where(fixed, 1.0, self.var)
        m, v = gaussian_product(self.mean, safe_var, qhat, nuq)
        return np.where(fixed, self.mean, m), np.where(fixed, 0.0, v)


@dataclass(frozen=True)
class ElementPriorA:
    """Spike-and-slab priors on the right factor.

    ``pi`` holds per-element activity probabilities (N x T) and ``slabs`` one
    active-value mixture per row (material).
    """

    pi: np.ndarray
    slabs: Sequence[NngmParams]

    def __post_init__(self):
        pi = clamp_prob(np.asarray(self.pi, dtype=float))
        if pi.ndim != 2 or pi.shape[0] != len(self.slabs):
            raise ParameterError("need one slab per right-factor row")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "slabs", tuple(self.slabs))

    def denoise(self, rhat, nur):
        mean = np.empty_like(rhat)
        var = np.empty_like(rhat)
        for n, slab in enumerate(self.slabs):
            _, m, v, _ = spike_slab_posterior(self.pi[n], slab, rhat[n], nur[n])
            mean[n] = m
            var[n] = v
        return mean, var

    def moments(self):
        mean = np.empty_like(self.pi)
        var = np.empty_like(self.pi)
        for n, slab in enumerate(self.slabs):
            sm, sv = slab.prior_moments()
            mean[n] = self.pi[n] * sm
            var[n] = self.pi[n] * (sv + sm**2) - mean[n] ** 2
        return mean, np.maximum(var, 0.0)

    @property
    def shape(self):
        return self.pi.shape


@dataclass(frozen=True)
class FixedPriorA:
    """Point-mass right-factor prior; useful for degenerate and oracle runs."""

    value: np.ndarray

    def denoise(self, rhat, nur):
        return self.value.copy(), np.zeros_like(self.value)

    def moments(self):
        return self.value.copy(), np.zeros_like(self.value)

    @property
    def shape(self):
        return np.asarray(self.value).shape


@dataclass(frozen=True)
class GaussianPriorA:
    """Independent Gaussian right-factor prior; used by linear-model oracles."""

    mean: np.ndarray
    var: np.ndarray

    def denoise(self, rhat, nur):
        return gaussian_product(self.mean, self.var, rhat, nur)

    def moments(self):
        return self.mean.copy(), self.var.copy()

    @property
    def shape(self):
        return np.asarray(self.mean).shape


@dataclass(frozen=True)
class BigAmpOptions:
    max_iters: int = 200
    damping: float = 0.3
    stop_tol: float = 1e-8
    variance_floor: float = 1e-13
    damping_min: float = 1e-3
    adapt_damping: bool = True
    reject_slack: float = 1.01   # candidate steps above slack * residual are retried
    uniform_variance: bool = True  # share one variance level per factor
    divergence_window: int = 20
    divergence_factor: float = 10.0

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ParameterError("damping must lie in (0, 1]")
        if self.max_iters < 0 or self.stop_tol <= 0 or self.variance_floor <= 0:
            raise ParameterError("iteration controls must be positive")
        if self.reject_slack < 1.0:
            raise ParameterError("reject_slack must be at least 1")


@dataclass(frozen=True)
class BigAmpInit:
    shat: np.ndarray
    svar: np.ndarray
    ahat: np.ndarray
    avar: np.ndarray


@dataclass
class BigAmpOutput:
    qhat: np.ndarray
    nuq: np.ndarray
    rhat: np.ndarray
    nur: np.ndarray
    shat_post: np.ndarray
    svar_post: np.ndarray
    ahat_post: np.ndarray
    avar_post: np.ndarray
    zhat_post: np.ndarray
    zvar_post: np.ndarray
    iterations_run: int
    final_residual: float
    residuals: list = field(default_factory=list)
    diverged: bool = False


def likelihood_moments(y, row_kind, psi_m, phat, nup):
    """Posterior moments of z under one observation row.

    ``row_kind`` is "gaussian" (observation y = z + noise of variance psi_m)
    or "dirac" (observation y = z exactly).
    """
    y = np.asarray(y, dtype=float)
    phat = np.asarray(phat, dtype=float)
    nup = np.asarray(nup, dtype=float)
    if np.any(nup <= 0):
        raise ParameterError("pseudo-prior variance must be positive")
    if row_kind == "gaussian":
        if psi_m is None or np.any(np.asarray(psi_m) <= 0):
            raise ParameterError("gaussian rows need positive noise variance")
        return gaussian_product(y, psi_m, phat, nup)
    if row_kind == "dirac":
        return y.copy(), np.zeros_like(y)
    raise ParameterError(f"unknown row kind {row_kind!r}")


def _output_step(ybar, psi, phat, nup, floor):
    """Elementwise z posterior and scaled residual for all observation rows.

    For Gaussian rows the forms below are exact for any nup >= 0.  On the
    augmentation row an exactly zero nup means both factors are point masses,
    in which case the constraint can carry no information and the residual
    terms vanish.
    """
    m = psi.shape[0]
    zhat = np.empty_like(phat)
    zvar = np.empty_like(phat)
    szhat = np.empty_like(phat)
    szvar = np.empty_like(phat)

    denom = nup[:m] + psi[:, None]
    zhat[:m] = np.where(
        nup[:m] > 0,
        (psi[:, None] * phat[:m] + nup[:m] * ybar[:m]) / denom,
        phat[:m],
    )
    zvar[:m] = nup[:m] * psi[:, None] / denom
    szhat[:m] = (ybar[:m] - phat[:m]) / denom
    szvar[:m] = 1.0 / denom

    live = nup[m] > 0.0
    nup_d = np.maximum(nup[m], floor)
    zhat[m] = np.where(live, ybar[m], phat[m])
    zvar[m] = 0.0
    szhat[m] = np.where(live, (ybar[m] - phat[m]) / nup_d, 0.0)
    szvar[m] = np.where(live, 1.0 / nup_d, 0.0)
    return zhat, zvar, szhat, szvar


def run_bigamp(
    ybar: np.ndarray,
    priors_s: ElementPriorS,
    priors_a: ElementPriorA,
    psi: np.ndarray,
    init: BigAmpInit | None = None,
    opts: BigAmpOptions | None = None,
) -> BigAmpOutput:
    """Iterate the bilinear engine until the product plane stops moving.

    Parameters
    ----------
    ybar : (M+1) x T augmented observations (last row all ones).
    priors_s : per-element Gaussian/point-mass priors, (M+1) x N.
    priors_a : per-element spike-and-slab priors, N x T.
    psi : length-M Gaussian noise variances for rows 1..M.
    init : starting factor moments; defaults to the prior moments.
    opts : iteration controls.

    Returns the Gaussian pseudo-observations of both factors, posterior
    factor moments consistent with them, product-plane posteriors, and the
    residual history.  Divergence is reported through the ``diverged`` flag
    together with the best iterate seen; non-finite message values raise
    NumericError.
    """
    opts = opts or BigAmpOptions()
    ybar = np.asarray(ybar, dtype=float)
    psi = np.asarray(psi, dtype=float)
    mp1, t = ybar.shape
    m = mp1 - 1
    n = priors_s.mean.shape[1]
    if priors_s.mean.shape != (mp1, n) or priors_a.shape != (n, t):
        raise ParameterError("prior shapes are inconsistent with the observations")
    if psi.shape != (m,) or np.any(psi <= 0):
        raise ParameterError("psi must be length M with positive entries")

    if init is None:
        ahat0, avar0 = priors_a.moments()
        init = BigAmpInit(
            shat=priors_s.mean.copy(),
            svar=priors_s.var.copy(),
            ahat=ahat0,
            avar=avar0,
        )
    shat = np.asarray(init.shat, dtype=float).copy()
    svar = np.asarray(init.svar, dtype=float).copy()
    ahat = np.asarray(init.ahat, dtype=float).copy()
    avar = np.asarray(init.avar, dtype=float).copy()

    def residual_of(s, a):
        return float(np.linalg.norm(ybar[:m] - (s @ a)[:m]))

    if opts.max_iters == 0:
        cap = np.full_like(shat, VAR_CAP)
        z0 = shat @ ahat
        return BigAmpOutput(
            qhat=shat.copy(),
            nuq=cap,
            rhat=ahat.copy(),
            nur=np.full_like(ahat, VAR_CAP),
            shat_post=shat,
            svar_post=svar,
            ahat_post=ahat,
            avar_post=avar,
            zhat_post=z0,
            zvar_post=(shat**2) @ avar + svar @ (ahat**2) + svar @ avar,
            iterations_run=0,
            final_residual=residual_of(shat, ahat),
        )

    szhat = np.zeros((mp1, t))
    szvar = np.zeros((mp1, t))
    fixed_s = priors_s.var == 0.0
    any_free_s = bool((~fixed_s).any())
    damping = opts.damping
    floor = opts.variance_floor
    residuals: list[float] = []
    best = None
    best_res = np.inf
    qhat = nuq = rhat = nur = None
    zhat = zvar = None
    diverged = False
    res_prev = residual_of(shat, ahat)
    it = 0

    for it in range(1, opts.max_iters + 1):
        if opts.uniform_variance:
            # one variance level per factor keeps every element at the same
            # effective temperature; exact point masses stay at zero
            sv = np.where(fixed_s, 0.0, svar[~fixed_s].mean() if any_free_s else 0.0)
            av = np.full_like(avar, avar.mean())
        else:
            sv, av = svar, avar
        s2 = shat**2
        a2 = ahat**2
        nup_bar = s2 @ av + sv @ a2
        pbar = shat @ ahat
        nup = nup_bar + sv @ av
        phat = pbar - szhat * nup_bar
        nup = np.maximum(nup, np.where(nup > 0, floor, 0.0))

        zhat_c, zvar_c, sz_new, szv_new = _output_step(ybar, psi, phat, nup, floor)
        szhat_c = damping * sz_new + (1.0 - damping) * szhat
        szvar_c = damping * szv_new + (1.0 - damping) * szvar

        prec_r = s2.T @ szvar_c
        nur_c = 1.0 / np.clip(prec_r, 1.0 / VAR_CAP, 1.0 / floor)
        rhat_c = ahat * (1.0 - nur_c * (sv.T @ szvar_c)) + nur_c * (shat.T @ szhat_c)
        prec_q = szvar_c @ a2.T
        nuq_c = 1.0 / np.clip(prec_q, 1.0 / VAR_CAP, 1.0 / floor)
        qhat_c = shat * (1.0 - nuq_c * (szvar_c @ av.T)) + nuq_c * (szhat_c @ ahat.T)

        s_new, sv_new = priors_s.denoise(qhat_c, nuq_c)
        a_new, av_new = priors_a.denoise(rhat_c, nur_c)
        shat_c = damping * s_new + (1.0 - damping) * shat
        svar_c = damping * sv_new + (1.0 - damping) * svar
        ahat_c = damping * a_new + (1.0 - damping) * ahat
        avar_c = damping * av_new + (1.0 - damping) * avar

        if not (
            np.all(np.isfinite(shat_c))
            and np.all(np.isfinite(ahat_c))
            and np.all(np.isfinite(szhat_c))
        ):
            raise NumericError(f"non-finite message values at iteration {it}")

        res = residual_of(shat_c, ahat_c)
        if (
            opts.adapt_damping
            and res > opts.reject_slack * res_prev
            and damping > opts.damping_min
        ):
            # too large a step: retry from the same state with smaller steps
            damping = max(damping * 0.5, opts.damping_min)
            continue

        z_old = shat @ ahat
        shat, svar, ahat, avar = shat_c, svar_c, ahat_c, avar_c
        szhat, szvar = szhat_c, szvar_c
        qhat, nuq, rhat, nur = qhat_c, nuq_c, rhat_c, nur_c
        zhat, zvar = zhat_c, zvar_c
        residuals.append(res)
        res_prev = res
        if opts.adapt_damping:
            damping = min(damping * 1.1, 1.0)
        if res < best_res:
            best_res = res
            best = (shat.copy(), svar.copy(), ahat.copy(), avar.copy())

        window = opts.divergence_window
        if (
            len(residuals) > window
            and damping <= opts.damping_min
            and res > opts.divergence_factor * min(residuals[:-window])
        ):
            diverged = True
            shat, svar, ahat, avar = best
            break

        znew = shat @ ahat
        denom = np.linalg.norm(z_old)
        if denom > 0 and np.linalg.norm(znew - z_old) <= opts.stop_tol * denom:
            break

    if qhat is None:
        # every candidate step was rejected within the budget
        qhat, nuq, rhat, nur = qhat_c, nuq_c, rhat_c, nur_c
        zhat, zvar = zhat_c, zvar_c

    # posterior moments re-derived from the final messages so that running the
    # denoisers on (qhat, nuq), (rhat, nur) reproduces them exactly
    shat_post, svar_post = priors_s.denoise(qhat, nuq)
    ahat_post, avar_post = priors_a.denoise(rhat, nur)

    return BigAmpOutput(
        qhat=qhat,
        nuq=nuq,
        rhat=rhat,
        nur=nur,
        shat_post=shat_post,
        svar_post=svar_post,
        ahat_post=ahat_post,
        avar_post=avar_post,
        zhat_post=zhat,
        zvar_post=zvar,
        iterations_run=it,
        final_residual=residual_of(shat_post, ahat_post),
        residuals=residuals,
        diverged=diverged,
    )
