"""Joint unmixing by turbo message passing with incremental EM.

One unmixing job alternates inference on three subgraphs of the full model:
the bilinear engine (which ties spectra and abundances to the observations),
per-material amplitude chains (spectral coherence), and per-material grid
support fields (spatial coherence).  After every exchange, all prior and
likelihood parameters are refreshed by one incremental EM pass, and the
bilinear engine is re-run to convergence under the updated beliefs.

The beliefs exchanged are extrinsic: each subgraph receives only the
information the other subgraphs derived without its own contribution.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import fsnmf_extract
from .bigamp import (
    BigAmpInit,
    BigAmpOptions,
    ElementPriorA,
    ElementPriorS,
    run_bigamp,
)
from .chains import ChainSmooth, GmChainParams, em_update_gm, gm_smooth
from .cube import Abundances, Endmembers, HsiCube, augment, mean_remove, simplex_project
from .errors import InitError, ParameterError
from .mrf import MrfBpResult, MrfEmOptions, MrfOptions, MrfParams, em_update_mrf, mrf_bp
from .priors import (
    NngmParams,
    activity_message,
    clamp_prob,
    fit_nngm,
    nngm_posterior,
    norm_logpdf,
    uniform_slab,
)

# The data-driven correlation init is kept away from its extremes: at either
# end the chain prior becomes so tight that EM cannot escape a bad start.
ETA_INIT_CLIP = (0.05, 0.95)
SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """All learned parameters: noise, abundance mixtures, chain and field priors."""

    psi: np.ndarray
    nngm: tuple[NngmParams, ...]
    gm: tuple[GmChainParams, ...]
    mrf: tuple[MrfParams, ...]

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        if np.any(psi <= 0) or not np.all(np.isfinite(psi)):
            raise ParameterError("noise variances must be positive and finite")
        if not len(self.nngm) == len(self.gm) == len(self.mrf):
            raise ParameterError("need one parameter set per material")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "nngm", tuple(self.nngm))
        object.__setattr__(self, "gm", tuple(self.gm))
        object.__setattr__(self, "mrf", tuple(self.mrf))

    @property
    def n_materials(self) -> int:
        return len(self.nngm)


@dataclass(frozen=True)
class TurboOptions:
    max_turbo: int = 20
    turbo_tol: float = 1e-6
    snr0_db: float = 10.0
    n_components: int = 3
    em_enabled: bool = True
    spectral_coherence: bool = True
    spatial_coherence: bool = True
    noise_mode: str = "scalar"        # "scalar" pools psi over bands, "per_band" keeps a vector
    alpha0: float = 0.4
    beta0: float = 0.4
    eta0: float | None = None         # None: correlation initialized from the data
    s0: np.ndarray | None = None      # fixed initial endmembers (overrides extraction)
    init_denoise: bool = True
    psi_floor: float = 1e-14
    # the schedule calls the engine "to convergence"; the default engine
    # iteration cap is too small for near-noiseless runs
    bigamp: BigAmpOptions = field(default_factory=lambda: BigAmpOptions(max_iters=600))
    mrf: MrfOptions = field(default_factory=MrfOptions)
    mrf_em: MrfEmOptions = field(default_factory=MrfEmOptions)

    def __post_init__(self):
        if self.noise_mode not in ("scalar", "per_band"):
            raise ParameterError("noise_mode must be 'scalar' or 'per_band'")


@dataclass
class TurboState:
    """Mutable working state of one unmixing job."""

    ytilde: np.ndarray
    ybar: np.ndarray
    mu: float
    spatial: tuple[int, int]
    params: ModelParams
    opts: TurboOptions
    # messages out of the bilinear engine
    qhat: np.ndarray
    nuq: np.ndarray
    rhat: np.ndarray
    nur: np.ndarray
    # current priors fed back into the bilinear engine
    s_prior_mean: np.ndarray
    s_prior_var: np.ndarray
    pi_ext: np.ndarray
    # posterior estimates
    shat: np.ndarray
    svar: np.ndarray
    ahat: np.ndarray
    avar: np.ndarray
    zhat: np.ndarray
    zvar: np.ndarray
    # most recent subgraph outputs (populated by turbo_iterate)
    chain_beliefs: tuple[ChainSmooth, ...] = ()
    field_beliefs: tuple[MrfBpResult, ...] = ()
    iteration: int = 0
    residuals: list = field(default_factory=list)
    bigamp_iterations: list = field(default_factory=list)
    diverged: bool = False

    @property
    def m(self) -> int:
        return self.ytilde.shape[0]

    @property
    def n(self) -> int:
        return self.s_prior_mean.shape[1]

    @property
    def t(self) -> int:
        return self.ytilde.shape[1]


@dataclass(frozen=True)
class UnmixResult:
    endmembers: Endmembers
    abundances: Abundances
    omega: ModelParams
    diagnostics: dict

    @property
    def residual(self) -> float:
        return self.diagnostics["residuals"][-1] if self.diagnostics["residuals"] else np.inf


def _dirac_s_prior(s_under: np.ndarray) -> ElementPriorS:
    mp1n = np.vstack([s_under, np.ones((1, s_under.shape[1]))])
    return ElementPriorS(mean=mp1n, var=np.zeros_like(mp1n))


def _augmented_s_prior(mean: np.ndarray, var: np.ndarray) -> ElementPriorS:
    n = mean.shape[1]
    return ElementPriorS(
        mean=np.vstack([mean, np.ones((1, n))]),
        var=np.vstack([var, np.zeros((1, n))]),
    )


def initialize(cube: HsiCube, n: int, opts: TurboOptions | None = None) -> TurboState:
    """Build the starting state: extraction, agnostic priors, one engine run.

    The initial endmembers come from successive projection with subspace
    denoising (or ``opts.s0``); they enter the first bilinear run as exact
    point masses.  Abundances start from the activity-agnostic prior (uniform
    slab fit, activity one half), the noise floor from a pessimistic 10 dB
    assumption, and chain/field parameters from simple data statistics.
    """
    opts = opts or TurboOptions()
    if n < 1:
        raise ParameterError("need at least one material")
    mu, ytilde = mean_remove(cube)
    m, t = ytilde.shape

    if opts.s0 is not None:
        s0 = np.asarray(opts.s0, dtype=float)
        if s0.shape != (m, n):
            raise InitError(f"fixed initial endmembers must be {m}x{n}")
    else:
        try:
            s0 = fsnmf_extract(cube, n, denoise=opts.init_denoise).s
        except Exception as exc:
            raise InitError(f"endmember extraction failed: {exc}") from exc
    s0u = s0 - mu

    snr0 = 10.0 ** (opts.snr0_db / 10.0)
    psi0 = float(np.sum(ytilde**2)) / ((snr0 + 1.0) * m * t)
    psi0 = max(psi0, opts.psi_floor)
    psi = np.full(m, psi0)

    slab0 = uniform_slab(opts.n_components)
    pi0 = np.full((n, t), 0.5)
    aug = augment(ytilde, psi, mu=mu)

    out = run_bigamp(
        aug.ybar,
        _dirac_s_prior(s0u),
        ElementPriorA(pi=pi0, slabs=[slab0] * n),
        psi,
        opts=opts.bigamp,
    )

    kappa = s0u.mean(axis=0)
    sigma2 = np.maximum(s0u.var(axis=0), SIGMA2_FLOOR)
    if not opts.spectral_coherence:
        eta = np.ones(n)
    elif opts.eta0 is not None:
        eta = np.full(n, float(opts.eta0))
    else:
        a_energy = max(float(np.sum(out.ahat_post**2)), 1e-300)
        row_energy = np.sum(ytilde**2, axis=1)
        phi0 = np.maximum((row_energy - t * psi) / a_energy, 1e-12)
        overlap = np.abs(np.sum(ytilde[:-1] * ytilde[1:], axis=1))
        eta_scalar = 1.0 - float(np.mean(overlap / (phi0[:-1] * a_energy))) if m > 1 else 1.0
        eta = np.full(n, np.clip(eta_scalar, *ETA_INIT_CLIP))

    beta0 = opts.beta0 if opts.spatial_coherence else 0.0
    params = ModelParams(
        psi=psi,
        nngm=tuple(slab0 for _ in range(n)),
        gm=tuple(
            GmChainParams(kappa=float(kappa[j]), sigma2=float(sigma2[j]), eta=float(eta[j]))
            for j in range(n)
        ),
        mrf=tuple(MrfParams(alpha=opts.alpha0, beta=beta0) for _ in range(n)),
    )

    return TurboState(
        ytilde=ytilde,
        ybar=aug.ybar,
        mu=mu,
        spatial=cube.spatial,
        params=params,
        opts=opts,
        qhat=out.qhat,
        nuq=out.nuq,
        rhat=out.rhat,
        nur=out.nur,
        s_prior_mean=s0u.copy(),
        s_prior_var=np.zeros_like(s0u),
        pi_ext=pi0,
        shat=out.shat_post,
        svar=out.svar_post,
        ahat=out.ahat_post,
        avar=out.avar_post,
        zhat=out.zhat_post,
        zvar=out.zvar_post,
        residuals=[out.final_residual],
        bigamp_iterations=[out.iterations_run],
    )


def em_update_noise_nngm(state: TurboState) -> ModelParams:
    """One incremental EM pass over the noise and active-abundance parameters.

    The noise update averages squared fit residuals plus posterior variance
    of the product plane; the mixture update moment-matches each component to
    its responsibility-weighted posterior statistics under the current
    extrinsic activity beliefs.  Materials whose activity mass collapses keep
    their previous mixture (flagged with a warning).
    """
    params = state.params
    m, t = state.ytilde.shape
    resid2 = (state.ytilde - state.zhat[:m]) ** 2 + state.zvar[:m]
    if state.opts.noise_mode == "scalar":
        psi = np.full(m, max(float(resid2.mean()), state.opts.psi_floor))
    else:
        psi = np.maximum(resid2.mean(axis=1), state.opts.psi_floor)

    new_slabs = []
    for j in range(state.n):
        slab = params.nngm[j]
        post = nngm_posterior(slab, state.rhat[j], state.nur[j])
        llr = post["log_evidence"] - norm_logpdf(0.0, state.rhat[j], state.nur[j])
        pi = clamp_prob(state.pi_ext[j])
        log_odds = llr + np.log(pi) - np.log1p(-pi)
        post_pi = 1.0 / (1.0 + np.exp(-np.clip(log_odds, -700, 700)))
        comp_mass = post_pi * post["resp"]  # (L, T) joint activity/component weights
        if comp_mass.sum() < 1e-8 * t:
            warnings.warn(f"material {j}: no active mass; mixture parameters held")
            new_slabs.append(slab)
            continue
        new_slabs.append(fit_nngm(comp_mass, post["comp_mean"], post["comp_var"]))
    return replace(params, psi=psi, nngm=tuple(new_slabs))


def turbo_iterate(state: TurboState) -> TurboState:
    """One full turbo round: subgraph exchanges, EM, bilinear re-run."""
    opts = state.opts
    m, t, n = state.m, state.t, state.n
    t1, t2 = state.spatial

    # spectral side: chain smoothing of the engine's endmember beliefs
    chains = []
    for j in range(n):
        var_in = np.clip(state.nuq[:m, j], 1e-300, None)
        chains.append(gm_smooth(state.qhat[:m, j], var_in, state.params.gm[j]))
    state.chain_beliefs = tuple(chains)

    # spatial side: support inference on the engine's activity evidence
    fields = []
    gamma = np.empty((n, t))
    for j in range(n):
        gamma[j] = activity_message(state.params.nngm[j], state.rhat[j], state.nur[j])
        fields.append(
            mrf_bp(gamma[j].reshape(t1, t2), state.params.mrf[j], opts.mrf)
        )
    state.field_beliefs = tuple(fields)

    # convert back to engine priors
    state.s_prior_mean = np.column_stack([c.ext_mean for c in chains])
    state.s_prior_var = np.column_stack([c.ext_var for c in chains])
    state.pi_ext = np.vstack([f.ext_pi.reshape(-1) for f in fields])

    # incremental EM on all parameters
    if opts.em_enabled:
        params = em_update_noise_nngm(state)
        gm_new = []
        for j, c in enumerate(chains):
            gm_new.append(
                em_update_gm(
                    c.post_mean,
                    c.post_var,
                    c.cross,
                    state.params.gm[j],
                    freeze_eta=not opts.spectral_coherence,
                )
            )
        mrf_new = []
        mrf_em_opts = opts.mrf_em
        if not opts.spatial_coherence:
            mrf_em_opts = replace(mrf_em_opts, learn_beta=False)
        for j, f in enumerate(fields):
            mrf_new.append(
                em_update_mrf(f.post_pi, f.pair_h, f.pair_v, state.params.mrf[j], mrf_em_opts)
            )
        state.params = replace(
            params, gm=tuple(gm_new), mrf=tuple(mrf_new)
        )

    # bilinear engine under the refreshed priors, warm-started
    priors_s = _augmented_s_prior(state.s_prior_mean, state.s_prior_var)
    priors_a = ElementPriorA(pi=state.pi_ext, slabs=list(state.params.nngm))
    out = run_bigamp(
        state.ybar,
        priors_s,
        priors_a,
        state.params.psi,
        init=BigAmpInit(shat=state.shat, svar=state.svar, ahat=state.ahat, avar=state.avar),
        opts=opts.bigamp,
    )
    state.qhat, state.nuq = out.qhat, out.nuq
    state.rhat, state.nur = out.rhat, out.nur
    state.shat, state.svar = out.shat_post, out.svar_post
    state.ahat, state.avar = out.ahat_post, out.avar_post
    state.zhat, state.zvar = out.zhat_post, out.zvar_post
    state.diverged = state.diverged or out.diverged
    state.residuals.append(out.final_residual)
    state.bigamp_iterations.append(out.iterations_run)
    state.iteration += 1
    return state


def unmix(cube: HsiCube, n: int, opts: TurboOptions | None = None) -> UnmixResult:
    """Full unmixing job: initialize, iterate to convergence, extract output.

    Returns mean-restored endmembers, simplex-projected abundances, the
    learned parameters, and run diagnostics.  A single-material request is
    degenerate (every abundance is one) and bypasses the turbo loop.
    """
    opts = opts or TurboOptions()
    started = time.perf_counter()
    if n == 1:
        s = cube.data.mean(axis=1, keepdims=True)
        a = np.ones((1, cube.t))
        return UnmixResult(
            endmembers=Endmembers(s=s),
            abundances=Abundances(a=a),
            omega=ModelParams(
                psi=np.full(cube.m, max(float(np.var(cube.data - s)), 1e-12)),
                nngm=(uniform_slab(opts.n_components),),
                gm=(GmChainParams(float(s.mean()), max(float(s.var()), SIGMA2_FLOOR), 1.0),),
                mrf=(MrfParams(0.0, 0.0),),
            ),
            diagnostics={
                "residuals": [float(np.linalg.norm(cube.data - s @ a))],
                "turbo_iterations": 0,
                "bigamp_iterations": [],
                "runtime_s": time.perf_counter() - started,
                "diverged": False,
                "negative_endmembers": int(np.sum(s < 0)),
            },
        )

    state = initialize(cube, n, opts)
    best = (state.residuals[-1], state.shat.copy(), state.ahat.copy(), state.params)
    z_prev = state.zhat.copy()
    params_history = [state.params]
    for _ in range(opts.max_turbo):
        turbo_iterate(state)
        params_history.append(state.params)
        if state.residuals[-1] < best[0]:
            best = (state.residuals[-1], state.shat.copy(), state.ahat.copy(), state.params)
        dz = np.linalg.norm(state.zhat - z_prev)
        z_norm = np.linalg.norm(z_prev)
        z_prev = state.zhat.copy()
        if z_norm > 0 and dz <= opts.turbo_tol * z_norm:
            break

    diverged = state.diverged or state.residuals[-1] > 2.0 * best[0] + 1e-12
    shat, ahat = (best[1], best[2]) if diverged else (state.shat, state.ahat)
    params = best[3] if diverged else state.params

    s_final = shat[:-1] + state.mu
    a_final = simplex_project(ahat)
    n_negative = int(np.sum(s_final < 0))
    if n_negative:
        warnings.warn(f"{n_negative} negative endmember entries in the final estimate")
    return UnmixResult(
        endmembers=Endmembers(s=s_final),
        abundances=Abundances(a=a_final),
        omega=params,
        diagnostics={
            "residuals": list(state.residuals),
            "turbo_iterations": state.iteration,
            "bigamp_iterations": list(state.bigamp_iterations),
            "runtime_s": time.perf_counter() - started,
            "diverged": bool(diverged),
            "negative_endmembers": n_negative,
            "params_history": params_history,
        },
    )
