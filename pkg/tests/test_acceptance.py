"""Acceptance suite: one test per quantitative contract item.

Each test prints a single ``[criterion N] PASS ...`` line (visible with
``pytest -s``); a failed assertion marks the criterion red.  Tolerances and
runtime caps are asserted as stated, not recalibrated.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from hutamp import (
    MosOptions,
    SyntheticSpec,
    TurboOptions,
    dof_count,
    evaluate,
    gen_synthetic,
    select_model_order,
    unmix,
)
from hutamp.baselines import fcls, fsnmf_extract
from hutamp.chains import GmChainParams, em_update_gm, gm_smooth
from hutamp.cli import main as cli_main
from hutamp.cube import HsiCube, mean_remove
from hutamp.mrf import (
    MrfEmOptions,
    MrfOptions,
    MrfParams,
    em_update_mrf,
    gibbs_sample,
    mrf_bp,
)
from hutamp.priors import (
    NngmParams,
    activity_message,
    fit_nngm,
    nngm_posterior,
    sample_trunc_gauss,
    spike_slab_posterior,
    trunc_gauss_moments,
    trunc_gauss_posterior,
)
from oracles import (
    chain_smooth_dense,
    ising_enumerate,
    spike_slab_posterior_quad,
    trunc_gauss_moments_quad,
    trunc_gauss_posterior_quad,
)


def report(num: int, detail: str) -> None:
    print(f"\n[criterion {num}] PASS {detail}")


def test_criterion_1_scalar_denoisers_match_quadrature():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    tol = 1e-7
    worst = 0.0

    for _ in range(125):
        th, ph = rng.uniform(-10, 10), 10 ** rng.uniform(-4, 2)
        m, v, _ = trunc_gauss_moments(th, ph)
        mq, vq, _ = trunc_gauss_moments_quad(th, ph)
        worst = max(worst, abs(m - mq), abs(v - vq))

    for _ in range(125):
        th, ph = rng.uniform(-10, 10), 10 ** rng.uniform(-4, 2)
        rh, nu = rng.uniform(-10, 10), 10 ** rng.uniform(-4, 2)
        got = trunc_gauss_posterior(th, ph, rh, nu)
        want = trunc_gauss_posterior_quad(th, ph, rh, nu)
        worst = max(worst, *(abs(float(g) - float(w)) for g, w in zip(got, want)))

    for _ in range(125):
        L = int(rng.integers(1, 4))
        slab = NngmParams(rng.dirichlet(np.ones(L)), rng.uniform(-10, 10, L),
                          10 ** rng.uniform(-4, 2, L))
        pi = rng.uniform(0.05, 0.95)
        rh, nu = rng.uniform(-10, 10), 10 ** rng.uniform(-4, 2)
        got = spike_slab_posterior(pi, slab, rh, nu)
        want = spike_slab_posterior_quad(pi, slab, rh, nu)
        worst = max(worst, *(abs(float(g) - float(w)) for g, w in zip(got, want)))

    for _ in range(125):
        L = int(rng.integers(1, 4))
        slab = NngmParams(rng.dirichlet(np.ones(L)), rng.uniform(-10, 10, L),
                          10 ** rng.uniform(-4, 2, L))
        rh, nu = rng.uniform(-10, 10), 10 ** rng.uniform(-4, 2)
        got = activity_message(slab, np.asarray(rh), np.asarray(nu))
        want = spike_slab_posterior_quad(0.5, slab, rh, nu)[0]
        worst = max(worst, abs(float(got) - float(want)))

    runtime = time.perf_counter() - t0
    assert worst < tol
    assert runtime < 10.0
    report(1, f"500-point denoiser grid, worst |err| {worst:.2e} < 1e-7, {runtime:.1f}s")


def test_criterion_2_chain_smoother_exact():
    rng = np.random.default_rng(1002)
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        m = int(rng.choice([1, 2, 6, 20]))
        params = GmChainParams(
            kappa=rng.uniform(-1, 1),
            sigma2=10 ** rng.uniform(-2, 0.5),
            eta=rng.uniform(0.02, 1.0),
        )
        mean_in = rng.normal(size=m)
        var_in = 10 ** rng.uniform(-2, 2, size=m)
        res = gm_smooth(mean_in, var_in, params)
        em, ev, pm, pv, cr = chain_smooth_dense(mean_in, var_in, params)
        worst = max(
            worst,
            np.max(np.abs(res.ext_mean - em)),
            np.max(np.abs(res.ext_var - ev)),
            np.max(np.abs(res.post_mean - pm)),
            np.max(np.abs(res.post_var - pv)),
            np.max(np.abs(res.cross - cr)) if m > 1 else 0.0,
        )
        prec = 1.0 / res.ext_var + 1.0 / var_in
        fused = (res.ext_mean / res.ext_var + mean_in / var_in) / prec
        worst = max(
            worst,
            np.max(np.abs(fused - res.post_mean)),
            np.max(np.abs(1.0 / prec - res.post_var)),
        )
    runtime = time.perf_counter() - t0
    assert worst < 1e-9
    assert runtime < 5.0
    report(2, f"100 chains vs dense inference, worst |err| {worst:.2e} < 1e-9, {runtime:.1f}s")


def test_criterion_3_field_inference_oracle():
    rng = np.random.default_rng(1003)
    t0 = time.perf_counter()
    worst_chain = 0.0
    for _ in range(10):
        inc = rng.uniform(0.05, 0.95, size=(1, 9))
        params = MrfParams(rng.uniform(0, 1), rng.uniform(0, 1))
        res = mrf_bp(inc, params)
        post, _, _ = ising_enumerate(inc, params.alpha, params.beta)
        worst_chain = max(worst_chain, float(np.max(np.abs(res.post_pi - post))))
    worst_grid = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        inc = r.uniform(0.05, 0.95, size=(3, 3))
        params = MrfParams(r.uniform(0, 1), r.uniform(0, 1))
        res = mrf_bp(inc, params)
        post, _, _ = ising_enumerate(inc, params.alpha, params.beta)
        worst_grid = max(worst_grid, float(np.max(np.abs(res.post_pi - post))))
    runtime = time.perf_counter() - t0
    assert worst_chain < 1e-9
    assert worst_grid < 0.05
    assert runtime < 30.0
    report(
        3,
        f"chains exact to {worst_chain:.2e}, 3x3 node TV {worst_grid:.2e} < 0.05, {runtime:.1f}s",
    )


def test_criterion_4_mean_removal_property():
    rng = np.random.default_rng(1004)
    worst = 0.0
    for _ in range(100):
        m, n, t = 30, 4, 50
        s = sample_trunc_gauss(0.5, 0.05, (m, n), rng)
        a = rng.dirichlet(np.ones(n), size=t).T
        cube = HsiCube(data=s @ a, spatial=(1, t))
        mu, _ = mean_remove(cube)
        weighted = float(np.sum(a.mean(axis=1) * (s - mu).mean(axis=0)))
        worst = max(worst, abs(weighted))
    assert worst < 1e-10

    worst_noisy = 0.0
    for seed in range(20):
        spec = SyntheticSpec(m=100, n=4, t1=20, t2=20, abundance="dirichlet_full",
                             snr_db=20.0, seed=seed)
        cube, s_true, a_true = gen_synthetic(spec)
        mu, _ = mean_remove(cube)
        weighted = float(np.sum(a_true.a.mean(axis=1) * (s_true.s - mu).mean(axis=0)))
        worst_noisy = max(worst_noisy, abs(weighted))
    assert worst_noisy < 0.02
    report(4, f"centered-spectra weighted mean: {worst:.2e} noiseless, {worst_noisy:.3f} at 20 dB")


def test_criterion_5_pure_pixel_experiment():
    successes = 0
    hut_scores, base_scores = [], []
    worst_trial_s = 0.0
    for seed in range(20):
        spec = SyntheticSpec(m=50, n=3, t1=20, t2=20, scene="pure_strips",
                             snr_db=30.0, seed=seed)
        cube, s_true, a_true = gen_synthetic(spec)
        t0 = time.perf_counter()
        res = unmix(cube, 3)
        trial_s = time.perf_counter() - t0
        worst_trial_s = max(worst_trial_s, trial_s)
        assert trial_s < 60.0
        rep = evaluate(s_true.s, res.endmembers.s, a_true.a, res.abundances.a)
        hut_scores.append(rep.nmse_s_db)
        s_b = fsnmf_extract(cube, 3)
        base_scores.append(
            evaluate(s_true.s, s_b.s, a_true.a, fcls(cube, s_b).a).nmse_s_db
        )
        successes += rep.nmse_s_db < -25.0 and rep.nmse_a_db < -20.0
    assert successes >= 18
    assert np.median(hut_scores) < np.median(base_scores)
    report(
        5,
        f"strip scene {successes}/20 trials below (-25, -20) dB, median S "
        f"{np.median(hut_scores):.1f} vs baseline {np.median(base_scores):.1f} dB, "
        f"slowest trial {worst_trial_s:.1f}s",
    )


def test_criterion_6_purity_vs_sparsity_phase():
    t0 = time.perf_counter()
    # the sparsity-exploitation comparison runs with coherence modeling off
    opts = TurboOptions(spectral_coherence=False, spatial_coherence=False)

    def run_cell(k, p, algo, trials=10):
        wins = 0
        for trial in range(trials):
            seed = int(np.random.default_rng([106, k, p, trial]).integers(2**31))
            spec = SyntheticSpec(m=50, n=5, t1=1, t2=60, scene="iid_endmembers",
                                 abundance="k_sparse_p_pure", k=k, p=p,
                                 snr_db=80.0, seed=seed)
            cube, s_true, _ = gen_synthetic(spec)
            if algo == "hut":
                s_est = unmix(cube, 5, opts).endmembers.s
            else:
                s_est = fsnmf_extract(cube, 5).s
            wins += evaluate(s_true.s, s_est).nmse_s_db < -40.0
        return wins / trials

    hut_rates = {k: run_cell(k, 1, "hut") for k in (1, 2, 3)}
    for k, rate in hut_rates.items():
        assert rate >= 0.9, f"joint solver at K={k}, P=1: {rate}"

    base_pure = run_cell(1, 1, "base")
    assert base_pure >= 0.9
    base_fail = {k: run_cell(k, 1, "base") for k in (2, 3)}
    for k, rate in base_fail.items():
        assert rate <= 0.5, f"baseline unexpectedly strong at K={k}, P=1: {rate}"
    base_allpure = {k: run_cell(k, 5, "base") for k in (2, 3)}
    for k, rate in base_allpure.items():
        assert rate >= 0.9, f"baseline at K={k}, P=N: {rate}"

    runtime = time.perf_counter() - t0
    assert runtime < 1200.0
    report(
        6,
        "joint solver success "
        + ", ".join(f"K={k}: {hut_rates[k]:.2f}" for k in (1, 2, 3))
        + f"; baseline only at K=1 ({base_pure:.2f}) or P=N "
        + ", ".join(f"K={k}: {base_allpure[k]:.2f}" for k in (2, 3))
        + f"; {runtime/60:.1f} min",
    )


def test_criterion_7_model_order_selection():
    assert dof_count(10, 100, 115, 3) == 2265
    hits = 0
    for seed in range(20):
        spec = SyntheticSpec(m=50, n=3, t1=20, t2=20, scene="pure_strips",
                             snr_db=30.0, seed=seed)
        cube, *_ = gen_synthetic(spec)
        mos = select_model_order(cube, MosOptions())
        hits += mos.n_hat == 3
    assert hits >= 18
    report(7, f"order selection picked N=3 in {hits}/20 trials; dof(10,100,115,3)=2265")


def test_criterion_8_em_parameter_recovery():
    t0 = time.perf_counter()

    # amplitude-chain parameters from a near-noiseless simulated chain
    gen = np.random.default_rng(11)
    truth_gm = GmChainParams(kappa=0.5, sigma2=0.04, eta=0.1)
    m = 2000
    e = np.empty(m)
    e[0] = truth_gm.kappa + np.sqrt(truth_gm.sigma2) * gen.standard_normal()
    for i in range(1, m):
        e[i] = ((1 - truth_gm.eta) * e[i - 1] + truth_gm.eta * truth_gm.kappa
                + truth_gm.eta * np.sqrt(truth_gm.sigma2) * gen.standard_normal())
    gm = GmChainParams(0.0, 1.0, 0.5)
    for _ in range(10):
        res = gm_smooth(e, np.full(m, 1e-10), gm)
        gm = em_update_gm(res.post_mean, res.post_var, res.cross, gm)
    assert gm.kappa == pytest.approx(truth_gm.kappa, rel=0.1)
    assert gm.sigma2 == pytest.approx(truth_gm.sigma2, rel=0.1)
    assert gm.eta == pytest.approx(truth_gm.eta, rel=0.1)

    # mixture moments from flat-likelihood samples
    rng = np.random.default_rng(1008)
    data = sample_trunc_gauss(1.0, 0.25, 10_000, rng)
    slab = NngmParams(np.array([1.0]), np.array([0.3]), np.array([1.0]))
    for _ in range(20):
        post = nngm_posterior(slab, data, np.full_like(data, 1e-8))
        slab = fit_nngm(post["resp"], post["comp_mean"], post["comp_var"])
    assert slab.theta[0] == pytest.approx(1.0, rel=0.1)
    assert slab.phi[0] == pytest.approx(0.25, rel=0.1)

    # field parameters from one informative Gibbs draw
    truth_mrf = MrfParams(0.4, 0.4)
    sample = gibbs_sample(truth_mrf, (64, 64), np.random.default_rng(1), sweeps=1500)
    inc = np.where(sample > 0, 0.999, 0.001)
    bp = mrf_bp(inc, MrfParams(0.0, 0.0), MrfOptions(method="loopy"))
    est = em_update_mrf(bp.post_pi, bp.pair_h, bp.pair_v, MrfParams(0.2, 0.2),
                        MrfEmOptions(n_steps=50, step_size=0.5))
    assert est.alpha == pytest.approx(truth_mrf.alpha, rel=0.25)
    assert est.beta == pytest.approx(truth_mrf.beta, rel=0.25)

    runtime = time.perf_counter() - t0
    assert runtime < 120.0
    report(
        8,
        f"chain ({gm.kappa:.3f}, {gm.sigma2:.4f}, {gm.eta:.3f}), mixture "
        f"({slab.theta[0]:.3f}, {slab.phi[0]:.3f}), field ({est.alpha:.3f}, "
        f"{est.beta:.3f}), {runtime:.0f}s",
    )


def test_criterion_9_harness_determinism(tmp_path):
    args = [
        "sweep", "--quiet", "--seed", "3", "--trials", "2",
        "--m", "20", "--n", "3", "--t1", "4", "--t2", "8",
        "--scene", "pure_strips", "--snr-db", "25",
        "--k-grid", "1", "--algo", "hutamp",
        "--max-turbo", "5", "--bigamp-iters", "200",
    ]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli_main(args + ["--out", str(out1)]) == 0
    assert cli_main(args + ["--out", str(out2)]) == 0
    agg1 = (out1 / "aggregate.csv").read_bytes()
    agg2 = (out2 / "aggregate.csv").read_bytes()
    assert agg1 == agg2
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()
    report(9, f"repeated sweep byte-identical ({len(agg1)} bytes of aggregate)")
