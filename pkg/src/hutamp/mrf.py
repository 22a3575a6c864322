"""Belief propagation and parameter learning for grid Ising support fields.

The support map of one material is a field of binary variables d in {-1, +1}
on the T1 x T2 pixel grid with

    p(d) proportional to exp( -alpha * sum_t d_t + beta * sum_edges d_i d_j ),

one pairwise term per undirected 4-neighbor edge.  Larger alpha favors
inactive pixels (sparsity); larger beta favors agreement between neighbors
(spatial coherence).

``mrf_bp`` runs sum-product inference against per-pixel Bernoulli
observations and returns extrinsic activity beliefs (observation at the
pixel excluded), full posteriors, and per-edge pair beliefs.  Two engines sit
behind the same interface:

* a damped parallel-schedule loopy pass over the grid edges (messages held
  as half log-odds, Ising update atanh(tanh(beta) * tanh(cavity))), used for
  large grids; and
* an exact clique-chain (column transfer matrix) pass, used whenever the
  short grid side is small enough to enumerate, which keeps the marginals
  exact on thin grids where the pairwise Bethe approximation is poorest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import ParameterError
from .priors import clamp_prob

_EDGE_SIGNS = np.array([[1.0, -1.0], [-1.0, 1.0]])  # d_i * d_j over {+1,-1}^2

# Exact inference is used when the short grid side has at most this many rows.
_EXACT_MAX_WIDTH = 8
_EXACT_MAX_STATES = 2_000_000


@dataclass(frozen=True)
class MrfParams:
    """Sparsity weight alpha and nonnegative coupling weight beta."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ParameterError("field parameters must be finite")
        if self.beta < 0:
            raise ParameterError("coupling weight must be nonnegative")


@dataclass(frozen=True)
class MrfOptions:
    tol: float = 1e-6
    max_sweeps: int = 50
    damping: float = 0.5
    method: str = "auto"  # "auto" | "loopy" | "exact"


@dataclass(frozen=True)
class MrfEmOptions:
    n_steps: int = 5
    step_size: float = 0.01
    max_backtracks: int = 10
    learn_alpha: bool = True
    learn_beta: bool = True
    bp: MrfOptions = field(default_factory=MrfOptions)


class MrfBpResult(NamedTuple):
    ext_pi: np.ndarray      # T1 x T2 extrinsic activity probabilities
    post_pi: np.ndarray     # T1 x T2 posterior activity probabilities
    pair_h: np.ndarray      # (T1, T2-1, 2, 2) beliefs on horizontal edges
    pair_v: np.ndarray      # (T1-1, T2, 2, 2) beliefs on vertical edges
    converged: bool
    sweeps: int
    log_z: float            # log partition estimate (exact or Bethe)


def _logodds(p):
    p = clamp_prob(np.asarray(p, dtype=float))
    return 0.5 * (np.log(p) - np.log1p(-p))


def _from_logodds(t):
    return 1.0 / (1.0 + np.exp(-2.0 * np.asarray(t)))


def _pair_beliefs(beta, cav_i, cav_j):
    """Normalized 2x2 beliefs for edges with cavity fields cav_i, cav_j."""
    # state order: (+1,+1), (+1,-1), (-1,+1), (-1,-1)
    logits = np.stack(
        [
            beta + cav_i + cav_j,
            -beta + cav_i - cav_j,
            -beta - cav_i + cav_j,
            beta - cav_i - cav_j,
        ],
        axis=-1,
    )
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    return w.reshape(cav_i.shape + (2, 2))


def mrf_bp(incoming, params: MrfParams, opts: MrfOptions | None = None) -> MrfBpResult:
    """Sum-product support inference on the 4-neighbor grid field.

    Parameters
    ----------
    incoming : (T1, T2) array
        Per-pixel probabilities that the support is active, treated as local
        observations (clamped away from 0/1).
    params, opts : field parameters and engine controls.

    Returns extrinsic and posterior activity maps plus per-edge pair beliefs.
    Non-convergence of the loopy engine is reported through the ``converged``
    flag, never as an error.
    """
    opts = opts or MrfOptions()
    incoming = np.asarray(incoming, dtype=float)
    if incoming.ndim != 2:
        raise ParameterError("incoming beliefs must form a 2-D grid")
    t1, t2 = incoming.shape
    width = min(t1, t2)
    use_exact = opts.method == "exact" or (
        opts.method == "auto"
        and width <= _EXACT_MAX_WIDTH
        and (2**width) ** 2 * max(t1, t2) <= _EXACT_MAX_STATES
    )
    if use_exact:
        return _exact_grid(incoming, params)
    return _loopy_grid(incoming, params, opts)


def _loopy_grid(incoming, params: MrfParams, opts: MrfOptions) -> MrfBpResult:
    t1, t2 = incoming.shape
    ev = _logodds(incoming)           # evidence half log-odds
    unary = -params.alpha             # field half log-odds
    tb = np.tanh(params.beta)

    # msg_from_[n|s|w|e][i, j]: message into (i, j) from that neighbor
    m_n = np.zeros((t1, t2))
    m_s = np.zeros((t1, t2))
    m_w = np.zeros((t1, t2))
    m_e = np.zeros((t1, t2))

    def totals():
        return unary + ev + m_n + m_s + m_w + m_e

    converged = False
    sweeps = 0
    for sweeps in range(1, opts.max_sweeps + 1):
        c = totals()
        # message u -> v excludes what v previously sent to u (cavity)
        new_n = np.zeros_like(m_n)
        new_s = np.zeros_like(m_s)
        new_w = np.zeros_like(m_w)
        new_e = np.zeros_like(m_e)
        new_n[1:, :] = np.arctanh(tb * np.tanh(c[:-1, :] - m_s[:-1, :]))
        new_s[:-1, :] = np.arctanh(tb * np.tanh(c[1:, :] - m_n[1:, :]))
        new_w[:, 1:] = np.arctanh(tb * np.tanh(c[:, :-1] - m_e[:, :-1]))
        new_e[:, :-1] = np.arctanh(tb * np.tanh(c[:, 1:] - m_w[:, 1:]))
        d = opts.damping
        new_n = (1 - d) * new_n + d * m_n
        new_s = (1 - d) * new_s + d * m_s
        new_w = (1 - d) * new_w + d * m_w
        new_e = (1 - d) * new_e + d * m_e
        delta = max(
            np.max(np.abs(_from_logodds(new_n) - _from_logodds(m_n))),
            np.max(np.abs(_from_logodds(new_s) - _from_logodds(m_s))),
            np.max(np.abs(_from_logodds(new_w) - _from_logodds(m_w))),
            np.max(np.abs(_from_logodds(new_e) - _from_logodds(m_e))),
        )
        m_n, m_s, m_w, m_e = new_n, new_s, new_w, new_e
        if delta < opts.tol:
            converged = True
            break

    ext = unary + m_n + m_s + m_w + m_e
    post = ext + ev
    c = totals()
    cav_right = c[:, :-1] - m_e[:, :-1]   # cavity of left node of horizontal edge
    cav_left = c[:, 1:] - m_w[:, 1:]
    cav_down = c[:-1, :] - m_s[:-1, :]    # cavity of top node of vertical edge
    cav_up = c[1:, :] - m_n[1:, :]
    pair_h = _pair_beliefs(params.beta, cav_right, cav_left)
    pair_v = _pair_beliefs(params.beta, cav_down, cav_up)

    result = MrfBpResult(
        ext_pi=_from_logodds(ext),
        post_pi=_from_logodds(post),
        pair_h=pair_h,
        pair_v=pair_v,
        converged=converged,
        sweeps=sweeps,
        log_z=0.0,
    )
    return result._replace(log_z=bethe_log_partition(params, result, incoming))


def _exact_grid(incoming, params: MrfParams) -> MrfBpResult:
    """Exact column-chain inference; grid oriented so columns are short."""
    transposed = incoming.shape[0] > incoming.shape[1]
    grid = incoming.T if transposed else incoming
    w, length = grid.shape  # w = short side (column height), chain over length

    spins = 1.0 - 2.0 * (
        (np.arange(2**w)[:, None] >> np.arange(w)[None, :]) & 1
    )  # (S, w) in {+1, -1}; bit 0 -> row 0
    n_states = spins.shape[0]

    ev = _logodds(grid)  # (w, length) half log-odds of the evidence
    h = -params.alpha + ev
    # within-column log potential per state, per column
    local = spins @ h  # (S, length)
    if w > 1:
        local += params.beta * np.sum(spins[:, :-1] * spins[:, 1:], axis=1)[:, None]
    # between-column coupling
    trans = params.beta * (spins @ spins.T)  # (S, S)

    la = np.empty((length, n_states))
    lb = np.zeros((length, n_states))
    la[0] = local[:, 0]
    for k in range(1, length):
        la[k] = local[:, k] + logsumexp(la[k - 1][:, None] + trans, axis=0)
    for k in range(length - 2, -1, -1):
        lb[k] = logsumexp(trans + (local[:, k + 1] + lb[k + 1])[None, :], axis=1)
    log_z = float(logsumexp(la[-1]))

    state_post = la + lb  # (length, S), unnormalized log
    state_post -= logsumexp(state_post, axis=1, keepdims=True)
    p_state = np.exp(state_post)

    # node marginals in the log domain so extrinsic odds stay accurate even
    # when the posterior saturates
    theta_post = np.empty((w, length))
    post = np.empty((w, length))
    for i in range(w):
        act = spins[:, i] > 0
        lpa = logsumexp(state_post[:, act], axis=1)
        lpi = logsumexp(state_post[:, ~act], axis=1)
        theta_post[i] = 0.5 * (lpa - lpi)
        post[i] = np.exp(lpa)

    # vertical edges (within a column, between rows i and i+1)
    pair_v = np.empty((w - 1, length, 2, 2)) if w > 1 else np.empty((0, length, 2, 2))
    for i in range(w - 1):
        for bi, di in enumerate((1.0, -1.0)):
            for bj, dj in enumerate((1.0, -1.0)):
                mask = (spins[:, i] == di) & (spins[:, i + 1] == dj)
                pair_v[i, :, bi, bj] = p_state[:, mask].sum(axis=1)

    # horizontal edges (between adjacent columns, per row)
    pair_h = np.empty((w, length - 1, 2, 2))
    for k in range(length - 1):
        lp = la[k][:, None] + trans + (local[:, k + 1] + lb[k + 1])[None, :]
        lp -= logsumexp(lp)
        p2 = np.exp(lp)  # (S, S) joint over adjacent column states
        for i in range(w):
            pi_act = spins[:, i] > 0
            for bi, mi in enumerate((pi_act, ~pi_act)):
                for bj, mj in enumerate((pi_act, ~pi_act)):
                    pair_h[i, k, bi, bj] = p2[np.ix_(mi, mj)].sum()

    post = np.clip(post, 0.0, 1.0)
    ext = _from_logodds(theta_post - ev)

    if transposed:
        post = post.T
        ext = ext.T
        pair_h, pair_v = (
            np.transpose(pair_v, (1, 0, 2, 3)),
            np.transpose(pair_h, (1, 0, 2, 3)),
        )
    return MrfBpResult(
        ext_pi=ext,
        post_pi=post,
        pair_h=pair_h,
        pair_v=pair_v,
        converged=True,
        sweeps=1,
        log_z=log_z,
    )


def edge_correlations(pair: np.ndarray) -> np.ndarray:
    """E{d_i d_j} per edge from 2x2 pair beliefs."""
    return np.sum(pair * _EDGE_SIGNS, axis=(-2, -1))


def bethe_log_partition(params: MrfParams, bp: MrfBpResult, incoming=None) -> float:
    """Bethe estimate of the log partition function from BP beliefs.

    ``incoming`` must be the evidence grid of the run that produced ``bp``
    (omit for a flat-evidence field run).  Exact on tree-shaped grids.
    """
    node_p = np.stack([bp.post_pi, 1.0 - bp.post_pi], axis=-1)
    node_p = np.clip(node_p, 1e-300, 1.0)
    d_vals = np.array([1.0, -1.0])
    log_unary = -params.alpha * d_vals
    if incoming is not None:
        th = _logodds(incoming)
        log_unary = log_unary[None, None, :] + th[..., None] * d_vals
    e_node = np.sum(node_p * log_unary, axis=-1)
    h_node = -np.sum(node_p * np.log(node_p), axis=-1)
    total = float(np.sum(e_node + h_node))

    for pair in (bp.pair_h, bp.pair_v):
        if pair.size == 0:
            continue
        p = np.clip(pair, 1e-300, 1.0)
        e_edge = np.sum(p * (params.beta * _EDGE_SIGNS), axis=(-2, -1))
        h_edge = -np.sum(p * np.log(p), axis=(-2, -1))
        p_i = p.sum(axis=-1)
        p_j = p.sum(axis=-2)
        h_i = -np.sum(p_i * np.log(np.clip(p_i, 1e-300, 1.0)), axis=-1)
        h_j = -np.sum(p_j * np.log(np.clip(p_j, 1e-300, 1.0)), axis=-1)
        total += float(np.sum(e_edge + h_edge - h_i - h_j))
    return total


def _field_stats(params: MrfParams, shape, bp_opts: MrfOptions):
    """Node-mean sum, edge-correlation sum, and log Z of the bare field."""
    flat = np.full(shape, 0.5)
    bp = mrf_bp(flat, params, bp_opts)
    mean_sum = float(np.sum(2.0 * bp.post_pi - 1.0))
    corr_sum = float(np.sum(edge_correlations(bp.pair_h))) + float(
        np.sum(edge_correlations(bp.pair_v))
    )
    return mean_sum, corr_sum, bp.log_z


def _neighbor_sum_pmf(p_active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of each node's neighbor-spin sum under independent beliefs.

    Returns (support values (9,), pmf (T1, T2, 9)); missing neighbors at the
    grid border contribute a point mass at zero.
    """
    t1, t2 = p_active.shape
    vals = np.arange(-4, 5)
    pmf = np.zeros((t1, t2, 9))
    pmf[:, :, 4] = 1.0  # partial sum starts at 0
    shifts = [
        (np.s_[1:, :], np.s_[:-1, :]),
        (np.s_[:-1, :], np.s_[1:, :]),
        (np.s_[:, 1:], np.s_[:, :-1]),
        (np.s_[:, :-1], np.s_[:, 1:]),
    ]
    for dst, src in shifts:
        p = p_active[src]
        new = np.zeros_like(pmf[dst])
        new[..., 1:] += pmf[dst][..., :-1] * p[..., None]
        new[..., :-1] += pmf[dst][..., 1:] * (1.0 - p[..., None])
        pmf[dst] = new
    return vals, pmf


def expected_pseudo_loglik(post_pi, pair_h, pair_v, params: MrfParams) -> float:
    """Per-node conditional log density averaged under the given beliefs.

    Neighbor configurations are treated as independent across nodes (their
    marginals come from belief propagation), which makes this a closed-form,
    concave surrogate for the field likelihood.
    """
    post_pi = np.asarray(post_pi, dtype=float)
    m = 2.0 * post_pi - 1.0
    c = np.zeros_like(m)
    corr_h = edge_correlations(np.asarray(pair_h))
    corr_v = edge_correlations(np.asarray(pair_v))
    if corr_h.size:
        c[:, :-1] += corr_h
        c[:, 1:] += corr_h
    if corr_v.size:
        c[:-1, :] += corr_v
        c[1:, :] += corr_v
    vals, pmf = _neighbor_sum_pmf(post_pi)
    field = -params.alpha + params.beta * vals
    log2cosh = np.logaddexp(field, -field)
    q = -params.alpha * m.sum() + params.beta * c.sum() - float(np.sum(pmf * log2cosh))
    return float(q) / m.size


def em_update_mrf(
    post_pi,
    pair_h,
    pair_v,
    old: MrfParams,
    opts: MrfEmOptions | None = None,
) -> MrfParams:
    """Backtracking gradient ascent on the expected pseudo-log-likelihood.

    The surrogate averages each node's conditional log density under the
    current beliefs (node means and edge correlations from the data side,
    neighbor-sum distributions from independent marginals).  It is concave
    in (alpha, beta), so halved steps always find an ascent direction; beta
    is projected back to nonnegative values after every step.
    """
    opts = opts or MrfEmOptions()
    post_pi = np.asarray(post_pi, dtype=float)
    n_nodes = post_pi.size
    m = 2.0 * post_pi - 1.0
    c = np.zeros_like(m)
    corr_h = edge_correlations(np.asarray(pair_h))
    corr_v = edge_correlations(np.asarray(pair_v))
    if corr_h.size:
        c[:, :-1] += corr_h
        c[:, 1:] += corr_h
    if corr_v.size:
        c[:-1, :] += corr_v
        c[1:, :] += corr_v
    sum_m = float(m.sum())
    sum_c = float(c.sum())
    vals, pmf = _neighbor_sum_pmf(post_pi)

    def q_and_grad(a, b):
        field = -a + b * vals
        log2cosh = np.logaddexp(field, -field)
        th = np.tanh(field)
        e_log = float(np.sum(pmf * log2cosh))
        e_th = pmf @ th
        e_sth = pmf @ (vals * th)
        q = (-a * sum_m + b * sum_c - e_log) / n_nodes
        ga = (-sum_m + float(e_th.sum())) / n_nodes
        gb = (sum_c - float(e_sth.sum())) / n_nodes
        return q, ga, gb

    alpha, beta = old.alpha, old.beta
    q, ga, gb = q_and_grad(alpha, beta)
    for _ in range(opts.n_steps):
        if not opts.learn_alpha:
            ga = 0.0
        if not opts.learn_beta:
            gb = 0.0
        if ga == 0.0 and gb == 0.0:
            break
        step = opts.step_size
        accepted = False
        for _ in range(opts.max_backtracks + 1):
            a_new = alpha + step * ga
            b_new = max(beta + step * gb, 0.0)
            q_new, ga_new, gb_new = q_and_grad(a_new, b_new)
            if q_new >= q - 1e-12:
                alpha, beta = a_new, b_new
                q, ga, gb = q_new, ga_new, gb_new
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return MrfParams(alpha=alpha, beta=beta)


def gibbs_sample(
    params: MrfParams,
    shape: tuple[int, int],
    rng,
    sweeps: int = 1000,
    init=None,
) -> np.ndarray:
    """Checkerboard Gibbs sampler for the bare field; returns a {-1,+1} grid."""
    t1, t2 = shape
    if init is None:
        d = np.where(rng.random((t1, t2)) < 0.5, -1.0, 1.0)
    else:
        d = np.asarray(init, dtype=float).copy()
    ii, jj = np.meshgrid(np.arange(t1), np.arange(t2), indexing="ij")
    colors = (ii + jj) % 2
    for _ in range(sweeps):
        for color in (0, 1):
            s = np.zeros((t1, t2))
            s[1:, :] += d[:-1, :]
            s[:-1, :] += d[1:, :]
            s[:, 1:] += d[:, :-1]
            s[:, :-1] += d[:, 1:]
            p_active = 1.0 / (1.0 + np.exp(-2.0 * (-params.alpha + params.beta * s)))
            mask = colors == color
            draw = rng.random((t1, t2))
            d = np.where(mask, np.where(draw < p_active, 1.0, -1.0), d)
    return d
