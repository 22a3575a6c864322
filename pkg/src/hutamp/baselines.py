"""Classical endmember extraction and abundance inversion baselines.

``fsnmf_extract`` is successive-projection endmember selection under the
pure-pixel assumption, optionally post-processed by projecting the selected
spectra onto the data's dominant signal subspace.  ``fcls`` solves the
per-pixel simplex-constrained least-squares inversion with an active-set
method warm-started across pixels.
"""

from __future__ import annotations

import warnings

import numpy as np

from .cube import Abundances, Endmembers, HsiCube
from .errors import ExtractionError, ParameterError


def fsnmf_extract(cube: HsiCube, n: int, denoise: bool = True) -> Endmembers:
    """Pick n observed pixels as endmembers by successive projection.

    Repeatedly selects the residual column of largest norm and projects all
    columns onto its orthogonal complement.  The returned spectra are the
    selected *original* columns; with ``denoise`` they are first projected
    onto the span of the top-n left singular vectors of the pixel-centered
    data (plus the mean spectrum), which strips noise outside the signal
    subspace.
    """
    y = cube.data
    m, t = y.shape
    if n < 1 or n > min(m, t):
        raise ParameterError(f"cannot extract {n} endmembers from a {m}x{t} cube")
    resid = y.copy()
    idx = []
    scale = float(np.max(np.sum(y * y, axis=0)))
    for _ in range(n):
        norms = np.sum(resid * resid, axis=0)
        j = int(np.argmax(norms))
        if norms[j] <= 1e-12 * max(scale, 1.0):
            raise ExtractionError(
                f"residual collapsed after {len(idx)} picks; data rank < {n}"
            )
        idx.append(j)
        u = resid[:, j] / np.sqrt(norms[j])
        resid -= np.outer(u, u @ resid)
    s = y[:, idx].copy()
    if denoise:
        ybar = y.mean(axis=1, keepdims=True)
        yc = y - ybar
        u_sub = np.linalg.svd(yc, full_matrices=False)[0][:, :n]
        s = ybar + u_sub @ (u_sub.T @ (s - ybar))
    return Endmembers(s=s)


def _fcls_solve_pixel(g, b, free, kkt_tol):
    """Active-set solve of min 0.5 a'Ga - b'a  s.t. sum(a) = 1, a >= 0."""
    n = g.shape[0]
    free = free.copy()
    if not free.any():
        free[:] = True
    a = np.zeros(n)
    for _ in range(4 * n + 10):
        # equality-constrained solve on the free set
        idx = np.flatnonzero(free)
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = g[np.ix_(idx, idx)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.append(b[idx], 1.0)
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            warnings.warn("degenerate endmember set in fcls; vertex chosen arbitrarily")
        a_free = sol[:k]
        lam = sol[k]
        if np.all(a_free >= -kkt_tol):
            a = np.zeros(n)
            a[idx] = np.maximum(a_free, 0.0)
            # multipliers of the clamped variables must be nonnegative
            mu = g @ a - b + lam
            blocked = ~free
            if not blocked.any() or np.min(mu[blocked]) >= -kkt_tol:
                return a, lam
            free[np.argmin(np.where(blocked, mu, np.inf))] = True
        else:
            # step from the current iterate toward a_free until a variable hits 0
            cur = a[idx]
            d = a_free - cur
            bad = d < -kkt_tol
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(bad, -cur / d, np.inf)
            jmin = int(np.argmin(steps))
            alpha = min(1.0, steps[jmin])
            cur = cur + alpha * d
            a = np.zeros(n)
            a[idx] = np.maximum(cur, 0.0)
            free[idx[jmin]] = False
            if not free.any():
                free[idx[jmin]] = True
    warnings.warn("fcls active-set did not settle; returning last iterate")
    return a, lam


def fcls(cube: HsiCube, s: Endmembers) -> Abundances:
    """Fully constrained least squares: per-pixel simplex regression on s.

    Solves min ||y_t - S a||^2 subject to a >= 0 and sum(a) = 1 for every
    pixel, sharing the active set between consecutive pixels as a warm start.
    """
    y = cube.data
    smat = s.s
    if smat.shape[0] != y.shape[0]:
        raise ParameterError("endmember and cube band counts differ")
    n, t = smat.shape[1], y.shape[1]
    g = smat.T @ smat
    bs = smat.T @ y
    kkt_tol = 1e-10 * max(1.0, float(np.max(np.abs(g))))
    a_out = np.empty((n, t))
    free = np.ones(n, dtype=bool)
    for j in range(t):
        a, _ = _fcls_solve_pixel(g, bs[:, j], free, kkt_tol)
        a_out[:, j] = a
        free = a > 0
    # exact feasibility for downstream simplex checks
    a_out = np.maximum(a_out, 0.0)
    a_out /= a_out.sum(axis=0, keepdims=True)
    return Abundances(a=a_out)
