"""Selection of the number of materials by penalized log-likelihood.

Candidate orders are scored by the data fit term -MT ln(RSS/MT) minus the
small-sample-corrected information penalty 2 MT n(N) / (MT - n(N) - 1),
where n(N) counts the scalar degrees of freedom of the full model at order
N.  The search walks N upward from 2 and stops at the first score decrease,
returning the local maximizer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cube import HsiCube
from .errors import ParameterError, UnmixError
from .turbo import TurboOptions, UnmixResult, unmix


@dataclass(frozen=True)
class MosOptions:
    n_min: int = 2
    n_max: int | None = None      # default min(M, 15)
    n_components: int = 3
    turbo: TurboOptions = field(default_factory=TurboOptions)


@dataclass(frozen=True)
class MosResult:
    n_hat: int
    scores: dict
    rss: dict
    results: dict                 # order -> UnmixResult (all attempted orders)
    boundary: bool = False        # stopped by the order cap, not a local max
    flags: dict = field(default_factory=dict)

    @property
    def selected(self) -> UnmixResult:
        return self.results[self.n_hat]

    @property
    def runner_up(self) -> UnmixResult | None:
        others = {k: v for k, v in self.scores.items() if k != self.n_hat}
        if not others:
            return None
        return self.results[max(others, key=others.get)]


def dof_count(n: int, m: int, t: int, l: int) -> int:
    """Scalar degrees of freedom of the order-n model.

    m*n spectra entries, (n-1)*t free abundances, 5 chain/field parameters
    plus 2*l mixture locations/scales and l-1 free weights per material, and
    m noise variances.
    """
    if min(n, m, t, l) < 1:
        raise ParameterError("all dimensions must be at least 1")
    return m * n + (n - 1) * t + 5 * n + 2 * n * l + n * (l - 1) + m


def mos_score(cube: HsiCube, result: UnmixResult, n: int, l: int = 3) -> tuple[float, float, dict]:
    """Penalized log-likelihood score of one fitted order.

    Returns (score, rss, flags); the residual is measured against the raw
    observations with the mean restored.  Degenerate cases are flagged:
    an exact fit scores +inf, and orders whose dof consume the sample
    score -inf.
    """
    m, t = cube.m, cube.t
    mt = m * t
    rss = float(np.sum((cube.data - result.endmembers.s @ result.abundances.a) ** 2))
    dof = dof_count(n, m, t, l)
    flags = {}
    if mt - dof - 1 <= 0:
        flags["dof_exceeds_sample"] = True
        return -np.inf, rss, flags
    if rss == 0.0:
        flags["exact_fit"] = True
        return np.inf, rss, flags
    score = -mt * np.log(rss / mt) - 2.0 * mt * dof / (mt - dof - 1)
    return float(score), rss, flags


def select_model_order(cube: HsiCube, opts: MosOptions | None = None) -> MosResult:
    """Incremental upward search over the number of materials.

    Runs the full unmixing job at each candidate order while the penalized
    score keeps improving; the first decrease ends the search and the
    previous order wins.  Failed candidates are skipped with a flag; hitting
    the order cap is reported as a boundary selection.
    """
    opts = opts or MosOptions()
    n_max = opts.n_max if opts.n_max is not None else min(cube.m, 15)
    if opts.n_min < 1 or n_max < opts.n_min:
        raise ParameterError("order bounds must satisfy 1 <= n_min <= n_max")

    scores: dict[int, float] = {}
    rss: dict[int, float] = {}
    results: dict[int, UnmixResult] = {}
    flags: dict = {}
    best_seen: int | None = None
    boundary = False

    n = opts.n_min
    while n <= n_max:
        try:
            res = unmix(cube, n, opts.turbo)
        except UnmixError as exc:
            warnings.warn(f"order {n} failed: {exc}")
            flags[n] = f"failed: {exc}"
            n += 1
            continue
        score, r, f = mos_score(cube, res, n, opts.n_components)
        scores[n], rss[n], results[n] = score, r, res
        if f:
            flags[n] = f
        if best_seen is not None and score <= scores[best_seen]:
            break
        best_seen = n
        n += 1
    else:
        boundary = best_seen == n_max
    if best_seen is None:
        raise UnmixError("every candidate order failed")
    return MosResult(
        n_hat=best_seen,
        scores=scores,
        rss=rss,
        results=results,
        boundary=boundary,
        flags=flags,
    )
