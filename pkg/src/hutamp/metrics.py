"""Evaluation metrics: spectral angles and permutation-aligned errors."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import MetricError

NMSE_FLOOR_DB = -300.0


def sad(s1, s2) -> float:
    """Spectral angle distance between two spectra, in degrees."""
    s1 = np.asarray(s1, dtype=float).ravel()
    s2 = np.asarray(s2, dtype=float).ravel()
    n1 = np.linalg.norm(s1)
    n2 = np.linalg.norm(s2)
    if n1 == 0 or n2 == 0:
        raise MetricError("spectral angle undefined for a zero vector")
    c = np.clip(float(s1 @ s2) / (n1 * n2), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def _sad_cost(truth: np.ndarray, est: np.ndarray) -> np.ndarray:
    """Pairwise angle cost with zero vectors scored at the 180-degree maximum."""
    tn = np.linalg.norm(truth, axis=0)
    en = np.linalg.norm(est, axis=0)
    cost = np.full((truth.shape[1], est.shape[1]), 180.0)
    ok = np.outer(tn > 0, en > 0)
    dots = truth.T @ est
    with np.errstate(invalid="ignore", divide="ignore"):
        cosv = np.clip(dots / np.outer(np.maximum(tn, 1e-300), np.maximum(en, 1e-300)), -1, 1)
    cost[ok] = np.degrees(np.arccos(cosv))[ok]
    return cost


def best_permutation(truth_cols: np.ndarray, est_cols: np.ndarray) -> tuple[int, ...]:
    """Column assignment minimizing total spectral angle.

    Exhaustive for up to 8 columns, Hungarian assignment beyond; ``perm[i]``
    is the estimate column matched to truth column i.
    """
    cost = _sad_cost(truth_cols, est_cols)
    n = cost.shape[0]
    if n != cost.shape[1]:
        raise MetricError("permutation alignment needs equal column counts")
    if n <= 8:
        best, best_cost = None, np.inf
        for perm in permutations(range(n)):
            c = sum(cost[i, perm[i]] for i in range(n))
            if c < best_cost:
                best, best_cost = perm, c
        return tuple(best)
    rows, cols = linear_sum_assignment(cost)
    return tuple(int(cols[np.argmax(rows == i)]) for i in range(n))


def _nmse_db(truth: np.ndarray, est: np.ndarray) -> float:
    denom = float(np.sum(truth**2))
    if denom == 0:
        raise MetricError("NMSE undefined for a zero reference")
    err = float(np.sum((truth - est) ** 2))
    if err == 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(err / denom), NMSE_FLOOR_DB)


def aligned_nmse(truth, estimate, kind: str = "S") -> tuple[float, tuple[int, ...]]:
    """Permutation-aligned normalized error in dB.

    kind "S" aligns columns (spectra); kind "A" aligns rows (abundance maps).
    Returns (nmse_db, perm) with perm[i] = estimate index matched to truth
    index i; an exact match reports the -300 dB floor.
    """
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise MetricError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    if kind == "S":
        perm = best_permutation(truth, estimate)
        return _nmse_db(truth, estimate[:, perm]), perm
    if kind == "A":
        perm = best_permutation(truth.T, estimate.T)
        return _nmse_db(truth, estimate[perm, :]), perm
    raise MetricError(f"unknown alignment kind {kind!r}")


@dataclass(frozen=True)
class MetricsReport:
    sad_per_material: tuple[float, ...]
    sad_avg: float
    nmse_s_db: float
    nmse_a_db: float | None
    permutation: tuple[int, ...]
    success: bool


def evaluate(
    s_true,
    s_est,
    a_true=None,
    a_est=None,
    success_threshold_db: float = -40.0,
) -> MetricsReport:
    """Score an estimate against ground truth with a single shared alignment.

    The permutation is chosen on the spectra (angle cost) and reused for the
    abundance rows, so both metrics describe one consistent material
    matching.  ``success`` is NMSE_S below the threshold.
    """
    s_true = np.asarray(s_true, dtype=float)
    s_est = np.asarray(s_est, dtype=float)
    perm = best_permutation(s_true, s_est)
    s_aligned = s_est[:, perm]
    sads = tuple(
        sad(s_true[:, i], s_aligned[:, i]) if np.linalg.norm(s_aligned[:, i]) > 0 else 180.0
        for i in range(s_true.shape[1])
    )
    nmse_s = _nmse_db(s_true, s_aligned)
    nmse_a = None
    if a_true is not None and a_est is not None:
        a_true = np.asarray(a_true, dtype=float)
        a_est = np.asarray(a_est, dtype=float)
        nmse_a = _nmse_db(a_true, a_est[perm, :])
    return MetricsReport(
        sad_per_material=sads,
        sad_avg=float(np.mean(sads)),
        nmse_s_db=nmse_s,
        nmse_a_db=nmse_a,
        permutation=perm,
        success=nmse_s < success_threshold_db,
    )
