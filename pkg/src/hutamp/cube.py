"""Observation cubes, mean removal, and the augmented bilinear observation model.

The observed scene is an M x T matrix Y (M spectral bands, T = T1*T2 pixels,
pixels linearized row-major over the grid).  Unmixing works on a mean-removed
copy of Y augmented with an all-ones row; the extra row carries the per-pixel
sum-to-one constraint on the abundances as an exact (zero-noise) measurement.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import InputError, ParameterError


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class HsiCube:
    """Immutable M x T observation matrix with its spatial layout.

    Column t of ``data`` is the pixel at grid coordinate
    (t // T2, t % T2) of the T1 x T2 scene.
    """

    data: np.ndarray
    spatial: tuple[int, int]
    bands: tuple | None = None

    def __post_init__(self):
        data = _as_matrix(self.data, "cube data")
        object.__setattr__(self, "data", data)
        t1, t2 = (int(v) for v in self.spatial)
        if t1 < 1 or t2 < 1:
            raise InputError(f"spatial dims must be >= 1, got {(t1, t2)}")
        object.__setattr__(self, "spatial", (t1, t2))
        if data.shape[0] < 1:
            raise InputError("cube needs at least one band")
        if data.shape[1] != t1 * t2:
            raise InputError(
                f"cube has {data.shape[1]} pixels but spatial layout "
                f"{t1}x{t2} implies {t1 * t2}"
            )
        if self.bands is not None:
            bands = tuple(self.bands)
            if len(bands) != data.shape[0]:
                raise InputError("band labels must match the number of rows")
            object.__setattr__(self, "bands", bands)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> int:
        return self.data.shape[1]

    @property
    def t1(self) -> int:
        return self.spatial[0]

    @property
    def t2(self) -> int:
        return self.spatial[1]

    def to_grid(self, row: np.ndarray) -> np.ndarray:
        """Reshape a length-T pixel vector to the T1 x T2 grid."""
        return np.asarray(row).reshape(self.spatial)


@dataclass(frozen=True)
class AugmentedObs:
    """Mean-removed observations with the appended all-ones constraint row."""

    ybar: np.ndarray
    mu: float
    psi: np.ndarray

    def __post_init__(self):
        ybar = _as_matrix(self.ybar, "ybar")
        psi = np.asarray(self.psi, dtype=float)
        if psi.ndim != 1 or psi.shape[0] != ybar.shape[0] - 1:
            raise ParameterError("psi must have one entry per observation row")
        if np.any(psi <= 0):
            raise ParameterError("noise variances must be positive")
        if not np.allclose(ybar[-1], 1.0):
            raise InputError("last row of ybar must be all ones")
        object.__setattr__(self, "ybar", ybar)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def m(self) -> int:
        return self.ybar.shape[0] - 1

    @property
    def t(self) -> int:
        return self.ybar.shape[1]


@dataclass(frozen=True)
class Endmembers:
    """M x N matrix of material spectra (one column per material)."""

    s: np.ndarray

    def __post_init__(self):
        s = _as_matrix(self.s, "endmembers")
        if s.shape[1] < 1:
            raise InputError("need at least one endmember")
        object.__setattr__(self, "s", s)

    @property
    def m(self) -> int:
        return self.s.shape[0]

    @property
    def n(self) -> int:
        return self.s.shape[1]


SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class Abundances:
    """N x T abundance matrix whose columns live on the probability simplex."""

    a: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.a, "abundances")
        if np.any(a < -SIMPLEX_TOL):
            raise InputError("abundances must be nonnegative")
        col_sums = a.sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > SIMPLEX_TOL):
            worst = float(np.max(np.abs(col_sums - 1.0)))
            raise InputError(f"abundance columns must sum to 1 (worst dev {worst:.2e})")
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def t(self) -> int:
        return self.a.shape[1]


def mean_remove(cube: HsiCube) -> tuple[float, np.ndarray]:
    """Subtract the global empirical mean from every entry of the cube.

    Returns the scalar mean ``mu`` and the centered matrix, so the original
    observations are always recoverable as ``ytilde + mu``.
    """
    y = cube.data
    mu = float(y.mean())
    return mu, y - mu


def augment(ytilde: np.ndarray, psi, mu: float = 0.0) -> AugmentedObs:
    """Append the all-ones constraint row to a mean-removed observation matrix.

    Rows 1..M keep their Gaussian noise model with per-row variance ``psi``;
    the appended row is an exact equality (the abundance columns must sum
    to one).  ``mu`` is carried along so the augmentation stays invertible.
    """
    ytilde = _as_matrix(ytilde, "ytilde")
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 0:
        psi = np.full(ytilde.shape[0], float(psi))
    if psi.shape != (ytilde.shape[0],):
        raise ParameterError(
            f"psi must be scalar or length {ytilde.shape[0]}, got shape {psi.shape}"
        )
    if np.any(psi <= 0):
        raise ParameterError("noise variances must be positive")
    ybar = np.vstack([ytilde, np.ones((1, ytilde.shape[1]))])
    return AugmentedObs(ybar=ybar, mu=mu, psi=psi)


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column of ``v`` onto the unit simplex."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = v.shape[0]
    u = np.sort(v, axis=0)[::-1]
    css = np.cumsum(u, axis=0) - 1.0
    ks = np.arange(1, n + 1)[:, None]
    cond = u - css / ks > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)  # last index where cond holds
    tau = css[rho, np.arange(v.shape[1])] / (rho + 1)
    return np.maximum(v - tau, 0.0)
