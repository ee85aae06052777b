"""Transformed GP observations and their noise models.

A multistep row turns a window of trajectory points into one scalar
observation per state dimension, ``Y_n = sum_j a_jn x_{n+j,u}``, whose GP
mean is ``sum_j b_jn f_u(x_{n+j})``.  Taylor observations are the first
differences ``x_{n+1,u} - x_{n,u}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynsys import Trajectory
from .mscoef import MultistepScheme, SchemeKind, generate_scheme

NOISE_VARIANTS = ("full", "diag", "iid")


@dataclass(frozen=True)
class NoiseModel:
    """Observation-noise covariance ``sigma**2 * pattern``.

    ``pattern`` is an (R, R) matrix for the full variant, an R-vector of
    per-row variances for the diagonal variant and a scalar for i.i.d. noise.
    """

    variant: str
    pattern: np.ndarray
    n_rows: int
    sigma: float = 1.0

    def with_sigma(self, sigma: float) -> "NoiseModel":
        return NoiseModel(self.variant, self.pattern, self.n_rows, float(sigma))

    def unit_matrix(self) -> np.ndarray:
        if self.variant == "full":
            return np.array(self.pattern, dtype=float)
        if self.variant == "diag":
            return np.diag(self.pattern)
        return np.eye(self.n_rows) * float(self.pattern)

    def matrix(self) -> np.ndarray:
        return self.sigma**2 * self.unit_matrix()

    def diagonal(self) -> np.ndarray:
        if self.variant == "full":
            return self.sigma**2 * np.diag(self.pattern).copy()
        return self.sigma**2 * np.broadcast_to(self.pattern, (self.n_rows,)).astype(float)

    def draw(self, rng, n: int) -> np.ndarray:
        """``n`` noise realisations, shape (R, n)."""
        z = rng.standard_normal((self.n_rows, n))
        if self.variant == "full":
            L = np.linalg.cholesky(self.matrix() + 1e-14 * np.eye(self.n_rows))
            return L @ z
        return np.sqrt(self.diagonal())[:, None] * z


@dataclass(frozen=True)
class TransformedDataset:
    """GP regression data for one state dimension.

    ``X`` holds all trajectory points (N, d); ``a`` and ``b`` are the (R, M+1)
    coefficient rows for multistep data.  For Taylor data ``steps`` holds
    h_n and the inputs are ``X[:-1]``.
    """

    kind: str  # "multistep" | "taylor"
    dim: int
    Y: np.ndarray
    X: np.ndarray
    a: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    steps: Optional[np.ndarray] = None
    scheme: Optional[MultistepScheme] = None
    noise: Optional[NoiseModel] = None

    @property
    def n_rows(self) -> int:
        return self.Y.size

    @property
    def window(self) -> int:
        """Number of trajectory points feeding one row (M + 1)."""
        return 2 if self.kind == "taylor" else self.a.shape[1]

    @property
    def inputs(self) -> np.ndarray:
        """Points where the GP is evaluated (Taylor: all but the last)."""
        return self.X[:-1] if self.kind == "taylor" else self.X

    def with_noise(self, noise: NoiseModel) -> "TransformedDataset":
        return TransformedDataset(
            self.kind, self.dim, self.Y, self.X, self.a, self.b, self.steps, self.scheme, noise
        )

    def reconstruct_observations(self) -> np.ndarray:
        if self.kind == "taylor":
            return self.X[1:, self.dim] - self.X[:-1, self.dim]
        return banded_apply(self.a, self.X[:, self.dim])


def banded_apply(coef: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[n] = sum_j coef[n, j] * values[n + j]``; values may carry trailing axes."""
    R, W = coef.shape
    values = np.asarray(values)
    extra = (None,) * (values.ndim - 1)
    out = np.zeros((R,) + values.shape[1:])
    for j in range(W):
        out += coef[(slice(None), j) + extra] * values[j : j + R]
    return out


def banded_transpose_apply(coef: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`banded_apply`: maps R row values to N point values."""
    R, W = coef.shape
    rows = np.asarray(rows)
    extra = (None,) * (rows.ndim - 1)
    out = np.zeros((R + W - 1,) + rows.shape[1:])
    for j in range(W):
        out[j : j + R] += coef[(slice(None), j) + extra] * rows
    return out


def banded_matrix(coef: np.ndarray) -> np.ndarray:
    """Dense (R, N) matrix with ``(n, n + j) -> coef[n, j]``."""
    R, W = coef.shape
    out = np.zeros((R, R + W - 1))
    for j in range(W):
        out[np.arange(R), np.arange(R) + j] = coef[:, j]
    return out


def multistep_observations(traj: Trajectory, scheme: MultistepScheme, dim: int) -> TransformedDataset:
    M = scheme.steps
    if len(traj) < M + 1:
        raise ValueError(f"trajectory of length {len(traj)} is shorter than the {M + 1}-point window")
    if len(traj) != len(scheme.grid) or not np.array_equal(traj.times, scheme.grid.times):
        raise ValueError("scheme was generated on a different grid")
    X = np.array(traj.states)
    Y = banded_apply(scheme.a, X[:, dim])
    return TransformedDataset("multistep", dim, Y, X, scheme.a, scheme.b, None, scheme)


def taylor_observations(traj: Trajectory, dim: int) -> TransformedDataset:
    if len(traj) < 2:
        raise ValueError("Taylor observations need at least two points")
    X = np.array(traj.states)
    return TransformedDataset("taylor", dim, X[1:, dim] - X[:-1, dim], X, steps=traj.grid.steps)


def multistep_noise(scheme: MultistepScheme, sigma: float, variant: str = "diag") -> NoiseModel:
    """Noise of ``Y = A~ x_hat``: ``sigma^2 A~ A~^T`` or its approximations."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    R = scheme.n_rows
    if variant == "full":
        At = banded_matrix(scheme.a)
        pattern = At @ At.T
    elif variant == "diag":
        pattern = (scheme.a**2).sum(axis=1)
    elif variant == "iid":
        # constant approximation from the first row
        pattern = np.float64((scheme.a[0] ** 2).sum())
    else:
        raise ValueError(f"unknown noise variant {variant!r}")
    return NoiseModel(variant, pattern, R, sigma)


def taylor_noise(N: int, sigma: float, variant: str = "diag") -> NoiseModel:
    """Noise of first differences: tridiagonal ``sigma^2 (2, -1)``."""
    if N < 2:
        raise ValueError("need at least two points")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    R = N - 1
    if variant == "full":
        pattern = 2.0 * np.eye(R) - np.eye(R, k=1) - np.eye(R, k=-1)
    elif variant == "diag":
        pattern = np.full(R, 2.0)
    elif variant == "iid":
        pattern = np.float64(2.0)
    else:
        raise ValueError(f"unknown noise variant {variant!r}")
    return NoiseModel(variant, pattern, R, sigma)


def build_datasets(
    traj: Trajectory, kind, order: int, noise_variant: str = "diag", sigma: float = 1.0
) -> list[TransformedDataset]:
    """Per-dimension datasets (with noise pattern attached) for a training method."""
    kind = SchemeKind.parse(kind)
    if kind is SchemeKind.TAYLOR:
        noise = taylor_noise(len(traj), sigma, noise_variant)
        return [taylor_observations(traj, u).with_noise(noise) for u in range(traj.dim)]
    scheme = generate_scheme(kind, order, traj.grid)
    noise = multistep_noise(scheme, sigma, noise_variant)
    return [multistep_observations(traj, scheme, u).with_noise(noise) for u in range(traj.dim)]
