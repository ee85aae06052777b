"""Decoupled posterior sampling of dynamics functions.

A posterior sample is a random-feature prior path plus a data-dependent
correction (Matheron's rule):

    f(x) = prior(x) + k(x, inputs) @ c,    c = B^T (K + noise)^{-1} (Y - B prior(X) - eps)

where ``B`` maps function values at the kernel inputs to the transformed
observations.  Each sample owns its frequencies, weights and noise draw, so a
sample is a fixed deterministic function once drawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .gpcore import DimModel, TrainedModel, taylor_scales
from .kernels import ard_spectral_batch, lie_spectral_batch
from .obsmodel import banded_apply

# samples per chunk when evaluating priors at the training points
_CHUNK = 32


@dataclass(frozen=True)
class LevelSample:
    """Batch of ``n`` sampled functions for one output dimension and level."""

    frequencies: np.ndarray  # (n, S, d)
    amplitudes: np.ndarray  # (n, S)
    weights: np.ndarray  # (n, 2S)
    coef: np.ndarray  # (n, P) weights on the kernel inputs
    kernel: object  # callable (X, Y) -> Gram
    inputs: np.ndarray  # (P, d)

    @property
    def n_samples(self) -> int:
        return self.weights.shape[0]

    def prior_members(self, x: np.ndarray) -> np.ndarray:
        """Member ``i`` of the prior at ``x[i]``; x is (n, d)."""
        z = np.einsum("nsd,nd->ns", self.frequencies, x)
        S = z.shape[1]
        return np.sum(self.amplitudes * (self.weights[:, :S] * np.cos(z) + self.weights[:, S:] * np.sin(z)), axis=1)

    def prior_all(self, X: np.ndarray, members=None) -> np.ndarray:
        """Every selected member at every point of X (m, d); shape (n, m)."""
        idx = np.arange(self.n_samples) if members is None else np.asarray(members)
        out = np.empty((idx.size, X.shape[0]))
        for start in range(0, idx.size, _CHUNK):
            sl = idx[start : start + _CHUNK]
            z = np.einsum("nsd,md->nms", self.frequencies[sl], X)
            S = z.shape[2]
            A = self.amplitudes[sl][:, None, :]
            w = self.weights[sl]
            out[start : start + sl.size] = np.sum(
                A * (w[:, None, :S] * np.cos(z) + w[:, None, S:] * np.sin(z)), axis=2
            )
        return out

    def members(self, x: np.ndarray) -> np.ndarray:
        K = self.kernel(x, self.inputs)  # row i pairs member i with x[i]
        return self.prior_members(x) + np.sum(K * self.coef, axis=1)

    def all_points(self, X: np.ndarray) -> np.ndarray:
        return self.prior_all(X) + self.coef @ self.kernel(X, self.inputs).T

    def select(self, j: int) -> "LevelSample":
        s = slice(j, j + 1)
        return LevelSample(
            self.frequencies[s], self.amplitudes[s], self.weights[s], self.coef[s], self.kernel, self.inputs
        )


@dataclass(frozen=True)
class SampledDynamics:
    """``n`` posterior samples of the vector field (or of its Taylor levels).

    ``levels[u][l]`` holds dimension ``u`` at level ``l + 1``.  Calling the
    object with an (n, d) array evaluates member ``i`` at row ``i``; a
    single-sample object accepts any (..., d) array.  Taylor samples return
    level values with a leading axis of length P.
    """

    levels: tuple  # tuple[tuple[LevelSample, ...], ...]
    taylor: bool

    @property
    def n_samples(self) -> int:
        return self.levels[0][0].n_samples

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def n_levels(self) -> int:
        return len(self.levels[0])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n_samples
        if n == 1:
            X = x.reshape(-1, self.dim)
            vals = np.stack([[ls.all_points(X)[0] for ls in dim_levels] for dim_levels in self.levels], axis=-1)
            vals = vals.reshape((self.n_levels,) + x.shape)
        else:
            if x.shape != (n, self.dim):
                raise ValueError(f"expected states of shape {(n, self.dim)}, got {x.shape}")
            vals = np.stack([[ls.members(x) for ls in dim_levels] for dim_levels in self.levels], axis=-1)
        return vals if self.taylor else vals[0]

    def evaluate_all(self, X) -> np.ndarray:
        """Every sample at every point: shape (n, m, d), or (P, n, m, d) for Taylor."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        vals = np.stack([[ls.all_points(X) for ls in dim_levels] for dim_levels in self.levels], axis=-1)
        return vals if self.taylor else vals[0]

    def select(self, j: int) -> "SampledDynamics":
        return SampledDynamics(tuple(tuple(ls.select(j) for ls in dl) for dl in self.levels), self.taylor)


def _level_basis(dm: DimModel, level: int, S: int, n: int, rng):
    if dm.mode == "adapted":
        return lie_spectral_batch(dm.hypers, dm.dataset.dim, level, S, n, rng)
    return ard_spectral_batch(dm.level_hypers(level), S, n, rng)


def _draw_dim(dm: DimModel, S: int, n: int, rng) -> tuple:
    ds = dm.dataset
    inputs = ds.inputs
    n_levels = dm.levels if dm.is_taylor else 1
    priors = []
    prior_rows = np.zeros((ds.n_rows, n))
    for level in range(1, n_levels + 1):
        W, A = _level_basis(dm, level, S, n, rng)
        w = rng.standard_normal((n, 2 * S))
        ls = LevelSample(W, A, w, np.zeros((n, inputs.shape[0])), dm.level_kernel(level), inputs)
        at_inputs = ls.prior_all(inputs).T  # (P, n)
        if dm.is_taylor:
            prior_rows += taylor_scales(ds.steps, level)[:, None] * at_inputs
        else:
            prior_rows += banded_apply(ds.b, at_inputs)
        priors.append(ls)
    eps = ds.noise.with_sigma(dm.sigma).draw(rng, n)
    resid = ds.Y[:, None] - prior_rows - eps
    v = scipy.linalg.cho_solve((dm.chol, True), resid)  # (R, n)
    out = []
    for level, ls in enumerate(priors, start=1):
        coef = dm.point_weights(v, level).T  # (n, P)
        out.append(LevelSample(ls.frequencies, ls.amplitudes, ls.weights, np.ascontiguousarray(coef), ls.kernel, inputs))
    return tuple(out)


def draw(model: TrainedModel, n_features: int = 256, n_samples: int = 1, seed: int = 0) -> SampledDynamics:
    """Draw ``n_samples`` posterior dynamics from a trained model.

    Dimensions draw independent features, weights and noise in a fixed
    order, so the result is a deterministic function of ``seed``.
    """
    if n_features < 1 or n_samples < 1:
        raise ValueError("need at least one feature and one sample")
    rng = np.random.default_rng(seed)
    levels = tuple(_draw_dim(dm, n_features, n_samples, rng) for dm in model.dims)
    return SampledDynamics(levels, model.is_taylor)


def draw_multistep(model: TrainedModel, n_features: int = 256, n_samples: int = 1, seed: int = 0) -> SampledDynamics:
    if model.is_taylor:
        raise ValueError("model was trained on Taylor observations")
    return draw(model, n_features, n_samples, seed)


def draw_taylor(model: TrainedModel, n_features: int = 256, n_samples: int = 1, seed: int = 0) -> SampledDynamics:
    if not model.is_taylor:
        raise ValueError("model was trained on multistep observations")
    return draw(model, n_features, n_samples, seed)


def eval_field(sample: SampledDynamics, x) -> np.ndarray:
    """Evaluate a single-sample draw at ``x`` (d,) or (m, d)."""
    if sample.n_samples != 1:
        raise ValueError("eval_field expects a single sample; use select(j)")
    return sample(x)
