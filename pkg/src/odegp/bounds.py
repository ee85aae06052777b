"""Error bounds for GP dynamics learned through multistep and Taylor integrators.

The bounds combine a kernel-regression error term (RKHS norm ``C`` of the
true dynamics) with the local truncation error of the integrator, and hold
for noiseless data, fixed true hyperparameters and a posterior computed with
jitter ``lambda = 1 + tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .dynsys import regular_grid, simulate_reference
from .gpcore import cross_multistep, gram_multistep
from .kernels import ARDHypers, ard_gram
from .mscoef import MultistepScheme, generate_scheme, local_error_weights
from .obsmodel import multistep_observations


class BoundInputError(ValueError):
    pass


@dataclass(frozen=True)
class MultistepBoundInputs:
    """Constants of the multistep bound.

    ``coef_sum`` is ``max_n sum_j |a_jn| + |b_jn|`` and ``lie_bound`` bounds
    the (P+1)th and (P+2)th Lie derivatives on the data region.
    """

    rkhs_norm: float
    lie_bound: float
    tau: float
    steps: int
    order: int
    max_step: float
    coef_sum: float
    n_points: int

    def __post_init__(self):
        if self.rkhs_norm < 0 or self.lie_bound < 0:
            raise BoundInputError("C and L must be non-negative")
        if self.tau < 0:
            raise BoundInputError("tau must be non-negative")

    @classmethod
    def from_scheme(cls, scheme: MultistepScheme, rkhs_norm: float, lie_bound: float, tau: float):
        return cls(
            rkhs_norm,
            lie_bound,
            tau,
            scheme.steps,
            scheme.order,
            float(scheme.grid.steps.max()),
            float(local_error_weights(scheme).max()),
            len(scheme.grid),
        )


@dataclass(frozen=True)
class TaylorBoundInputs:
    """Constants of the Taylor bound; ``level_norms`` are the per-level RKHS norms."""

    level_norms: Sequence[float]
    remainder_bound: float
    tau: float
    order: int
    max_step: float
    n_points: int

    def __post_init__(self):
        if any(c < 0 for c in self.level_norms) or self.remainder_bound < 0:
            raise BoundInputError("norm bounds must be non-negative")
        if self.tau < 0:
            raise BoundInputError("tau must be non-negative")


def multistep_error_constant(inp: MultistepBoundInputs) -> float:
    """``L M^{P+1} hmax^{P+1} / (P+1)! (N - M) max_n sum_j (|a| + |b|)``."""
    P, M = inp.order, inp.steps
    local = inp.lie_bound * M ** (P + 1) * inp.max_step ** (P + 1) / math.factorial(P + 1)
    return local * (inp.n_points - M) * inp.coef_sum


def taylor_error_constant(inp: TaylorBoundInputs) -> float:
    """``(N - 1) hmax^{P+1} / (P+1)! E``."""
    eps = inp.max_step ** (inp.order + 1) / math.factorial(inp.order + 1) * inp.remainder_bound
    return (inp.n_points - 1) * eps


def spectral_norm(apply, n: int, iters: int = 50, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration."""
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        lam_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            lam = lam_new
            break
        lam = lam_new
    return lam


def shrinkage_norm(K: np.ndarray, tau: float) -> float:
    """``|| ((K + tau I)^{-1} + I)^{-1} ||_2`` for SPD ``A = K + tau I``.

    The operator equals ``A (A + I)^{-1}`` with eigenvalues ``l / (l + 1)``,
    increasing in ``l``, so the norm follows from the top eigenvalue of ``A``,
    whose spectrum is far better separated for power iteration.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    A = K + tau * np.eye(n)
    try:
        scipy.linalg.cholesky(A, lower=True)
    except np.linalg.LinAlgError:
        raise BoundInputError("K + tau I is not positive definite") from None
    lam = spectral_norm(lambda v: A @ v, n)
    return lam / (lam + 1.0)


def _outer(sigma_x, C: float, C_eps: float, tau: float, K) -> np.ndarray:
    scale = math.sqrt(shrinkage_norm(K, tau))
    return np.asarray(sigma_x) * (C + C_eps * (1.0 + tau) ** -0.5 * scale)


def multistep_bound(inp: MultistepBoundInputs, K: np.ndarray, sigma_x) -> np.ndarray:
    """``sigma(x) (C + C_eps (1 + tau)^{-1/2} sqrt(||((K + tau I)^{-1} + I)^{-1}||_2))``."""
    return _outer(sigma_x, inp.rkhs_norm, multistep_error_constant(inp), inp.tau, K)


def taylor_bound(inp: TaylorBoundInputs, K: np.ndarray, sigma_x) -> np.ndarray:
    C = math.sqrt(sum(c * c for c in inp.level_norms))
    return _outer(sigma_x, C, taylor_error_constant(inp), inp.tau, K)


def jitter_posterior(K: np.ndarray, cross: np.ndarray, prior_var, Y: np.ndarray, tau: float):
    """Posterior mean and std with jitter ``1 + tau``.

    ``cross`` has shape (m, R) with rows ``k(x_i)``.
    """
    n = K.shape[0]
    L = scipy.linalg.cholesky(K + (1.0 + tau) * np.eye(n), lower=True)
    mean = cross @ scipy.linalg.cho_solve((L, True), Y)
    V = scipy.linalg.solve_triangular(L, cross.T, lower=True)
    var = np.asarray(prior_var) - np.sum(V**2, axis=0)
    return mean, np.sqrt(np.maximum(var, 0.0))


def time_derivative_bound(times: np.ndarray, states: np.ndarray, order: int, safety: float = 2.0) -> np.ndarray:
    """Per-dimension estimate of ``max |d^order x / dt^order|`` from a dense trajectory.

    Uses repeated central differences on a fine uniform grid and multiplies
    by ``safety``.
    """
    times = np.asarray(times, dtype=float)
    h = np.diff(times)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise ValueError("derivative estimate needs a uniform grid")
    d = np.asarray(states, dtype=float)
    for _ in range(order):
        d = np.gradient(d, h[0], axis=0, edge_order=2)
    return safety * np.max(np.abs(d[order:-order or None]), axis=0)


@dataclass
class BoundCheck:
    errors: np.ndarray  # |mu - f_u| per test point and dimension, flattened
    bounds: np.ndarray
    rkhs_norms: np.ndarray
    lie_bounds: np.ndarray

    @property
    def violations(self) -> int:
        return int(np.sum(self.errors > self.bounds))


def kernel_expansion_field(hypers, centers: np.ndarray, coefs: np.ndarray):
    """``f_u(x) = sum_i coefs[u, i] k(x, centers[i])`` and its RKHS norms."""
    Kzz = ard_gram(hypers, centers, centers)
    norms = np.sqrt(np.einsum("ui,ij,uj->u", coefs, Kzz, coefs))

    def f(x):
        x = np.asarray(x, dtype=float)
        return (ard_gram(hypers, x.reshape(-1, centers.shape[1]), centers) @ coefs.T).reshape(x.shape)

    return f, norms


def synthetic_bound_check(
    kind="AB",
    order: int = 1,
    n_steps: int = 30,
    step: float = 0.1,
    tau: float = 0.1,
    n_centers: int = 8,
    n_test: int = 100,
    seed: int = 0,
) -> BoundCheck:
    """Compare ``|mu(x) - f_u(x)|`` with the multistep bound on synthetic dynamics.

    The true dynamics are a kernel expansion, so their RKHS norm is known
    exactly; the data are noiseless and the posterior uses the true
    hyperparameters with jitter ``1 + tau``.  The derivative bound ``L`` is
    estimated from a dense accurate trajectory with a safety factor of 2.
    """
    rng = np.random.default_rng(seed)
    d = 2
    hypers = ARDHypers.from_natural(1.0, np.ones(d))
    centers = rng.normal(0.0, 1.0, (n_centers, d))
    coefs = rng.normal(0.0, 0.5, (d, n_centers))
    f, norms = kernel_expansion_field(hypers, centers, coefs)

    grid = regular_grid(0.0, n_steps, step)
    x0 = rng.normal(0.0, 0.5, d)
    traj = simulate_reference(f, x0, grid)
    scheme = generate_scheme(kind, order, grid)

    # dense trajectory for the derivative bound
    fine = max(1, int(round(step / 0.01)))
    dense_grid = regular_grid(0.0, n_steps * fine, step / fine)
    dense = simulate_reference(f, x0, dense_grid, rtol=1e-12, atol=1e-14)
    P = scheme.order
    L = np.maximum(
        time_derivative_bound(dense.times, dense.states, P + 1),
        time_derivative_bound(dense.times, dense.states, P + 2),
    )

    # test points near the trajectory
    idx = rng.integers(0, len(traj) - 1, n_test)
    w = rng.uniform(0.0, 1.0, (n_test, 1))
    tests = (1 - w) * traj.states[idx] + w * traj.states[idx + 1] + rng.normal(0.0, 0.05, (n_test, d))

    errors, bounds = [], []
    truth = f(tests)
    for u in range(d):
        ds = multistep_observations(traj, scheme, u)
        K = gram_multistep(ard_gram, hypers, ds)
        cross = cross_multistep(ard_gram, hypers, ds, tests)
        mean, std = jitter_posterior(K, cross, hypers.variance, ds.Y, tau)
        inp = MultistepBoundInputs.from_scheme(scheme, float(norms[u]), float(L[u]), tau)
        errors.append(np.abs(mean - truth[:, u]))
        bounds.append(multistep_bound(inp, K, std))
    return BoundCheck(np.concatenate(errors), np.concatenate(bounds), norms, L)
