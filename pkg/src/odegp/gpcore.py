"""Composite Gram matrices, marginal likelihood, training and posterior moments.

Each state dimension is an independent GP.  For multistep data the GP sees
``Y_n = sum_j b_jn f(x_{n+j}) + eps_n`` so the Gram matrix is
``K = B k(X, X) B^T`` with the banded coefficient operator ``B``.  For Taylor
data with ``P`` independent level GPs, ``K = sum_l D_l k_l(X, X) D_l`` with
``D_l = diag(h_n^l / l!)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .dynsys import Trajectory
from .kernels import (
    ARDHypers,
    adapted_level_gram,
    ard_gram,
    ard_gram_grads,
)
from .mscoef import SchemeKind
from .obsmodel import (
    TransformedDataset,
    banded_apply,
    banded_transpose_apply,
    build_datasets,
)

log = logging.getLogger(__name__)

LOG2PI = math.log(2.0 * math.pi)
PARAM_BOUND = 20.0


class TrainingError(RuntimeError):
    pass


class FactorizationError(TrainingError):
    pass


class ModelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "lbfgs"  # "lbfgs" | "adam"
    iterations: int = 2000
    learning_rate: float = 0.05
    jitter: float = 1e-8  # relative to the signal variance
    restarts: int = 0
    seed: int = 0
    gradient: str = "analytic"  # "analytic" | "fd"
    pretrain: bool = True
    taylor_mode: str = "independent"  # "independent" | "adapted"

    def __post_init__(self):
        if self.jitter <= 0:
            raise ValueError("jitter must be positive")
        if self.optimizer not in ("lbfgs", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if self.taylor_mode not in ("independent", "adapted"):
            raise ValueError(f"unknown Taylor kernel mode {self.taylor_mode!r}")


# ---------------------------------------------------------------------------
# Gram matrices and cross-covariances


def _banded_gram(b: np.ndarray, Kxx: np.ndarray) -> np.ndarray:
    """``B Kxx B^T`` for a banded (R, M+1) coefficient array."""
    R, W = b.shape
    K = np.zeros((R, R))
    for j in range(W):
        for i in range(W):
            K += b[:, j, None] * Kxx[j : j + R, i : i + R] * b[None, :, i]
    return K


def _banded_adjoint_gram(b: np.ndarray, Wm: np.ndarray) -> np.ndarray:
    """``B^T W B`` as an (N, N) matrix."""
    R, W = b.shape
    N = R + W - 1
    G = np.zeros((N, N))
    for j in range(W):
        for i in range(W):
            G[j : j + R, i : i + R] += b[:, j, None] * Wm * b[None, :, i]
    return G


def gram_multistep(kernel, hypers, dataset: TransformedDataset) -> np.ndarray:
    """Gram matrix of the b-weighted observations.

    ``kernel(hypers, X, Y)`` returns a Gram matrix; pass ``ard_gram`` for the
    standard ARD kernel.
    """
    Kxx = kernel(hypers, dataset.X, dataset.X)
    K = _banded_gram(dataset.b, Kxx)
    return 0.5 * (K + K.T)


def cross_multistep(kernel, hypers, dataset: TransformedDataset, xs) -> np.ndarray:
    """``cov(f(x*), Y_n) = sum_j b_jn k(x*, x_{n+j})``; shape (R,) or (n*, R)."""
    xs = np.asarray(xs, dtype=float)
    single = xs.ndim == 1
    Kx = kernel(hypers, np.atleast_2d(xs), dataset.X)  # (n*, N)
    out = banded_apply(dataset.b, Kx.T).T
    return out[0] if single else out


def taylor_scales(steps: np.ndarray, level: int) -> np.ndarray:
    return steps**level / math.factorial(level)


def gram_taylor(level_kernels: Sequence[Callable], dataset: TransformedDataset) -> np.ndarray:
    """``sum_l (h_n^l h_m^l / l!^2) k_l(x_n, x_m)`` with ``level_kernels[l-1](X, Y)``."""
    X = dataset.inputs
    K = np.zeros((X.shape[0], X.shape[0]))
    for l, k in enumerate(level_kernels, start=1):
        s = taylor_scales(dataset.steps, l)
        K += s[:, None] * k(X, X) * s[None, :]
    return 0.5 * (K + K.T)


def cross_taylor(level_kernel: Callable, level: int, dataset: TransformedDataset, xs) -> np.ndarray:
    """``cov(f^i(x*), Y_n) = h_n^i / i! k_i(x*, x_n)``."""
    xs = np.asarray(xs, dtype=float)
    single = xs.ndim == 1
    out = level_kernel(np.atleast_2d(xs), dataset.inputs) * taylor_scales(dataset.steps, level)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Parameterisation
#
# Per dimension the unconstrained parameter vector is
#   multistep:            [log s2, log l_1..d, log sigma_u]
#   taylor, independent:  [level 1 (d+1), ..., level P (d+1), log sigma_u]
# In adapted Taylor mode the dimensions share their base kernels and are
# trained jointly on the summed likelihood.


@dataclass
class DimModel:
    """Trained GP for one output dimension, with cached factorisation."""

    dataset: TransformedDataset
    hypers: list  # list[ARDHypers]: 1 (multistep), P (independent) or d (adapted base)
    log_sigma: float
    levels: int = 1
    mode: str = "independent"
    jitter: float = 0.0
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    nll: float = float("nan")

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    @property
    def is_taylor(self) -> bool:
        return self.dataset.kind == "taylor"

    def level_hypers(self, level: int) -> ARDHypers:
        if self.mode == "adapted":
            return self.hypers[self.dataset.dim]
        return self.hypers[level - 1]

    def level_kernel(self, level: int) -> Callable:
        if self.mode == "adapted":
            base, u = self.hypers, self.dataset.dim
            return lambda X, Y: adapted_level_gram(base, u, level, X, Y)
        h = self.hypers[level - 1]
        return lambda X, Y: ard_gram(h, X, Y)

    def signal_variance(self) -> float:
        return self.level_hypers(1).variance

    def prior_K(self) -> np.ndarray:
        if self.is_taylor:
            return gram_taylor([self.level_kernel(l) for l in range(1, self.levels + 1)], self.dataset)
        return gram_multistep(ard_gram, self.hypers[0], self.dataset)

    def noise_matrix(self) -> np.ndarray:
        return self.dataset.noise.with_sigma(self.sigma).matrix()

    def cross(self, xs, level: int = 1) -> np.ndarray:
        if self.is_taylor:
            return cross_taylor(self.level_kernel(level), level, self.dataset, xs)
        return cross_multistep(ard_gram, self.hypers[0], self.dataset, xs)

    def point_weights(self, vec: np.ndarray, level: int = 1) -> np.ndarray:
        """Map row-space vectors to weights on the kernel inputs.

        ``cross(x) @ vec == k(x, inputs) @ point_weights(vec)``.
        """
        if self.is_taylor:
            s = taylor_scales(self.dataset.steps, level)
            return s.reshape((-1,) + (1,) * (np.ndim(vec) - 1)) * vec
        return banded_transpose_apply(self.dataset.b, vec)


def factorize(K_y: np.ndarray, base_jitter: float, escalations: int = 3) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K_y + jitter I``, escalating jitter by 10x."""
    jitter = base_jitter
    n = K_y.shape[0]
    for attempt in range(escalations + 1):
        try:
            L = scipy.linalg.cholesky(K_y + jitter * np.eye(n), lower=True, check_finite=True)
            return L, jitter
        except (np.linalg.LinAlgError, ValueError):
            if attempt == escalations:
                break
            jitter *= 10.0
    raise FactorizationError(f"Cholesky failed after {escalations} jitter escalations (last {jitter:.3g})")


def nll(K: np.ndarray, Y: np.ndarray, noise, jitter: float = 0.0) -> float:
    """Negative log marginal likelihood ``-log N(Y | 0, K + noise)``.

    ``noise`` is a covariance matrix, a vector of variances or a scalar.
    """
    noise = np.asarray(noise, dtype=float)
    K_y = K + (noise if noise.ndim == 2 else np.diag(np.broadcast_to(noise, (K.shape[0],))))
    L, _ = factorize(K_y, jitter) if jitter > 0 else (scipy.linalg.cholesky(K_y, lower=True), 0.0)
    alpha = scipy.linalg.cho_solve((L, True), Y)
    return float(0.5 * Y @ alpha + np.log(np.diag(L)).sum() + 0.5 * Y.size * LOG2PI)


def _dim_theta(dm: DimModel) -> np.ndarray:
    return np.concatenate([h.vector() for h in dm.hypers] + [[dm.log_sigma]])


def _with_theta(dm: DimModel, theta: np.ndarray) -> DimModel:
    d = dm.dataset.X.shape[1]
    n_h = len(dm.hypers)
    hypers = [ARDHypers.from_vector(theta[k * (d + 1) : (k + 1) * (d + 1)]) for k in range(n_h)]
    return replace(dm, hypers=hypers, log_sigma=float(theta[n_h * (d + 1)]))


def _objective(dm: DimModel, jitter_rel: float, want_grad: bool):
    """NLL of one dimension and, optionally, its analytic gradient."""
    ds = dm.dataset
    X = ds.X
    s2 = dm.signal_variance()
    P_noise = ds.noise.unit_matrix()
    sig2 = dm.sigma**2
    R = ds.n_rows

    if ds.kind == "multistep":
        Kxx, dKxx = ard_gram_grads(dm.hypers[0], X) if want_grad else (ard_gram(dm.hypers[0], X, X), None)
        K = _banded_gram(ds.b, Kxx)
        K = 0.5 * (K + K.T)
    else:
        Xin = ds.inputs
        K = np.zeros((R, R))
        level_parts = []
        for l in range(1, dm.levels + 1):
            s = taylor_scales(ds.steps, l)
            S = s[:, None] * s[None, :]
            if want_grad:
                Kl, dKl = ard_gram_grads(dm.hypers[l - 1], Xin)
                level_parts.append((S, dKl))
            else:
                Kl = ard_gram(dm.hypers[l - 1], Xin, Xin)
            K += S * Kl
        K = 0.5 * (K + K.T)

    jitter = jitter_rel * s2
    K_y = K + sig2 * P_noise
    L, used = factorize(K_y, jitter)
    alpha = scipy.linalg.cho_solve((L, True), ds.Y)
    value = float(0.5 * ds.Y @ alpha + np.log(np.diag(L)).sum() + 0.5 * R * LOG2PI)
    if not want_grad:
        return value, None

    Kinv = scipy.linalg.cho_solve((L, True), np.eye(R))
    Wm = Kinv - np.outer(alpha, alpha)
    grads = []
    if ds.kind == "multistep":
        G = _banded_adjoint_gram(ds.b, Wm)
        grads.extend(0.5 * np.sum(G * dk) for dk in dKxx)
        grads[0] += 0.5 * used * np.trace(Wm) * (jitter > 0)
    else:
        for S, dKl in level_parts:
            WS = Wm * S
            grads.extend(0.5 * np.sum(WS * dk) for dk in dKl)
        grads[0] += 0.5 * used * np.trace(Wm)
    grads.append(0.5 * np.sum(Wm * (2.0 * sig2 * P_noise)))
    return value, np.array(grads)


def _fd_grad(fun: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = eps
        g[k] = (fun(theta + e) - fun(theta - e)) / (2 * eps)
    return g


def dim_nll(dm: DimModel, jitter_rel: float = 1e-8) -> float:
    if dm.mode == "adapted":
        K_y = dm.prior_K() + dm.noise_matrix()
        L, _ = factorize(K_y, jitter_rel * dm.signal_variance())
        alpha = scipy.linalg.cho_solve((L, True), dm.dataset.Y)
        return float(0.5 * dm.dataset.Y @ alpha + np.log(np.diag(L)).sum() + 0.5 * alpha.size * LOG2PI)
    return _objective(dm, jitter_rel, False)[0]


def dim_nll_grad(dm: DimModel, jitter_rel: float = 1e-8, mode: str = "analytic"):
    """NLL and its gradient w.r.t. the dimension's log-parameters."""
    if mode == "analytic" and dm.mode != "adapted":
        return _objective(dm, jitter_rel, True)
    theta = _dim_theta(dm)

    def f(t):
        return dim_nll(_with_theta(dm, t), jitter_rel)

    return f(theta), _fd_grad(f, theta)


def _minimize(fun_grad, theta0: np.ndarray, config: TrainConfig) -> np.ndarray:
    """Minimise a (value, grad) objective from ``theta0`` in log-space."""
    bounds = [(-PARAM_BOUND, PARAM_BOUND)] * theta0.size
    theta0 = np.clip(theta0, -PARAM_BOUND, PARAM_BOUND)

    def safe(t):
        try:
            v, g = fun_grad(t)
        except FactorizationError:
            return 1e25, np.zeros_like(t)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return 1e25, np.zeros_like(t)
        return v, g

    if config.optimizer == "lbfgs":
        res = scipy.optimize.minimize(
            safe, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": config.iterations, "ftol": 1e-12, "gtol": 1e-8},
        )
        return res.x
    # Adam with fixed step size
    theta = theta0.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    best, best_val = theta.copy(), np.inf
    for it in range(1, config.iterations + 1):
        val, g = safe(theta)
        if val < best_val:
            best, best_val = theta.copy(), val
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = config.learning_rate * (m / (1 - b1**it)) / (np.sqrt(v / (1 - b2**it)) + eps)
        theta = np.clip(theta - step, -PARAM_BOUND, PARAM_BOUND)
    val, _ = safe(theta)
    return theta if val <= best_val else best


def _finalize(dm: DimModel, jitter_rel: float) -> DimModel:
    K_y = dm.prior_K() + dm.noise_matrix()
    L, used = factorize(K_y, jitter_rel * dm.signal_variance())
    alpha = scipy.linalg.cho_solve((L, True), dm.dataset.Y)
    value = float(0.5 * dm.dataset.Y @ alpha + np.log(np.diag(L)).sum() + 0.5 * alpha.size * LOG2PI)
    return replace(dm, chol=L, alpha=alpha, jitter=used, nll=value)


def _optimize_dim(dm: DimModel, config: TrainConfig, rng) -> DimModel:
    theta0 = _dim_theta(dm)
    starts = [theta0] + [theta0 + 0.5 * rng.standard_normal(theta0.size) for _ in range(config.restarts)]
    best, best_val = None, np.inf
    for start in starts:
        theta = _minimize(
            lambda t: dim_nll_grad(_with_theta(dm, t), config.jitter, config.gradient), start, config
        )
        cand = _with_theta(dm, theta)
        try:
            val = dim_nll(cand, config.jitter)
        except FactorizationError:
            continue
        if val < best_val:
            best, best_val = cand, val
    if best is None:
        raise FactorizationError("all optimisation starts failed to factorise")
    return best


def _optimize_adapted(dms: list[DimModel], config: TrainConfig, rng) -> list[DimModel]:
    """Joint optimisation of shared base kernels and per-dimension noise."""
    d = len(dms)
    base0 = dms[0].hypers

    def unpack(t):
        base = [ARDHypers.from_vector(t[u * (d + 1) : (u + 1) * (d + 1)]) for u in range(d)]
        sig = t[d * (d + 1) :]
        return [replace(dm, hypers=base, log_sigma=float(sig[u])) for u, dm in enumerate(dms)]

    def total(t):
        return sum(dim_nll(dm, config.jitter) for dm in unpack(t))

    def fun_grad(t):
        return total(t), _fd_grad(total, t)

    theta0 = np.concatenate([h.vector() for h in base0] + [[dm.log_sigma for dm in dms]])
    starts = [theta0] + [theta0 + 0.5 * rng.standard_normal(theta0.size) for _ in range(config.restarts)]
    best, best_val = None, np.inf
    for start in starts:
        theta = _minimize(fun_grad, start, config)
        try:
            val = total(theta)
        except FactorizationError:
            continue
        if val < best_val:
            best, best_val = theta, val
    if best is None:
        raise FactorizationError("all optimisation starts failed to factorise")
    return unpack(best)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainedModel:
    dims: list  # list[DimModel]
    kind: SchemeKind
    order: int
    noise_variant: str
    config: TrainConfig
    data_hash: str = ""

    @property
    def is_taylor(self) -> bool:
        return self.kind is SchemeKind.TAYLOR

    @property
    def levels(self) -> int:
        return self.dims[0].levels

    @property
    def label(self) -> str:
        return f"{self.kind.value}{self.order}"

    @property
    def state_dim(self) -> int:
        return len(self.dims)


def initial_hypers(dataset: TransformedDataset) -> tuple[ARDHypers, float]:
    """Heuristic start: derivative variance, input spread, small noise."""
    X = dataset.inputs
    if dataset.kind == "taylor":
        h = dataset.steps
    else:
        h = np.abs(dataset.b).sum(axis=1)
    fd = dataset.Y / h
    var = float(np.var(fd)) if np.var(fd) > 0 else 1.0
    ls = np.std(X, axis=0)
    ls = np.where(ls > 0, ls, 1.0)
    noise = 0.1 * float(np.std(dataset.Y)) if np.std(dataset.Y) > 0 else 1e-3
    return ARDHypers.from_natural(var, ls), float(np.log(noise))


def data_hash(traj: Trajectory) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(traj.times).tobytes())
    h.update(np.ascontiguousarray(traj.states).tobytes())
    return h.hexdigest()[:16]


def _fit_stage(datasets, hypers_init, sigma_init, levels, config, rng) -> list[DimModel]:
    mode = config.taylor_mode if datasets[0].kind == "taylor" else "independent"
    dms = []
    for u, ds in enumerate(datasets):
        if mode == "adapted":
            hyp = list(hypers_init)  # shared base list
        elif ds.kind == "taylor":
            hyp = [hypers_init[u]] * levels
        else:
            hyp = [hypers_init[u]]
        dms.append(DimModel(ds, hyp, sigma_init[u], levels, mode))
    for dm in dms:
        v = dim_nll(dm, config.jitter)
        if not np.isfinite(v):
            raise TrainingError(f"non-finite NLL at initial hyperparameters {dm.hypers}")
    if mode == "adapted":
        dms = _optimize_adapted(dms, config, rng)
    else:
        dms = [_optimize_dim(dm, config, rng) for dm in dms]
    return [_finalize(dm, config.jitter) for dm in dms]


def fit_datasets(datasets: Sequence[TransformedDataset], config: TrainConfig = TrainConfig(), levels: int = 1) -> list[DimModel]:
    """Fit prepared datasets from the heuristic start, without pretraining."""
    if not datasets:
        raise ValueError("no datasets to fit")
    inits = [initial_hypers(ds) for ds in datasets]
    rng = np.random.default_rng(config.seed)
    return _fit_stage(datasets, [h for h, _ in inits], [s for _, s in inits], levels, config, rng)


def train(
    traj: Trajectory,
    kind,
    order: int,
    config: TrainConfig = TrainConfig(),
    noise_variant: str = "diag",
    pretrained: list | None = None,
) -> TrainedModel:
    """Fit one GP per state dimension by maximising the marginal likelihood.

    With ``config.pretrain`` an explicit-Euler model is fitted first and its
    hyperparameters initialise the target method.  ``pretrained`` lets callers
    pass such an Euler model (list of DimModel) to skip that stage.
    """
    kind = SchemeKind.parse(kind)
    rng = np.random.default_rng(config.seed)
    datasets = build_datasets(traj, kind, order, noise_variant)
    levels = order if kind is SchemeKind.TAYLOR else 1
    inits = [initial_hypers(ds) for ds in datasets]
    hyp0 = [h for h, _ in inits]
    sig0 = [s for _, s in inits]

    is_euler = kind is SchemeKind.AB and order == 1 or kind is SchemeKind.TAYLOR and order == 1
    if config.pretrain and not is_euler:
        if pretrained is None:
            euler_ds = build_datasets(traj, SchemeKind.AB, 1, noise_variant)
            e_inits = [initial_hypers(ds) for ds in euler_ds]
            pretrained = _fit_stage(
                euler_ds, [h for h, _ in e_inits], [s for _, s in e_inits], 1, config, rng
            )
        hyp0 = [dm.hypers[0] for dm in pretrained]
        sig0 = [dm.log_sigma for dm in pretrained]
    dims = _fit_stage(datasets, hyp0, sig0, levels, config, rng)
    return TrainedModel(dims, kind, order, noise_variant, config, data_hash(traj))


# ---------------------------------------------------------------------------
# Posterior


def posterior(model: TrainedModel, xs, level: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of ``f`` (or Taylor level ``level``).

    ``xs`` has shape (d,) or (n, d); outputs have matching leading shape and a
    trailing state axis.
    """
    xs = np.asarray(xs, dtype=float)
    single = xs.ndim == 1
    X = np.atleast_2d(xs)
    means, vars_ = [], []
    for dm in model.dims:
        m, v = dim_posterior(dm, X, level)
        means.append(m)
        vars_.append(v)
    mean = np.stack(means, axis=-1)
    var = np.stack(vars_, axis=-1)
    return (mean[0], var[0]) if single else (mean, var)


def dim_posterior(dm: DimModel, X: np.ndarray, level: int = 1) -> tuple[np.ndarray, np.ndarray]:
    c = np.atleast_2d(dm.cross(X, level))
    mean = c @ dm.alpha
    V = scipy.linalg.solve_triangular(dm.chol, c.T, lower=True)
    prior = np.diag(dm.level_kernel(level)(X, X)) if dm.mode == "adapted" else np.full(
        X.shape[0], dm.level_hypers(level).variance
    )
    var = prior - np.sum(V**2, axis=0)
    return mean, np.maximum(var, 0.0)


def posterior_cov(dm: DimModel, X: np.ndarray, level: int = 1) -> np.ndarray:
    """Joint posterior covariance of ``f_u`` (level ``level``) at the rows of ``X``."""
    c = np.atleast_2d(dm.cross(X, level))
    V = scipy.linalg.solve_triangular(dm.chol, c.T, lower=True)
    return dm.level_kernel(level)(X, X) - V.T @ V


def mean_field(model: TrainedModel) -> Callable:
    """Posterior-mean vector field ``x -> mu(x)``; Taylor models give levels (P, ..., d)."""
    dims = model.dims
    levels = model.levels if model.is_taylor else 1
    weights = [[dm.point_weights(dm.alpha, l) for l in range(1, levels + 1)] for dm in dims]
    kernels = [[dm.level_kernel(l) for l in range(1, levels + 1)] for dm in dims]
    inputs = [dm.dataset.inputs for dm in dims]

    def f(x):
        x = np.asarray(x, dtype=float)
        X = np.atleast_2d(x)
        out = np.empty((levels, X.shape[0], len(dims)))
        for u in range(len(dims)):
            for l in range(levels):
                out[l, :, u] = kernels[u][l](X, inputs[u]) @ weights[u][l]
        out = out.reshape((levels,) + x.shape)
        return out if model.is_taylor else out[0]

    return f


# ---------------------------------------------------------------------------
# Persistence


def save_model(model: TrainedModel, path) -> None:
    payload = {
        "kind": model.kind.value,
        "order": model.order,
        "noise_variant": model.noise_variant,
        "taylor_mode": model.config.taylor_mode,
        "seed": model.config.seed,
        "jitter": model.config.jitter,
        "data_hash": model.data_hash,
        "dims": [
            {
                "hypers": [h.to_dict() for h in dm.hypers],
                "log_sigma": dm.log_sigma,
                "levels": dm.levels,
                "mode": dm.mode,
            }
            for dm in model.dims
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_model(path, traj: Trajectory) -> TrainedModel:
    """Rebuild a saved model on its training trajectory (hash-checked)."""
    payload = json.loads(Path(path).read_text())
    if payload["data_hash"] != data_hash(traj):
        raise ModelMismatchError(
            f"model was trained on data {payload['data_hash']}, got {data_hash(traj)}"
        )
    kind = SchemeKind.parse(payload["kind"])
    config = TrainConfig(
        jitter=payload["jitter"], seed=payload["seed"], taylor_mode=payload["taylor_mode"]
    )
    datasets = build_datasets(traj, kind, payload["order"], payload["noise_variant"])
    dims = []
    for ds, dd in zip(datasets, payload["dims"]):
        dm = DimModel(
            ds,
            [ARDHypers.from_dict(h) for h in dd["hypers"]],
            dd["log_sigma"],
            dd["levels"],
            dd["mode"],
        )
        dims.append(_finalize(dm, config.jitter))
    return TrainedModel(dims, kind, payload["order"], payload["noise_variant"], config, payload["data_hash"])
