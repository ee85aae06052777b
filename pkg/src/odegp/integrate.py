"""Rollouts: variable-step multistep schemes, Taylor steps and Dormand-Prince RK4(5).

Fields are callables mapping states of shape (..., d) to derivatives of the
same shape, so one call can advance a batch of ``n`` trajectories stored as
an (n, d) array.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynsys import TimeGrid, Trajectory
from .mscoef import SchemeKind, generate_scheme, is_explicit, steps_for

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8


class SolverFailure(RuntimeError):
    pass


class EnsembleError(RuntimeError):
    pass


@dataclass
class SolverStats:
    steps: int = 0
    rejected: int = 0
    fevals: int = 0
    newton_iterations: int = 0
    max_accepted_error: float = 0.0  # scaled rk45 error estimate, <= 1 by construction


@dataclass
class RolloutResult:
    """States at every requested time; ``states`` is (N, d) or (N, n, d) for batches.

    ``failed`` flags batch members that diverged or whose implicit solves did
    not converge; ``failed_index`` is the first output index that could not
    be reached by any unfailed member, or ``None``.
    """

    times: np.ndarray
    states: np.ndarray
    stats: SolverStats = field(default_factory=SolverStats)
    failed: np.ndarray | None = None
    failed_index: int | None = None

    @property
    def ok(self) -> bool:
        return self.failed_index is None and (self.failed is None or not np.any(self.failed))

    @property
    def status(self) -> str:
        return "ok" if self.ok else f"solver_failure({self.failed_index})"

    def trajectory(self, member: int | None = None) -> Trajectory:
        x = self.states if member is None else self.states[:, member]
        return Trajectory(TimeGrid(self.times), x)


@dataclass(frozen=True)
class ImplicitSolveConfig:
    tol: float = 1e-10
    max_iter: int = 50
    fd_step: float = 1e-7

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


def _diverged(x: np.ndarray) -> np.ndarray:
    """Per-member divergence flags for a state of shape (d,) or (n, d)."""
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LIMIT)
    return bad.any(axis=-1)


def _initial_step(x, f0, rtol, atol, span) -> float:
    scale = atol + rtol * np.abs(x)
    d0 = np.sqrt(np.mean((x / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    if d1 < 1e-5:
        # (near) stationary start: try the whole span and let step control cut it
        h0 = span
    elif d0 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    return float(min(h0, span))


def rk45(
    field: Callable,
    t_span: tuple[float, float],
    x0,
    rtol: float = 1e-6,
    atol: float = 1e-8,
    t_eval: Sequence[float] | None = None,
    first_step: float | None = None,
) -> RolloutResult:
    """Adaptive Dormand-Prince integration reporting at ``t_eval``.

    Steps are capped so that every output time is hit exactly.  ``x0`` of
    shape (n, d) integrates ``n`` members with a shared step size; the error
    norm is the largest per-member RMS, and members that blow up are frozen
    and flagged instead of stalling the others.
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    t_out = np.array([t0, t1] if t_eval is None else t_eval, dtype=float)
    if t_out[0] < t0 or t_out[-1] > t1 or np.any(np.diff(t_out) <= 0):
        raise ValueError("output times must be increasing and inside t_span")
    batched = x.ndim == 2
    n_mem = x.shape[0] if batched else 1
    failed = np.zeros(n_mem, dtype=bool)
    fail_at = np.zeros(n_mem, dtype=int)
    stats = SolverStats()
    span = t1 - t0
    min_step = 1e-14 * span

    out = np.empty((t_out.size,) + x.shape)
    k = 0
    while k < t_out.size and t_out[k] <= t0:
        out[k] = x
        k += 1

    def feval(y):
        stats.fevals += 1
        with np.errstate(all="ignore"):
            return np.asarray(field(y), dtype=float)

    def err_norm(err, y_old, y_new):
        scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
        per = np.sqrt(np.mean((err / scale) ** 2, axis=-1))
        live = np.atleast_1d(per)[~failed]
        if not np.all(np.isfinite(live)):
            return np.inf
        return float(live.max()) if live.size else 0.0

    t = t0
    fx = feval(x)
    h = first_step if first_step is not None else _initial_step(x, fx, rtol, atol, span)
    failed_index = None
    while k < t_out.size:
        target = t_out[k]
        if h < min_step:
            failed_index = k
            break
        h_try = min(h, target - t)
        capped = h_try < h
        hits = h_try == target - t
        K = [fx]
        for s in range(1, 7):
            y = x + h_try * sum(a * K[j] for j, a in enumerate(_A[s]) if a != 0.0)
            K.append(feval(y))
        x_new = x + h_try * sum(b * K[j] for j, b in enumerate(_B5) if b != 0.0)
        err = h_try * sum(e * K[j] for j, e in enumerate(_E) if e != 0.0)

        if batched:
            err[failed] = 0.0
            x_new[failed] = x[failed]
        en = err_norm(err, x, x_new)
        if not np.isfinite(en):
            # a non-finite trial step is treated as a maximal rejection
            stats.rejected += 1
            h = h_try * MIN_FACTOR
            continue
        if en <= 1.0:
            blown = np.atleast_1d(_diverged(x_new)) & ~failed
            if blown.any():
                if not batched:
                    failed[0] = True
                    failed_index = k
                    break
                failed |= blown
                fail_at[blown] = k
                if failed.all():
                    failed_index = k
                    break
                x_new[blown] = x[blown]
            t = target if hits else t + h_try
            x = x_new
            fx = K[6]
            if batched:
                fx[failed] = 0.0
            stats.steps += 1
            stats.max_accepted_error = max(stats.max_accepted_error, en)
            factor = MAX_FACTOR if en == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * en**-0.2))
            h = max(h, h_try * factor) if capped else h_try * factor
            while k < t_out.size and t >= t_out[k]:
                out[k] = x
                k += 1
        else:
            stats.rejected += 1
            h = h_try * max(MIN_FACTOR, SAFETY * en**-0.2)

    if batched:
        for m in np.flatnonzero(failed):
            out[fail_at[m] :, m] = np.nan
    if failed_index is not None:
        out[k:] = np.nan
    return RolloutResult(t_out, out, stats, failed if batched else failed.copy(), failed_index)


# ---------------------------------------------------------------------------
# Multistep and Taylor rollouts


def _newton_solve(field, bM, hist, z0, cfg: ImplicitSolveConfig, stats: SolverStats, active):
    """Damped Newton on ``z - bM f(z) - hist = 0`` for a batch z of shape (n, d).

    Only ``active`` members are iterated.  Returns the iterate and a
    converged mask.
    """
    z = z0.copy()
    d = z.shape[1]
    eye = np.eye(d)[None]

    # member-wise fields pair row i with sample i, so always evaluate the full batch
    def field_at(zz, idx):
        full = z.copy()
        full[idx] = zz
        return field(full)[idx]

    def residual(zz, idx):
        return zz - bM * field_at(zz, idx) - hist[idx]

    idx = np.flatnonzero(active)
    converged = ~active
    r = residual(z[idx], idx)
    for _ in range(cfg.max_iter + 1):
        rn = np.linalg.norm(r, axis=-1)
        done = rn <= cfg.tol * (1.0 + np.linalg.norm(z[idx], axis=-1))
        converged[idx[done]] = True
        keep = ~done & np.isfinite(rn)
        idx, r, rn = idx[keep], r[keep], rn[keep]
        if idx.size == 0:
            break
        stats.newton_iterations += 1
        J = eye - bM * _fd_jacobian(lambda zz: field_at(zz, idx), z[idx], cfg.fd_step)
        try:
            dz = np.linalg.solve(J, -r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dz = np.stack([np.linalg.lstsq(Ji, -ri, rcond=None)[0] for Ji, ri in zip(J, r)])
        # halve the step until the residual norm decreases
        step = np.ones(idx.size)
        for _ in range(10):
            cand = z[idx] + step[:, None] * dz
            r_c = residual(cand, idx)
            worse = ~(np.linalg.norm(r_c, axis=-1) < rn)
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
        small = np.linalg.norm(step[:, None] * dz, axis=-1) <= cfg.tol * (1.0 + np.linalg.norm(cand, axis=-1))
        z[idx] = cand
        r = r_c
        converged[idx[small]] = True
        keep = ~small
        idx, r = idx[keep], r[keep]
        if idx.size == 0:
            break
    ok = converged & np.all(np.isfinite(z), axis=-1)
    return z, ok


def _fd_jacobian(f, z: np.ndarray, eps: float) -> np.ndarray:
    """Forward-difference Jacobian of a batched field, shape (n, d, d)."""
    n, d = z.shape
    f0 = f(z)
    J = np.empty((n, d, d))
    for j in range(d):
        hj = eps * (1.0 + np.abs(z[:, j]))
        zp = z.copy()
        zp[:, j] += hj
        J[:, :, j] = (f(zp) - f0) / hj[:, None]
    return J


def rollout_multistep(
    field: Callable,
    kind,
    order: int,
    grid: TimeGrid,
    init,
    solve: ImplicitSolveConfig = ImplicitSolveConfig(),
) -> RolloutResult:
    """Advance ``sum_j a_j x_{n+j} = sum_j b_j f(x_{n+j})`` along ``grid``.

    ``init`` holds the first M + 1 states, shape (M+1, d) or (M+1, n, d) for
    a batch.  Implicit steps use damped Newton started from an explicit-Euler
    predictor.
    """
    scheme = generate_scheme(kind, order, grid)
    M = scheme.steps
    init = np.asarray(init, dtype=float)
    if init.shape[0] != M + 1:
        raise ValueError(f"{scheme.label} needs {M + 1} initial states, got {init.shape[0]}")
    batched = init.ndim == 3
    X = np.full((len(grid),) + init.shape[1:], np.nan)
    X[: M + 1] = init
    xs = X if batched else X[:, None, :]
    n_mem, d = xs.shape[1], xs.shape[2]
    stats = SolverStats()
    failed = np.zeros(n_mem, dtype=bool)
    failed_index = None

    def f(z):
        stats.fevals += 1
        with np.errstate(all="ignore"):
            return np.asarray(field(z if batched else z[0]), dtype=float).reshape(z.shape)

    F = np.full_like(xs, np.nan)
    for j in range(M + 1):
        F[j] = f(xs[j])
    explicit = is_explicit(scheme)
    steps = grid.steps
    # the init window already fills row 0
    for n in range(1, scheme.n_rows):
        a, b = scheme.a[n], scheme.b[n]
        hist = -sum(a[j] * xs[n + j] for j in range(M)) + sum(b[j] * F[n + j] for j in range(M))
        if explicit:
            new = hist
        else:
            pred = xs[n + M - 1] + steps[n + M - 1] * F[n + M - 1]
            pred = np.where(np.isfinite(pred), pred, 0.0)
            new, ok = _newton_solve(f, b[M], hist, pred, solve, stats, ~failed)
            failed |= ~ok
        stats.steps += 1
        failed |= _diverged(new)
        new = np.where(failed[:, None], np.nan, new)
        xs[n + M] = new
        if failed.all():
            failed_index = n + M
            break
        F[n + M] = f(np.where(failed[:, None], 0.0, new))
        F[n + M][failed] = np.nan
    states = xs if batched else xs[:, 0, :]
    if not batched and failed[0] and failed_index is None:
        failed_index = int(np.argmax(~np.isfinite(states).all(axis=-1)))
    return RolloutResult(grid.times, states, stats, failed if batched else failed.copy(), failed_index)


def rollout_taylor(levels: Callable | Sequence[Callable], order: int, grid: TimeGrid, x0) -> RolloutResult:
    """``x_{n+1} = x_n + sum_l h_n^l / l! f^l(x_n)``.

    ``levels`` is either a list of P fields or a single callable returning the
    stacked level values with a leading axis of length P.
    """
    x = np.array(x0, dtype=float)
    batched = x.ndim == 2
    stats = SolverStats()
    out = np.full((len(grid),) + x.shape, np.nan)
    out[0] = x
    fails = np.zeros(x.shape[0] if batched else 1, dtype=bool)
    coeffs = [[h**l / math.factorial(l) for l in range(1, order + 1)] for h in grid.steps]

    def eval_levels(z):
        stats.fevals += 1
        with np.errstate(all="ignore"):
            if callable(levels):
                return np.asarray(levels(z), dtype=float)[:order]
            return np.stack([np.asarray(g(z), dtype=float) for g in levels[:order]])

    failed_index = None
    for n, c in enumerate(coeffs):
        vals = eval_levels(np.where(np.isfinite(x), x, 0.0))
        x = x + sum(cl * v for cl, v in zip(c, vals))
        stats.steps += 1
        fails |= np.atleast_1d(_diverged(x))
        if batched:
            x[fails] = np.nan
        out[n + 1] = x
        if fails.all():
            failed_index = n + 1
            break
    return RolloutResult(grid.times, out, stats, fails, failed_index)


# ---------------------------------------------------------------------------
# Ensembles


@dataclass(frozen=True)
class PredictSpec:
    """Prediction integrator: ``rk45`` or the training scheme itself."""

    integrator: str = "rk45"  # "rk45" | "training"
    rtol: float = 1e-6
    atol: float = 1e-8

    def __post_init__(self):
        if self.integrator not in ("rk45", "training"):
            raise ValueError(f"unknown prediction integrator {self.integrator!r}")


@dataclass
class EnsembleResult:
    mean: np.ndarray  # (N, d)
    variance: np.ndarray  # (N, d)
    n_failed: int
    n_samples: int
    stats: SolverStats


def rollout_field(field_fn, kind, order: int, grid: TimeGrid, init, spec: PredictSpec) -> RolloutResult:
    """Roll out a (possibly batched) field with the requested integrator.

    ``init`` holds the initial states for the training scheme (M + 1 rows;
    Taylor and rk45 use only the first).  For Taylor training schemes with
    ``spec.integrator == "training"``, ``field_fn`` must return stacked levels;
    with rk45 only the first level is used.
    """
    kind = SchemeKind.parse(kind)
    init = np.asarray(init, dtype=float)
    if spec.integrator == "rk45":
        if kind is SchemeKind.TAYLOR:
            inner = field_fn

            def first_level(z):
                return np.asarray(inner(z))[0]

            field_fn = first_level
        return rk45(field_fn, (grid.times[0], grid.times[-1]), init[0], spec.rtol, spec.atol, grid.times)
    if kind is SchemeKind.TAYLOR:
        return rollout_taylor(field_fn, order, grid, init[0])
    return rollout_multistep(field_fn, kind, order, grid, init[: steps_for(kind, order) + 1])


def init_window(kind, order: int) -> int:
    """Number of leading data states a rollout of (kind, order) consumes."""
    kind = SchemeKind.parse(kind)
    return 1 if kind is SchemeKind.TAYLOR else steps_for(kind, order) + 1


def ds_rollout_ensemble(
    model,
    n_samples: int,
    grid: TimeGrid,
    init,
    spec: PredictSpec = PredictSpec(),
    seed: int = 0,
    n_features: int = 256,
    max_fail_fraction: float = 0.5,
) -> EnsembleResult:
    """Draw ``n_samples`` posterior dynamics, roll each out and aggregate.

    ``init`` is the (k, d) array of leading data states.  Members that
    diverge or fail an implicit solve are excluded from the statistics.
    """
    from .sampler import draw

    sample = draw(model, n_features, n_samples, seed)
    init = np.asarray(init, dtype=float)
    batch_init = np.repeat(init[:, None, :], n_samples, axis=1)
    res = rollout_field(sample, model.kind, model.order, grid, batch_init, spec)
    failed = np.asarray(res.failed, dtype=bool) | ~np.all(np.isfinite(res.states), axis=(0, 2))
    n_failed = int(failed.sum())
    if n_failed > max_fail_fraction * n_samples:
        raise EnsembleError(f"{n_failed} of {n_samples} sampled rollouts failed")
    good = res.states[:, ~failed]
    mean = good.mean(axis=1)
    var = good.var(axis=1) if good.shape[1] > 1 else np.zeros_like(mean)
    if n_failed:
        log.info("%d of %d sampled rollouts failed and were excluded", n_failed, n_samples)
    return EnsembleResult(mean, var, n_failed, n_samples, res.stats)


def mean_rollout(model, grid: TimeGrid, init, spec: PredictSpec = PredictSpec()) -> RolloutResult:
    """Roll out the posterior-mean field."""
    from .gpcore import mean_field

    return rollout_field(mean_field(model), model.kind, model.order, grid, np.asarray(init, dtype=float), spec)
