"""Benchmark systems, time grids, reference simulation and trajectory CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class TrajectoryFormatError(ValueError):
    """Base class for malformed trajectory files."""


class HeaderError(TrajectoryFormatError):
    pass


class TimeOrderError(TrajectoryFormatError):
    pass


class RaggedRowError(TrajectoryFormatError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time stamps."""

    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two stamps")
        if not np.all(np.isfinite(t)):
            raise ValueError("time stamps must be finite")
        if np.any(np.diff(t) <= 0):
            raise TimeOrderError("time stamps must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self) -> int:
        return self.times.size

    def head(self, n: int) -> "TimeGrid":
        return TimeGrid(self.times[:n])


@dataclass(frozen=True)
class Trajectory:
    """States sampled on a time grid; ``states`` has shape (N, d)."""

    grid: TimeGrid
    states: np.ndarray
    noisy: bool = False

    def __post_init__(self):
        x = np.array(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != len(self.grid) or x.shape[1] < 1:
            raise ValueError(
                f"states of shape {x.shape} do not match a grid of length {len(self.grid)}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("trajectory contains non-finite states")
        x.setflags(write=False)
        object.__setattr__(self, "states", x)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.states.shape[0]

    def head(self, n: int) -> "Trajectory":
        return Trajectory(self.grid.head(n), self.states[:n], self.noisy)


@dataclass(frozen=True)
class DynamicsField:
    """Autonomous vector field ``x -> f(x)``.

    ``fn`` must accept arrays whose last axis is the state so that batches of
    states can be evaluated in one call.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    dim: int
    name: str = "field"

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


def dho_rhs(state):
    """Cubic damped harmonic oscillator."""
    s = np.asarray(state, dtype=float)
    x, y = s[..., 0], s[..., 1]
    return np.stack([-0.1 * x**3 + 2.0 * y**3, -2.0 * x**3 - 0.1 * y**3], axis=-1)


VDP_MU = 0.5


def vdp_rhs(state):
    """Van der Pol oscillator with mu = 0.5."""
    s = np.asarray(state, dtype=float)
    x, y = s[..., 0], s[..., 1]
    return np.stack([y, -x + VDP_MU * y * (1.0 - x**2)], axis=-1)


SYSTEMS = {
    "dho": DynamicsField(dho_rhs, 2, "dho"),
    "vdp": DynamicsField(vdp_rhs, 2, "vdp"),
}

# Initial state used by the simulated experiments.
DEFAULT_X0 = {"dho": (2.0, 0.0), "vdp": (2.0, 0.0)}


def get_system(name: str) -> DynamicsField:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; expected one of {sorted(SYSTEMS)}") from None


def regular_grid(t0: float, n_steps: int, h: float) -> TimeGrid:
    """``n_steps + 1`` equidistant stamps starting at ``t0``."""
    if h <= 0:
        raise ValueError("step size must be positive")
    return TimeGrid(t0 + h * np.arange(n_steps + 1))


def irregular_step(h: float, b: float, w):
    """Step ``h * (1 + (w - 1/2) * b)`` for uniform draws ``w`` in [0, 1]."""
    return h * (1.0 + (np.asarray(w, dtype=float) - 0.5) * b)


def irregular_grid(t0: float, n_steps: int, h: float, b: float, seed: int) -> TimeGrid:
    """Grid whose steps are drawn uniformly from ``[h(1 - b/2), h(1 + b/2)]``."""
    if h <= 0:
        raise ValueError("step size must be positive")
    if not 0.0 <= b < 2.0:
        raise ValueError(f"irregularity b={b} must lie in [0, 2) to keep steps positive")
    rng = np.random.default_rng(seed)
    steps = irregular_step(h, b, rng.uniform(0.0, 1.0, size=n_steps))
    return TimeGrid(np.concatenate([[t0], t0 + np.cumsum(steps)]))


def simulate_reference(
    field: Callable,
    x0: Sequence[float],
    grid: TimeGrid,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> Trajectory:
    """Integrate ``field`` with the adaptive RK4(5) solver, reporting at ``grid``."""
    from .integrate import SolverFailure, rk45

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    res = rk45(field, (grid.times[0], grid.times[-1]), x0, rtol=rtol, atol=atol, t_eval=grid.times)
    if not res.ok:
        raise SolverFailure(f"reference simulation failed at output index {res.failed_index}")
    return Trajectory(grid, res.states, noisy=False)


def add_noise(traj: Trajectory, sigma, seed: int) -> Trajectory:
    """Add i.i.d. Gaussian observation noise with per-dimension std ``sigma``."""
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (traj.dim,))
    if np.any(sigma < 0):
        raise ValueError("noise standard deviations must be non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(traj.states.shape) * sigma
    return Trajectory(traj.grid, traj.states + noise, noisy=True)


def save_csv(traj: Trajectory, path) -> None:
    path = Path(path)
    header = ["t"] + [f"x{i + 1}" for i in range(traj.dim)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def load_csv(path, noisy: bool = True) -> Trajectory:
    """Read a ``t,x1,...,xd`` file.

    Raises a distinct :class:`TrajectoryFormatError` subclass for a bad header,
    ragged rows and non-increasing time stamps.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise HeaderError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    d = len(header) - 1
    if d < 1 or header[0] != "t" or header[1:] != [f"x{i + 1}" for i in range(d)]:
        raise HeaderError(f"{path}: expected header 't,x1,...,xd', got {','.join(header)}")
    data = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != d + 1:
            raise RaggedRowError(f"{path}:{lineno}: expected {d + 1} fields, got {len(r)}")
        try:
            data.append([float(c) for c in r])
        except ValueError as exc:
            raise TrajectoryFormatError(f"{path}:{lineno}: {exc}") from None
    if len(data) < 2:
        raise TrajectoryFormatError(f"{path}: need at least two rows")
    arr = np.array(data)
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise TimeOrderError(f"{path}: time column is not strictly increasing")
    return Trajectory(TimeGrid(arr[:, 0]), arr[:, 1:], noisy=noisy)
