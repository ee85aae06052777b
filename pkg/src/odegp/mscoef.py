"""Variable-step multistep coefficients (Adams-Bashforth, Adams-Moulton, BDF).

Every row of a scheme realises

    sum_j a[n, j] x[n + j] = sum_j b[n, j] f(x[n + j]),    j = 0..M,

on the window ``t[n], ..., t[n + M]`` of an arbitrary grid.  The free
coefficients of each row are obtained by imposing exactness on the monomials
``((t - t[n]) / s)**p`` for ``p = 0..P``, where ``s`` is the mean step of the
window.  The normalisation is ``a[n, M] = 1``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynsys import TimeGrid


class SchemeKind(str, enum.Enum):
    AB = "AB"
    AM = "AM"
    BDF = "BDF"
    TAYLOR = "Taylor"

    @classmethod
    def parse(cls, value) -> "SchemeKind":
        if isinstance(value, cls):
            return value
        for k in cls:
            if str(value).strip().lower() == k.value.lower():
                return k
        raise ValueError(f"unknown scheme kind {value!r}")


SUPPORTED_ORDERS = (1, 2, 3)


def steps_for(kind, order: int) -> int:
    """Number of steps M of the (kind, order) method.

    AM 1 is implicit Euler and AM 2 the trapezoidal rule, both one-step.
    """
    kind = SchemeKind.parse(kind)
    if order not in SUPPORTED_ORDERS or kind is SchemeKind.TAYLOR:
        raise ValueError(f"unsupported multistep method ({kind.value}, {order})")
    if kind is SchemeKind.AM:
        return {1: 1, 2: 1, 3: 2}[order]
    return order


class SingularWindowError(ValueError):
    pass


@dataclass(frozen=True)
class MultistepScheme:
    """Coefficient rows on a grid; ``a`` and ``b`` have shape (N - M, M + 1)."""

    kind: SchemeKind
    order: int
    steps: int
    a: np.ndarray
    b: np.ndarray
    grid: TimeGrid

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    @property
    def label(self) -> str:
        return f"{self.kind.value}{self.order}"


def _solve_row(kind: SchemeKind, order: int, M: int, tau: np.ndarray):
    """Coefficients for one window with scaled nodes ``tau`` (tau[0] = 0).

    Returns ``a`` and the scaled ``b`` (to be multiplied by the window scale).
    """
    P = order
    a = np.zeros(M + 1)
    a[M] = 1.0
    free_a: list[int] = []
    if kind in (SchemeKind.AB, SchemeKind.AM):
        a[M - 1] = -1.0
        if kind is SchemeKind.AB:
            free_b = list(range(M))
        elif order == 1:
            free_b = [M]
        else:
            free_b = list(range(M + 1))
    else:
        free_a = list(range(M))
        free_b = [M]

    # Condition p: sum_j a_j tau_j^p - sum_j b_j p tau_j^(p-1) = 0
    powers = range(0 if free_a else 1, P + 1)
    rows, rhs = [], []
    for p in powers:
        tp = tau**p
        dq = p * tau ** (p - 1) if p > 0 else np.zeros_like(tau)
        row = [tp[j] for j in free_a] + [-dq[j] for j in free_b]
        fixed = sum(a[j] * tp[j] for j in range(M + 1) if j not in free_a)
        rows.append(row)
        rhs.append(-fixed)
    A = np.array(rows, dtype=float)
    rhs = np.array(rhs, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise AssertionError("order conditions do not match the number of unknowns")
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise SingularWindowError("degenerate grid window") from None
    if not np.all(np.isfinite(sol)):
        raise SingularWindowError("degenerate grid window")
    b = np.zeros(M + 1)
    for k, j in enumerate(free_a):
        a[j] = sol[k]
    for k, j in enumerate(free_b):
        b[j] = sol[len(free_a) + k]
    return a, b


def generate_scheme(kind, order: int, grid: TimeGrid) -> MultistepScheme:
    kind = SchemeKind.parse(kind)
    M = steps_for(kind, order)
    t = grid.times
    if t.size < M + 1:
        raise ValueError(f"{kind.value}{order} needs at least {M + 1} grid points, got {t.size}")
    n_rows = t.size - M
    A = np.empty((n_rows, M + 1))
    B = np.empty((n_rows, M + 1))
    for n in range(n_rows):
        window = t[n : n + M + 1]
        s = (window[-1] - window[0]) / M
        tau = (window - window[0]) / s
        a, b_scaled = _solve_row(kind, order, M, tau)
        A[n] = a
        B[n] = b_scaled * s
    A.setflags(write=False)
    B.setflags(write=False)
    return MultistepScheme(kind, order, M, A, B, grid)


def consistency_residual(scheme: MultistepScheme, degree: int | None = None) -> np.ndarray:
    """Per-row max residual of the order conditions up to ``degree`` (default P)."""
    P = scheme.order if degree is None else degree
    t = scheme.grid.times
    M = scheme.steps
    out = np.zeros(scheme.n_rows)
    for n in range(scheme.n_rows):
        window = t[n : n + M + 1]
        s = (window[-1] - window[0]) / M
        tau = (window - window[0]) / s
        for p in range(P + 1):
            q = tau**p
            dq = p * tau ** (p - 1) / s if p > 0 else np.zeros_like(tau)
            r = abs(scheme.a[n] @ q - scheme.b[n] @ dq)
            out[n] = max(out[n], r)
    return out


def verify_consistency(scheme: MultistepScheme, degree: int | None = None) -> float:
    """Largest order-condition residual over all rows and degrees ``0..degree``."""
    return float(consistency_residual(scheme, degree).max(initial=0.0))


def is_explicit(scheme: MultistepScheme) -> bool:
    return bool(np.all(scheme.b[:, -1] == 0.0))


def local_error_weights(scheme: MultistepScheme) -> np.ndarray:
    """``sum_j |a_jn| + |b_jn|`` per row."""
    return np.abs(scheme.a).sum(axis=1) + np.abs(scheme.b).sum(axis=1)


def dump_scheme_csv(scheme: MultistepScheme, path) -> None:
    M = scheme.steps
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n"] + [f"a{j}" for j in range(M + 1)] + [f"b{j}" for j in range(M + 1)])
        for n in range(scheme.n_rows):
            w.writerow([n] + [f"{v:.17g}" for v in scheme.a[n]] + [f"{v:.17g}" for v in scheme.b[n]])


def textbook_coefficients(kind, order: int, h: float = 1.0):
    """Classical fixed-step coefficients ``(a, b)`` in ascending time order."""
    kind = SchemeKind.parse(kind)
    table = {
        (SchemeKind.AB, 1): ([-1, 1], [1, 0]),
        (SchemeKind.AB, 2): ([0, -1, 1], [-1 / 2, 3 / 2, 0]),
        (SchemeKind.AB, 3): ([0, 0, -1, 1], [5 / 12, -16 / 12, 23 / 12, 0]),
        (SchemeKind.AM, 1): ([-1, 1], [0, 1]),
        (SchemeKind.AM, 2): ([-1, 1], [1 / 2, 1 / 2]),
        (SchemeKind.AM, 3): ([0, -1, 1], [-1 / 12, 8 / 12, 5 / 12]),
        (SchemeKind.BDF, 1): ([-1, 1], [0, 1]),
        (SchemeKind.BDF, 2): ([1 / 3, -4 / 3, 1], [0, 0, 2 / 3]),
        (SchemeKind.BDF, 3): ([-2 / 11, 9 / 11, -18 / 11, 1], [0, 0, 0, 6 / 11]),
    }
    a, b = table[(kind, order)]
    return np.array(a, dtype=float), np.array(b, dtype=float) * h

