"""ARD kernels, Lie-derivative kernels and random Fourier features.

All Gram functions take point sets ``X`` of shape (n, d) and ``Y`` of shape
(m, d) and return an (n, m) matrix.  Pointwise wrappers accept d-vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class ARDHypers:
    """Squared-exponential ARD hyperparameters stored as logs."""

    log_variance: float
    log_lengthscales: np.ndarray

    def __post_init__(self):
        ll = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float)).copy()
        ll.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", ll)
        object.__setattr__(self, "log_variance", float(self.log_variance))

    @classmethod
    def from_natural(cls, variance, lengthscales) -> "ARDHypers":
        if not variance > 0 or not np.all(np.asarray(lengthscales, dtype=float) > 0):
            raise ValueError("variance and lengthscales must be positive")
        return cls(np.log(variance), np.log(np.atleast_1d(lengthscales)))

    @classmethod
    def from_vector(cls, theta) -> "ARDHypers":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[0], theta[1:])

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def dim(self) -> int:
        return self.log_lengthscales.size

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.log_variance], self.log_lengthscales])

    def to_dict(self) -> dict:
        return {
            "log_variance": self.log_variance,
            "log_lengthscales": [float(v) for v in self.log_lengthscales],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ARDHypers":
        return cls(d["log_variance"], np.array(d["log_lengthscales"], dtype=float))


def hypers_to_json(hypers: Sequence[ARDHypers], **extra) -> str:
    return json.dumps({"hypers": [h.to_dict() for h in hypers], **extra}, sort_keys=True)


def hypers_from_json(text: str) -> list[ARDHypers]:
    return [ARDHypers.from_dict(d) for d in json.loads(text)["hypers"]]


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def _diffs(X, Y) -> np.ndarray:
    """Pairwise differences, shape (n, m, d)."""
    return _as_points(X)[:, None, :] - _as_points(Y)[None, :, :]


def scaled_sqdist(X, Y, lengthscales) -> np.ndarray:
    """Squared distances of ``X / l`` and ``Y / l`` via the dot-product expansion."""
    A = _as_points(X) / lengthscales
    B = _as_points(Y) / lengthscales
    D = np.einsum("nd,nd->n", A, A)[:, None] + np.einsum("md,md->m", B, B)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(D, 0.0)


def ard_gram(h: ARDHypers, X, Y) -> np.ndarray:
    return h.variance * np.exp(-0.5 * scaled_sqdist(X, Y, h.lengthscales))


def ard_eval(h: ARDHypers, x, y) -> float:
    return float(ard_gram(h, x, y)[0, 0])


def ard_gram_grads(h: ARDHypers, X) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gram matrix on ``X`` and its derivatives w.r.t. ``h.vector()``."""
    D = _diffs(X, X)
    R2 = (D / h.lengthscales) ** 2
    K = h.variance * np.exp(-0.5 * R2.sum(axis=-1))
    return K, [K] + [K * R2[..., j] for j in range(h.dim)]


def ard_diag(h: ARDHypers, X) -> np.ndarray:
    return np.full(_as_points(X).shape[0], h.variance)


# Lie-derivative kernels
#
# With per-dimension base kernels k_1^i (variance s_i, lengthscales l_i), the
# kernel of the l+1 Lie derivative of dimension i is
#     k^{l+1}_i(x, y) = sum_j d/dx_j d/dy_j [k^l_i(x, y)] * k_1^j(x, y).
# Every term is a polynomial in r = x - y times a Gaussian in r, so orders 2
# and 3 have closed forms.


def _precisions(base: Sequence[ARDHypers]) -> np.ndarray:
    """``P[i, k] = 1 / l_ik^2``."""
    return np.array([1.0 / h.lengthscales**2 for h in base])


def adapted_k2_gram(base: Sequence[ARDHypers], i: int, X, Y) -> np.ndarray:
    D = _diffs(X, Y)
    prec = _precisions(base)
    var = np.array([h.variance for h in base])
    d = prec.shape[1]
    out = np.zeros(D.shape[:2])
    for j in range(d):
        beta = prec[i] + prec[j]
        A = 1.0 / prec[i, j]
        E = np.exp(-0.5 * np.einsum("nmk,k->nm", D**2, beta))
        out += var[j] * prec[i, j] ** 2 * (A - D[..., j] ** 2) * E
    return var[i] * out


def adapted_k3_gram(base: Sequence[ARDHypers], i: int, X, Y) -> np.ndarray:
    D = _diffs(X, Y)
    D2 = D**2
    prec = _precisions(base)
    var = np.array([h.variance for h in base])
    d = prec.shape[1]
    out = np.zeros(D.shape[:2])
    for j in range(d):
        beta = prec[i] + prec[j]
        A = 1.0 / prec[i, j]
        c = var[j] * prec[i, j] ** 2
        for l in range(d):
            bl = beta[l]
            if l == j:
                u2 = D2[..., l]
                G = bl**2 * u2**2 - (5.0 * bl + bl**2 * A) * u2 + 2.0 + bl * A
            else:
                G = (A - D2[..., j]) * (bl - bl**2 * D2[..., l])
            E = np.exp(-0.5 * np.einsum("nmk,k->nm", D2, beta + prec[l]))
            out += c * var[l] * G * E
    return var[i] * out


def taylor_adapted_k2(base: Sequence[ARDHypers], i: int, x, y) -> float:
    return float(adapted_k2_gram(base, i, x, y)[0, 0])


def taylor_adapted_k3(base: Sequence[ARDHypers], i: int, x, y) -> float:
    return float(adapted_k3_gram(base, i, x, y)[0, 0])


def adapted_level_gram(base: Sequence[ARDHypers], i: int, level: int, X, Y) -> np.ndarray:
    if level == 1:
        return ard_gram(base[i], X, Y)
    if level == 2:
        return adapted_k2_gram(base, i, X, Y)
    if level == 3:
        return adapted_k3_gram(base, i, X, Y)
    raise ValueError("adapted kernels are available for levels 1 to 3 only")


def lie_kernel_step(
    k_l: Callable[[np.ndarray, np.ndarray], float],
    base_kernels: Sequence[Callable[[np.ndarray, np.ndarray], float]],
    x,
    y,
    step=1e-4,
) -> float:
    """One step of the Lie-derivative kernel recursion.

    Mixed derivatives ``d/dx_j d/dy_j k_l`` are taken by central differences
    with per-dimension ``step``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x.size
    step = np.broadcast_to(np.asarray(step, dtype=float), (d,))
    total = 0.0
    for j in range(d):
        e = np.zeros(d)
        e[j] = step[j]
        mixed = (k_l(x + e, y + e) - k_l(x + e, y - e) - k_l(x - e, y + e) + k_l(x - e, y - e)) / (
            4.0 * step[j] ** 2
        )
        total += mixed * base_kernels[j](x, y)
    return float(total)


# Random Fourier features


@dataclass(frozen=True)
class RFFBasis:
    """Trigonometric features ``a_i (cos x.w_i, sin x.w_i)``.

    For the ARD kernel all amplitudes equal ``sqrt(variance / S)``.
    """

    frequencies: np.ndarray  # (S, d)
    amplitudes: np.ndarray  # (S,)

    @property
    def size(self) -> int:
        return self.frequencies.shape[0]


def sample_rff(h: ARDHypers, S: int, seed) -> RFFBasis:
    if S < 1:
        raise ValueError("need at least one feature")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((S, h.dim)) / h.lengthscales
    return RFFBasis(W, np.full(S, np.sqrt(h.variance / S)))


def rff_features(basis: RFFBasis, x) -> np.ndarray:
    """Feature vector(s) of length 2S for points ``x`` of shape (d,) or (n, d)."""
    z = np.asarray(x, dtype=float) @ basis.frequencies.T
    return np.concatenate([basis.amplitudes * np.cos(z), basis.amplitudes * np.sin(z)], axis=-1)


def ard_spectral_batch(h: ARDHypers, S: int, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """``n`` independent ARD bases: frequencies (n, S, d), amplitudes (n, S)."""
    W = rng.standard_normal((n, S, h.dim)) / h.lengthscales
    return W, np.full((n, S), np.sqrt(h.variance / S))


def lie_spectral_batch(
    base: Sequence[ARDHypers], i: int, level: int, S: int, n: int, rng
) -> tuple[np.ndarray, np.ndarray]:
    """Random features for the adapted level-``level`` kernel of dimension ``i``.

    Uses ``d/dx_j d/dy_j cos(w.(x - y)) = w_j^2 cos(w.(x - y))`` and the
    product rule for kernels: each recursion step picks a dimension ``j``
    uniformly, adds a frequency drawn from the spectrum of ``k_1^j`` and
    multiplies the feature weight by ``d * w_j^2 * s_j``.
    """
    d = base[0].dim
    W = rng.standard_normal((n, S, d)) / base[i].lengthscales
    weight = np.full((n, S), base[i].variance)
    for _ in range(level - 1):
        J = rng.integers(0, d, size=(n, S))
        ls = np.array([h.lengthscales for h in base])[J]  # (n, S, d)
        var = np.array([h.variance for h in base])[J]
        wj = np.take_along_axis(W, J[..., None], axis=-1)[..., 0]
        weight = weight * d * wj**2 * var
        W = W + rng.standard_normal((n, S, d)) / ls
    return W, np.sqrt(weight / S)
