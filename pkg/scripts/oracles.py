"""Independent reference values for the test suite.

Every value is computed with exact rational arithmetic or a closed form,
without importing the package, and printed so it can be frozen into tests.
"""

from fractions import Fraction as Fr
import math


def solve(rows, rhs):
    """Exact Gauss-Jordan elimination over the rationals."""
    n = len(rows)
    A = [[Fr(v) for v in r] + [Fr(b)] for r, b in zip(rows, rhs)]
    for c in range(n):
        p = next(r for r in range(c, n) if A[r][c] != 0)
        A[c], A[p] = A[p], A[c]
        A[c] = [v / A[c][c] for v in A[c]]
        for r in range(n):
            if r != c and A[r][c] != 0:
                A[r] = [x - A[r][c] * y for x, y in zip(A[r], A[c])]
    return [A[r][n] for r in range(n)]


def classical():
    # AB2 on nodes 0, 1, 2 with a = (0, -1, 1): exact for q = t, t^2
    b0, b1 = solve([[1, 1], [0, 2]], [1, 3])
    print("AB2 b =", b0, b1)
    # AB3 nodes 0..3, a = (0, 0, -1, 1): exact for t, t^2, t^3
    print("AB3 b =", solve([[1, 1, 1], [0, 2, 4], [0, 3, 12]], [1, 5, 19]))
    # AM3 nodes 0..2, a = (0, -1, 1)
    print("AM3 b =", solve([[1, 1, 1], [0, 2, 4], [0, 3, 12]], [1, 3, 7]))
    # BDF2: a0, a1 free, a2 = 1, b2 free: p = 0, 1, 2
    a0, a1, b2 = solve([[1, 1, 0], [0, 1, -1], [0, 1, -4]], [-1, -2, -4])
    print("BDF2 a, b =", a0, a1, b2)
    a = solve([[1, 1, 1, 0], [0, 1, 2, -1], [0, 1, 4, -6], [0, 1, 8, -27]], [-1, -3, -9, -27])
    print("BDF3 a, b =", a)


def arithmetic():
    print("exp(-1/2) =", repr(math.exp(-0.5)))
    print("BDF2 Y0 on (0, 1, 4) =", Fr(1, 3) * 0 - Fr(4, 3) * 1 + 4)
    print("Taylor gram P=2 h=1 constant kernels =", 1 + Fr(1, 2) ** 2)
    print("nll standard normal N=2, Y=0 =", repr(math.log(2 * math.pi)))
    print("multistep C_eps =", 1 * 1 ** 2 * Fr(1, 100) / 2 * 10 * Fr(21, 10))
    eps = Fr(1, 100) / 2 * 2
    print("Taylor eps, C_eps =", eps, 10 * eps)
    print("Taylor P=2 step of x' = x from 1 =", 1 + Fr(1, 10) + Fr(1, 10) ** 2 / 2)
    print("MSE of errors (1, 3) =", Fr(1 + 9, 2), "RMSE =", 1, 3)
    print("e =", repr(math.e))


def tridiagonal_min_eig(n=10):
    # eigenvalues of tridiag(-1, 2, -1): 2 - 2 cos(k pi / (n + 1))
    print("min eig tridiag n=%d =" % n, repr(2 - 2 * math.cos(math.pi / (n + 1))))


def rk4_vdp(h=1e-4, T=10.0):
    """Fixed-step classical RK4 for the Van der Pol system from (2, 0)."""

    def f(x, y):
        return y, -x + 0.5 * y * (1 - x * x)

    x, y = 2.0, 0.0
    n = int(round(T / h))
    for _ in range(n):
        k1 = f(x, y)
        k2 = f(x + h / 2 * k1[0], y + h / 2 * k1[1])
        k3 = f(x + h / 2 * k2[0], y + h / 2 * k2[1])
        k4 = f(x + h * k3[0], y + h * k3[1])
        x += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    print("VDP RK4 h=1e-4 state at t=10 =", repr(x), repr(y))


if __name__ == "__main__":
    classical()
    arithmetic()
    tridiagonal_min_eig()
    rk4_vdp()
