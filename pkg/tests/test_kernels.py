import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from odegp.kernels import (
    ARDHypers,
    adapted_k2_gram,
    adapted_k3_gram,
    adapted_level_gram,
    ard_diag,
    ard_eval,
    ard_gram,
    ard_gram_grads,
    ard_spectral_batch,
    hypers_from_json,
    hypers_to_json,
    lie_kernel_step,
    lie_spectral_batch,
    rff_features,
    sample_rff,
    scaled_sqdist,
    taylor_adapted_k2,
    taylor_adapted_k3,
)

EXP_MINUS_HALF = 0.6065306597126334

points = hnp.arrays(float, (6, 2), elements=st.floats(-3, 3))
positive = st.floats(0.2, 3.0)


def base_pair(s1=1.3, s2=0.7, l1=(0.9, 1.4), l2=(1.1, 0.6)):
    return [ARDHypers.from_natural(s1, l1), ARDHypers.from_natural(s2, l2)]


def test_ard_unit_distance():
    h = ARDHypers.from_natural(1.0, [1.0])
    assert ard_eval(h, [0.0], [1.0]) == pytest.approx(EXP_MINUS_HALF, rel=1e-14)


def test_ard_diagonal_is_variance():
    h = ARDHypers.from_natural(2.5, [0.3, 4.0])
    X = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_allclose(np.diag(ard_gram(h, X, X)), 2.5, rtol=1e-14)
    np.testing.assert_allclose(ard_diag(h, X), 2.5)


def test_scaled_sqdist_matches_direct():
    rng = np.random.default_rng(1)
    X, Y, ls = rng.normal(size=(7, 3)), rng.normal(size=(5, 3)), rng.uniform(0.5, 2, 3)
    direct = (((X[:, None] - Y[None]) / ls) ** 2).sum(-1)
    np.testing.assert_allclose(scaled_sqdist(X, Y, ls), direct, atol=1e-12)


@given(X=points, var=positive, l1=positive, l2=positive)
def test_ard_gram_psd_and_symmetric(X, var, l1, l2):
    h = ARDHypers.from_natural(var, [l1, l2])
    K = ard_gram(h, X, X)
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() > -1e-9 * var


@given(X=points, shift=hnp.arrays(float, 2, elements=st.floats(-5, 5)))
def test_ard_stationary(X, shift):
    h = ARDHypers.from_natural(1.0, [0.8, 1.7])
    np.testing.assert_allclose(ard_gram(h, X + shift, X + shift), ard_gram(h, X, X), atol=1e-10)


def test_ard_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(6, 2))
    h = ARDHypers.from_natural(1.7, [0.8, 1.3])
    K, grads = ard_gram_grads(h, X)
    np.testing.assert_allclose(K, ard_gram(h, X, X))
    theta = h.vector()
    for k, G in enumerate(grads):
        e = np.zeros_like(theta)
        e[k] = 1e-6
        fd = (ard_gram(ARDHypers.from_vector(theta + e), X, X) - ard_gram(ARDHypers.from_vector(theta - e), X, X)) / 2e-6
        np.testing.assert_allclose(G, fd, atol=1e-8)


def test_hypers_validation_and_json():
    with pytest.raises(ValueError):
        ARDHypers.from_natural(-1.0, [1.0])
    hs = base_pair()
    back = hypers_from_json(hypers_to_json(hs))
    for a, b in zip(hs, back):
        np.testing.assert_array_equal(a.vector(), b.vector())


def _base_kernels(base):
    return [lambda x, y, h=h: ard_eval(h, x, y) for h in base]


@pytest.mark.parametrize("i", [0, 1])
def test_k2_matches_recursion(i):
    base = base_pair()
    kb = _base_kernels(base)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x, y = rng.normal(size=2), rng.normal(size=2)
        ref = lie_kernel_step(kb[i], kb, x, y, step=1e-4)
        assert taylor_adapted_k2(base, i, x, y) == pytest.approx(ref, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("i", [0, 1])
def test_k3_matches_recursion(i):
    base = base_pair()
    kb = _base_kernels(base)
    k2 = lambda x, y: taylor_adapted_k2(base, i, x, y)
    rng = np.random.default_rng(4)
    for _ in range(5):
        x, y = rng.normal(size=2), rng.normal(size=2)
        ref = lie_kernel_step(k2, kb, x, y, step=1e-4)
        assert taylor_adapted_k3(base, i, x, y) == pytest.approx(ref, rel=1e-6, abs=1e-8)


def test_k3_recursion_three_dimensions():
    base = [ARDHypers.from_natural(s, l) for s, l in [(1.0, (1, 2, 0.7)), (0.5, (1.5, 1, 1)), (2.0, (0.8, 0.9, 1.2))]]
    kb = _base_kernels(base)
    k2 = lambda x, y: taylor_adapted_k2(base, 2, x, y)
    x, y = np.array([0.1, -0.3, 0.5]), np.array([0.4, 0.2, -0.1])
    ref = lie_kernel_step(k2, kb, x, y, step=1e-4)
    assert taylor_adapted_k3(base, 2, x, y) == pytest.approx(ref, rel=1e-6)


def test_lie_kernel_of_linear_field_one_dimension():
    # f(x) = c x with c ~ N(0, s) gives Lie derivative c^2 x; its kernel is the
    # product rule d/dx d/dy k1 * k1 on the base kernel.
    base = [ARDHypers.from_natural(1.0, [1.0])]
    x, y = np.array([0.3]), np.array([-0.4])
    r = 0.7
    expected = (1.0 - r**2) * np.exp(-0.5 * r**2) * np.exp(-0.5 * r**2)
    assert taylor_adapted_k2(base, 0, x, y) == pytest.approx(expected, rel=1e-12)


@given(X=points, level=st.sampled_from([1, 2, 3]))
def test_adapted_grams_psd(X, level):
    base = base_pair()
    K = adapted_level_gram(base, 0, level, X, X)
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(K).min() > -1e-8 * np.abs(K).max()


@given(X=points, shift=hnp.arrays(float, 2, elements=st.floats(-5, 5)))
def test_adapted_stationary(X, shift):
    base = base_pair()
    np.testing.assert_allclose(adapted_k3_gram(base, 1, X + shift, X), adapted_k3_gram(base, 1, X, X - shift), atol=1e-9)


def test_adapted_level_range():
    with pytest.raises(ValueError):
        adapted_level_gram(base_pair(), 0, 4, np.zeros((1, 2)), np.zeros((1, 2)))


def test_rff_determinism_and_shape():
    h = ARDHypers.from_natural(2.0, [0.5, 1.5])
    a, b = sample_rff(h, 64, seed=5), sample_rff(h, 64, seed=5)
    np.testing.assert_array_equal(a.frequencies, b.frequencies)
    phi = rff_features(a, np.zeros((3, 2)))
    assert phi.shape == (3, 128)
    # cos^2 + sin^2 = 1 gives the exact variance at every point
    np.testing.assert_allclose((rff_features(a, np.ones(2)) ** 2).sum(), 2.0, rtol=1e-12)


def test_rff_approximates_kernel():
    h = ARDHypers.from_natural(1.5, [0.7, 1.2])
    X = np.random.default_rng(6).normal(size=(8, 2))
    phi = rff_features(sample_rff(h, 40_000, seed=7), X)
    err = np.abs(phi @ phi.T - ard_gram(h, X, X)).max()
    assert err < 6 * 1.5 / np.sqrt(40_000)


def test_ard_spectral_batch_independent_members():
    h = ARDHypers.from_natural(1.0, [1.0, 1.0])
    W, A = ard_spectral_batch(h, 16, 3, np.random.default_rng(0))
    assert W.shape == (3, 16, 2) and A.shape == (3, 16)
    assert not np.allclose(W[0], W[1])


@pytest.mark.parametrize("level", [2, 3])
def test_lie_features_approximate_adapted_kernel(level):
    base = base_pair()
    X = np.random.default_rng(8).normal(0, 0.5, size=(4, 2))
    W, A = lie_spectral_batch(base, 0, level, 2000, 100, np.random.default_rng(9))
    W, A = W.reshape(-1, 2), A.reshape(-1) / np.sqrt(100)
    diff = X[:, None, :] - X[None]
    est = np.einsum("s,nms->nm", A**2, np.cos(np.einsum("nmd,sd->nms", diff, W)))
    exact = adapted_level_gram(base, 0, level, X, X)
    scale = np.abs(np.diag(exact)).max()
    assert np.abs(est - exact).max() < 0.1 * scale
