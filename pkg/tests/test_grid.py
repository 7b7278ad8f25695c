import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptychoadmm.grid import (
    divergence_adjoint,
    embed_window,
    extract_window,
    fft2_unitary,
    forward_diff,
    ifft2_unitary,
    inner,
    laplacian,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def dense_gradient(h, w):
    """Materialize the gradient as a (2hw, hw) matrix, one column per unit impulse."""
    cols = []
    for k in range(h * w):
        e = np.zeros(h * w)
        e[k] = 1
        cols.append(forward_diff(e.reshape(h, w)).ravel())
    return np.array(cols).T


def piecewise_gradient_matrix(n):
    """Row-by-row construction from the piecewise wrap-around definitions (1-based i)."""
    D = np.zeros((2 * n * n, n * n))
    for i in range(1, n * n + 1):
        D[i - 1, i - 1] += 1
        D[i - 1, (i - 1 - 1) if i % n != 1 else (i + n - 1 - 1)] -= 1
        D[n * n + i - 1, i - 1] += 1
        D[n * n + i - 1, (i - n - 1) if i > n else (i + (n - 1) * n - 1)] -= 1
    return D


def test_forward_diff_constant_is_zero():
    g = forward_diff(np.full((5, 7), 3 - 2j))
    assert np.array_equal(g, np.zeros((2, 5, 7)))


def test_forward_diff_2x2_hand_values():
    g = forward_diff(np.array([[1, 2], [3, 4]], dtype=complex))
    assert np.array_equal(g[0].ravel(), [-1, 1, -1, 1])
    assert np.array_equal(g[1].ravel(), [-2, -2, 2, 2])


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_forward_diff_matches_piecewise_definition(n):
    D = piecewise_gradient_matrix(n)
    rng = np.random.default_rng(n)
    z = crandn(rng, n, n)
    np.testing.assert_allclose(forward_diff(z).ravel(), D @ z.ravel(), atol=1e-12)
    p = crandn(rng, 2, n, n)
    np.testing.assert_allclose(divergence_adjoint(p).ravel(), D.T @ p.ravel(), atol=1e-12)


def test_gradient_sums_vanish():
    z = crandn(np.random.default_rng(0), 9, 6)
    g = forward_diff(z)
    assert abs(g[0].sum()) < 1e-12 and abs(g[1].sum()) < 1e-12


def test_divergence_adjoint_of_zero():
    assert np.array_equal(divergence_adjoint(np.zeros((2, 4, 4), complex)), np.zeros((4, 4)))


def test_gradient_normal_operator_2x2_dense():
    z = np.array([[1, 2], [3, 4]], dtype=complex)
    D = dense_gradient(2, 2)
    np.testing.assert_allclose(divergence_adjoint(forward_diff(z)).ravel(), D.T @ D @ z.ravel(), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_gradient_adjointness(h, w, seed):
    rng = np.random.default_rng(seed)
    z, p = crandn(rng, h, w), crandn(rng, 2, h, w)
    lhs, rhs = inner(forward_diff(z), p), inner(z, divergence_adjoint(p))
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(z) * np.linalg.norm(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_laplacian_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    a, b = crandn(rng, n, n), crandn(rng, n, n)
    assert abs(inner(laplacian(a), b) - inner(a, laplacian(b))) <= 1e-10 * np.linalg.norm(a) * np.linalg.norm(b)


def test_fft_impulse_is_flat():
    m = 8
    x = np.zeros((m, m), complex)
    x.flat[1] = 1
    np.testing.assert_allclose(np.abs(fft2_unitary(x)), 1 / m, rtol=1e-14)


def test_fft_against_naive_dft():
    rng = np.random.default_rng(3)
    m = 4
    x = crandn(rng, m, m)
    k = np.arange(m)
    naive = np.zeros((m, m), complex)
    for p in range(m):
        for q in range(m):
            naive[p, q] = np.sum(x * np.exp(-2j * np.pi * (p * k[:, None] + q * k[None, :]) / m)) / m
    np.testing.assert_allclose(fft2_unitary(x), naive, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_fft_unitary_and_roundtrip(m, seed):
    x = crandn(np.random.default_rng(seed), m, m)
    assert abs(np.linalg.norm(fft2_unitary(x)) / np.linalg.norm(x) - 1) <= 1e-10
    np.testing.assert_allclose(ifft2_unitary(fft2_unitary(x)), x, rtol=0, atol=1e-10 * np.linalg.norm(x))


def test_extract_whole_image():
    z = crandn(np.random.default_rng(0), 5, 5)
    np.testing.assert_array_equal(extract_window(z, (0, 0), 5), z)


def test_extract_matches_dense_mask():
    z = np.arange(1, 10, dtype=complex).reshape(3, 3)
    S = np.zeros((4, 9))
    for a, (r, c) in enumerate([(1, 1), (1, 2), (2, 1), (2, 2)]):
        S[a, 3 * r + c] = 1
    np.testing.assert_array_equal(extract_window(z, (1, 1), 2).ravel(), S @ z.ravel())
    np.testing.assert_array_equal(extract_window(z, (1, 1), 2).ravel(), [5, 6, 8, 9])


def test_extract_constant():
    np.testing.assert_array_equal(extract_window(np.full((6, 6), 2j), (0, 0), 3), np.full((3, 3), 2j))


@pytest.mark.parametrize("offset", [(-1, 0), (0, 6), (5, 5)])
def test_window_out_of_bounds(offset):
    with pytest.raises(ValueError):
        extract_window(np.zeros((8, 8)), offset, 4)
    with pytest.raises(ValueError):
        embed_window(np.zeros((4, 4)), offset, (8, 8))


def test_embed_then_extract_identity_and_zero_outside():
    rng = np.random.default_rng(1)
    x = crandn(rng, 3, 3)
    full = embed_window(x, (2, 4), (8, 8))
    np.testing.assert_array_equal(extract_window(full, (2, 4), 3), x)
    mask = np.zeros((8, 8), bool)
    mask[2:5, 4:7] = True
    assert np.all(full[~mask] == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_window_adjointness(r, c, seed):
    rng = np.random.default_rng(seed)
    z, x = crandn(rng, 8, 8), crandn(rng, 3, 3)
    lhs = inner(extract_window(z, (r, c), 3), x)
    rhs = inner(z, embed_window(x, (r, c), (8, 8)))
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(z) * np.linalg.norm(x)
