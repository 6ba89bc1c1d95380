import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from glpn.errors import ContractError, ConvergenceError, DimensionError
from glpn.linalg import as_matrix, matmul, svd_thin, sym_eigen


def triple_loop(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


def test_matmul_identity_and_small():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2.0], [4.0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    assert np.max(np.abs(matmul(a, b) - triple_loop(a, b))) <= 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_as_matrix_rejects_nan():
    with pytest.raises(ContractError):
        as_matrix([[1.0, np.nan]])
    assert as_matrix([1.0, 2.0]).shape == (2, 1)


def test_eigen_examples():
    w, _ = sym_eigen(np.eye(4))
    assert np.allclose(w, 1.0)
    w, _ = sym_eigen(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(w, [1.0, 2.0, 3.0])
    w, v = sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(w, [1.0, 3.0])
    assert np.isclose(abs(v[:, 0] @ np.array([1.0, -1.0]) / np.sqrt(2)), 1.0)
    assert np.isclose(abs(v[:, 1] @ np.array([1.0, 1.0]) / np.sqrt(2)), 1.0)


def test_eigen_errors():
    with pytest.raises(ContractError):
        sym_eigen(np.ones((2, 3)))
    with pytest.raises(ContractError):
        sym_eigen([[1.0, 2.0], [0.0, 1.0]])
    m = np.random.default_rng(0).normal(size=(12, 12))
    with pytest.raises(ConvergenceError) as info:
        sym_eigen(m + m.T, max_sweeps=1)
    assert info.value.residual > 0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-10, 10)))
def test_eigen_reconstructs_symmetric(a):
    m = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    m = m - np.eye(m.shape[0])
    w, v = sym_eigen(m)
    scale = max(1.0, np.linalg.norm(m))
    assert np.all(np.diff(w) >= -1e-12 * scale)
    assert np.allclose(v.T @ v, np.eye(len(w)), atol=1e-10)
    assert np.max(np.abs(v @ np.diag(w) @ v.T - m)) <= 1e-9 * scale
    assert np.allclose(w, np.linalg.eigvalsh(m), atol=1e-9 * scale)


def test_svd_examples():
    u, s, v = svd_thin(np.diag([2.0, 1.0]))
    assert np.allclose(s, [2.0, 1.0])
    _, s, _ = svd_thin(np.zeros((3, 2)))
    assert np.all(s == 0)


def test_svd_rank_one(rng):
    u0 = rng.normal(size=5)
    v0 = rng.normal(size=4)
    u0, v0 = u0 / np.linalg.norm(u0), v0 / np.linalg.norm(v0)
    m = np.outer(u0, v0)
    u, s, v = svd_thin(m)
    assert np.isclose(s[0], 1.0, atol=1e-12)
    assert np.allclose(s[1:], 0.0, atol=1e-7)
    assert np.allclose((u * s) @ v.T, m, atol=1e-12)
    assert np.allclose(u.T @ u, np.eye(4), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)),
              elements=st.floats(-5, 5)))
def test_svd_reconstruction_property(m):
    u, s, v = svd_thin(m)
    k = min(m.shape)
    assert u.shape == (m.shape[0], k) and v.shape == (m.shape[1], k)
    assert np.all(s >= 0) and np.all(np.diff(s) <= 1e-12)
    assert np.allclose((u * s) @ v.T, m, atol=1e-7 * max(1.0, np.abs(m).max()))
    assert np.allclose(v.T @ v, np.eye(k), atol=1e-8)
