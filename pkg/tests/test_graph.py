import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glpn.errors import ContractError, DegenerateNodeError, DimensionError
from glpn.graph import (Graph, augmented_laplacian, binary_adjacency, dirichlet_energy,
                        energy_gap_lower_bound, gaussian_kernel_adjacency, homophily_ratio,
                        is_connected, nonzero_closest_to_one, spectral_cache)

from conftest import path_graph, random_adjacency


def test_laplacian_small_cases(edge2):
    assert np.array_equal(augmented_laplacian(np.zeros((1, 1))), [[0.0]])
    assert np.allclose(augmented_laplacian(edge2), [[0.5, -0.5], [-0.5, 0.5]])


def test_laplacian_rejects_bad_adjacency():
    with pytest.raises(ContractError):
        augmented_laplacian([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ContractError):
        augmented_laplacian([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ContractError):
        augmented_laplacian([[0.0, -1.0], [-1.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 25), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_laplacian_spectrum_in_unit_range(n, p, seed):
    a = random_adjacency(np.random.default_rng(seed), n, p, weighted=True)
    cache = spectral_cache(a)
    assert cache.eigenvalues[0] >= -1e-10
    assert cache.lambda_max < 2.0
    # D~^{1/2} 1 spans the kernel
    k = np.sqrt(a.sum(axis=1) + 1.0)
    assert np.max(np.abs(cache.laplacian @ k)) < 1e-10


def test_energy_examples(edge2):
    lap = augmented_laplacian(edge2)
    assert dirichlet_energy([1.0, 1.0], lap) == pytest.approx(0.0, abs=1e-15)
    assert dirichlet_energy([1.0, -1.0], lap) == pytest.approx(2.0)
    assert dirichlet_energy([1.0, -1.0], lap, degrees=[1.0, 1.0], form="pairwise") == pytest.approx(2.0)
    assert dirichlet_energy(np.zeros((2, 3)), lap) == 0.0


def test_energy_pairwise_needs_degrees(edge2):
    with pytest.raises(ContractError):
        dirichlet_energy([1.0, 0.0], augmented_laplacian(edge2), form="pairwise")
    with pytest.raises(DimensionError):
        dirichlet_energy(np.ones((3, 1)), augmented_laplacian(edge2))


def test_trace_matches_pairwise_on_200_graphs():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n, d = int(rng.integers(1, 30)), int(rng.integers(1, 5))
        a = random_adjacency(rng, n, float(rng.uniform(0, 0.8)), weighted=bool(rng.integers(2)))
        x = rng.normal(size=(n, d))
        lap = augmented_laplacian(a)
        tr = dirichlet_energy(x, lap)
        pw = dirichlet_energy(x, lap, degrees=a.sum(axis=1), form="pairwise")
        assert abs(tr - pw) <= 1e-9 * max(1.0, abs(pw))


def test_energy_gap_bound_examples(edge2):
    cache = spectral_cache(edge2)
    x = np.array([[1.0], [-1.0]])
    assert energy_gap_lower_bound(x, x, cache) == 0.0
    assert cache.lambda_max == pytest.approx(1.0)
    bound = energy_gap_lower_bound(2 * x, x, cache)
    assert bound == pytest.approx(6 / (4 * np.sqrt(2)))
    assert np.linalg.norm(2 * x - x) >= bound


def test_energy_gap_bound_500_pairs():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n, d = int(rng.integers(2, 20)), int(rng.integers(1, 4))
        cache = spectral_cache(random_adjacency(rng, n, 0.4))
        x = rng.normal(size=(n, d))
        x_hat = x + rng.normal(scale=10 ** rng.uniform(-3, 1), size=x.shape)
        assert energy_gap_lower_bound(x_hat, x, cache) <= np.linalg.norm(x_hat - x) * (1 + 1e-9)


def test_nonzero_closest_to_one():
    assert nonzero_closest_to_one([0.0, 0.5, 1.5]) == 0.5
    assert nonzero_closest_to_one([0.0, 0.9, 1.2]) == 0.9
    assert nonzero_closest_to_one([0.0, 0.0]) == 0.0


def test_homophily_examples():
    tri = np.ones((3, 3)) - np.eye(3)
    assert homophily_ratio(tri, [1, 1, 1]) == 1.0
    cyc = np.zeros((4, 4))
    for i in range(4):
        cyc[i, (i + 1) % 4] = cyc[(i + 1) % 4, i] = 1.0
    assert homophily_ratio(cyc, [0, 1, 0, 1]) == 0.0
    assert homophily_ratio(path_graph(3), ["A", "A", "B"]) == pytest.approx(0.5)
    with pytest.raises(DegenerateNodeError) as info:
        homophily_ratio(np.zeros((2, 2)), [0, 0])
    assert info.value.node == 0


def test_gaussian_kernel():
    d = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    w = gaussian_kernel_adjacency(d, sigma=1.0, threshold=0.1)
    assert w[0, 1] == 1.0
    assert w[1, 2] == pytest.approx(np.exp(-1.0))
    assert w[0, 2] == 0.0
    assert np.all(np.diag(w) == 0)
    with pytest.raises(ContractError):
        gaussian_kernel_adjacency(d, sigma=0.0)


def test_binary_adjacency():
    assert np.array_equal(binary_adjacency([], 3), np.zeros((3, 3)))
    a = binary_adjacency([(0, 1)], 3)
    assert a[0, 1] == a[1, 0] == 1 and a.sum() == 2
    with pytest.raises(ContractError):
        binary_adjacency([(2, 2)], 3)


def test_graph_validation():
    a = path_graph(3)
    with pytest.raises(DimensionError):
        Graph(a, np.ones((2, 1)), np.ones((2, 1)))
    with pytest.raises(ContractError):
        Graph(a, np.full((3, 1), np.nan), np.ones((3, 1)))
    g = Graph(a, np.array([[1.0], [np.nan], [3.0]]), np.array([[1.0], [0.0], [1.0]]))
    assert g.observed()[1, 0] == 0.0
    assert is_connected(a) and not is_connected(np.zeros((2, 2)))
