"""Graph data model, augmented normalised Laplacian and Dirichlet energy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateNodeError, DimensionError
from .linalg import as_matrix, sym_eigen

KERNEL_EPS = 1e-8


def check_adjacency(a) -> np.ndarray:
    a = as_matrix(a, name="adjacency")
    n, m = a.shape
    if n != m:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise ContractError("adjacency has negative weights")
    if np.any(np.diag(a) != 0):
        raise ContractError("adjacency must have a zero diagonal")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise ContractError("adjacency must be symmetric")
    return a


@dataclass(frozen=True)
class Graph:
    """Node features on an undirected weighted graph.

    ``features`` may hold anything (including NaN) where ``mask == 0``;
    imputers only ever read observed positions.
    """

    adjacency: np.ndarray
    features: np.ndarray
    mask: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        a = check_adjacency(self.adjacency)
        x = as_matrix(self.features, name="features", allow_nonfinite=True)
        m = as_matrix(self.mask, name="mask")
        n = a.shape[0]
        if n < 1 or x.shape[1] < 1:
            raise ContractError("graph needs n >= 1 nodes and d >= 1 features")
        if x.shape[0] != n:
            raise DimensionError(f"features have {x.shape[0]} rows, graph has {n} nodes")
        if m.shape != x.shape:
            raise DimensionError(f"mask shape {m.shape} != features shape {x.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ContractError("mask entries must be 0 or 1")
        if not np.all(np.isfinite(x[m == 1])):
            raise ContractError("observed features must be finite")
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "mask", m)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (n,):
                raise DimensionError("labels must have one entry per node")
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def observed(self) -> np.ndarray:
        """Features with every missing entry replaced by 0."""
        return np.where(self.mask == 1, self.features, 0.0)

    def with_mask(self, mask) -> "Graph":
        return Graph(self.adjacency, self.features, mask, self.labels)


def augmented_laplacian(a) -> np.ndarray:
    """``I - D~^{-1/2} (A + I) D~^{-1/2}`` with ``D~ = D + I``."""
    a = check_adjacency(a)
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1) + 1.0)
    lap = -(inv_sqrt[:, None] * (a + np.eye(a.shape[0])) * inv_sqrt[None, :])
    lap[np.diag_indices_from(lap)] += 1.0
    return 0.5 * (lap + lap.T)


@dataclass(frozen=True)
class SpectralCache:
    laplacian: np.ndarray
    degree: np.ndarray
    eigenvalues: np.ndarray
    lambda_max: float
    lambda_1: float
    eigenvectors: np.ndarray = field(repr=False, default=None)


def nonzero_closest_to_one(eigenvalues) -> float:
    """The non-zero eigenvalue nearest 1; ties go to the smaller one.

    Returns 0.0 when every eigenvalue is (numerically) zero.
    """
    w = np.sort(np.asarray(eigenvalues, dtype=float))
    nz = w[w > KERNEL_EPS]
    if nz.size == 0:
        return 0.0
    return float(nz[np.argmin(np.abs(nz - 1.0))])


def spectral_cache(a) -> SpectralCache:
    a = check_adjacency(a)
    lap = augmented_laplacian(a)
    w, v = sym_eigen(lap)
    return SpectralCache(
        laplacian=lap,
        degree=a.sum(axis=1),
        eigenvalues=w,
        lambda_max=float(w[-1]),
        lambda_1=nonzero_closest_to_one(w),
        eigenvectors=v,
    )


def dirichlet_energy(x, laplacian, degrees=None, form: str = "trace") -> float:
    """Dirichlet energy of node features.

    ``form="trace"`` evaluates ``tr(X^T L X)``.  ``form="pairwise"`` evaluates
    the edge sum ``1/2 sum_ij A_ij ||x_i/sqrt(1+D_i) - x_j/sqrt(1+D_j)||^2``
    with the edge weights recovered from the off-diagonal of ``laplacian`` and
    ``degrees`` (weighted degrees, required for this form).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    lap = np.asarray(laplacian, dtype=float)
    n = lap.shape[0]
    if x.shape[0] != n:
        raise DimensionError(f"features have {x.shape[0]} rows, laplacian is {lap.shape}")
    if form == "trace":
        return max(float(np.sum(x * (lap @ x))), 0.0)
    if form != "pairwise":
        raise ValueError(f"unknown form {form!r}")
    if degrees is None:
        raise ContractError("pairwise form needs the degree vector")
    dt = np.asarray(degrees, dtype=float) + 1.0
    if dt.shape != (n,):
        raise DimensionError("degree vector length must match the laplacian")
    root = np.sqrt(dt)
    weights = -lap * np.outer(root, root)
    np.fill_diagonal(weights, 0.0)
    y = x / root[:, None]
    total = 0.0
    for i in range(n):
        diff = y[i][None, :] - y
        total += float(weights[i] @ np.sum(diff * diff, axis=1))
    return 0.5 * total


def energy_gap_lower_bound(x_hat, x, cache: SpectralCache) -> float:
    """Lower bound on ``||x_hat - x||_F`` implied by their energy gap.

    ``|E(x_hat) - E(x)| / (2 B lambda_max)`` with ``B`` the larger of the two
    Frobenius norms; 0 when both inputs (or the spectrum) vanish.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise DimensionError(f"shapes differ: {x_hat.shape} vs {x.shape}")
    b = max(np.linalg.norm(x_hat), np.linalg.norm(x))
    denom = 2.0 * b * cache.lambda_max
    if denom <= 0.0:
        return 0.0
    gap = abs(dirichlet_energy(x_hat, cache.laplacian) - dirichlet_energy(x, cache.laplacian))
    return gap / denom


def homophily_ratio(a, labels) -> float:
    a = check_adjacency(a)
    y = np.asarray(labels)
    if y.shape != (a.shape[0],):
        raise DimensionError("one label per node required")
    nbr = a > 0
    deg = nbr.sum(axis=1)
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        raise DegenerateNodeError(int(isolated[0]))
    same = (nbr & (y[:, None] == y[None, :])).sum(axis=1)
    return float(np.mean(same / deg))


def gaussian_kernel_adjacency(dist, sigma: float, threshold: float = 0.0) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-(dist/sigma)^2)`` on pairwise distances."""
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    if not 0.0 <= threshold < 1.0:
        raise ContractError("threshold must lie in [0, 1)")
    d = as_matrix(dist, name="distances")
    if d.shape[0] != d.shape[1]:
        raise ContractError("distance matrix must be square")
    if np.any(d < 0) or np.any(np.diag(d) != 0) or not np.allclose(d, d.T, rtol=0, atol=1e-12):
        raise ContractError("distances must be symmetric, non-negative, zero on the diagonal")
    w = np.exp(-((d / sigma) ** 2))
    w[w <= threshold] = 0.0
    np.fill_diagonal(w, 0.0)
    return 0.5 * (w + w.T)


def binary_adjacency(edges: Iterable[Sequence[int]], n: int) -> np.ndarray:
    a = np.zeros((n, n))
    for edge in edges:
        i, j = int(edge[0]), int(edge[1])
        if not (0 <= i < n and 0 <= j < n):
            raise ContractError(f"edge ({i}, {j}) references a node outside [0, {n})")
        if i == j:
            raise ContractError(f"self-loop on node {i}")
        a[i, j] = a[j, i] = 1.0
    return a


def is_connected(a) -> bool:
    a = np.asarray(a)
    n = a.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = seen.copy()
    while frontier.any():
        nxt = (a[frontier].sum(axis=0) > 0) & ~seen
        seen |= nxt
        frontier = nxt
    return bool(seen.all())
