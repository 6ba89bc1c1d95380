"""Desk-scale synthetic graphs carrying low-pass feature signals."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError, DataError
from ..graph import Graph, augmented_laplacian, is_connected
from ..masks import make_rng, minmax_scale

GRAPH_KINDS = ("erdos-renyi", "ring-lattice", "grid")
MAX_ATTEMPTS = 10


def erdos_renyi(n: int, p: float, rng) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, k=1)
    a = upper.astype(float)
    return a + a.T


def ring_lattice(n: int, k: int) -> np.ndarray:
    """Each node linked to its ``k`` nearest neighbours on either side."""
    if not 1 <= k < n / 2:
        raise ContractError("ring lattice needs 1 <= k < n/2")
    a = np.zeros((n, n))
    idx = np.arange(n)
    for step in range(1, k + 1):
        a[idx, (idx + step) % n] = 1.0
        a[(idx + step) % n, idx] = 1.0
    return a


def grid(n: int) -> np.ndarray:
    """4-neighbour grid with the most square ``rows x cols = n`` layout."""
    rows = max(r for r in range(1, int(math.isqrt(n)) + 1) if n % r == 0)
    cols = n // rows
    a = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                a[i, i + 1] = a[i + 1, i] = 1.0
            if r + 1 < rows:
                a[i, i + cols] = a[i + cols, i] = 1.0
    return a


def smooth_signal(a, z, smoothness: int) -> np.ndarray:
    """Apply the low-pass filter ``(I - L/2)`` ``smoothness`` times."""
    lap = augmented_laplacian(a)
    step = np.eye(lap.shape[0]) - 0.5 * lap
    out = np.asarray(z, dtype=float)
    for _ in range(smoothness):
        out = step @ out
    return out


def gen_synthetic(n: int, d: int, kind: str = "grid", smoothness: int = 8, seed: int = 0,
                  p: float = 0.1, k: int = 2) -> Graph:
    """Graph of ``kind`` with MinMax-scaled smooth features (fully observed).

    ``p`` is the Erdos-Renyi edge probability, ``k`` the ring-lattice
    half-width.  Erdos-Renyi graphs are redrawn until connected, up to ten
    attempts.
    """
    if n < 2 or d < 1 or smoothness < 0:
        raise ContractError("need n >= 2, d >= 1 and smoothness >= 0")
    if kind not in GRAPH_KINDS:
        raise ContractError(f"graph kind must be one of {GRAPH_KINDS}")
    rng = make_rng(seed)
    if kind == "erdos-renyi":
        for _ in range(MAX_ATTEMPTS):
            a = erdos_renyi(n, p, rng)
            if is_connected(a):
                break
        else:
            raise DataError(f"no connected Erdos-Renyi graph in {MAX_ATTEMPTS} attempts (n={n}, p={p})")
    elif kind == "ring-lattice":
        a = ring_lattice(n, k)
    else:
        a = grid(n)
    z = rng.normal(size=(n, d))
    x, _ = minmax_scale(smooth_signal(a, z, smoothness))
    return Graph(a, x, np.ones((n, d)))
