"""CSV ingestion, metric evaluation and small file helpers.

File formats:

* features: ``n`` rows of ``d`` numbers; empty cells, ``nan`` and ``NA``
  mark missing entries.  An optional header row is skipped with
  ``header=True``.
* edges: ``src,dst[,weight]`` rows with 0-based node ids; edges are
  undirected.
* distance: dense ``n x n`` numeric matrix.
* mask: ``n x d`` matrix of 0/1 (1 = observed).
"""
from __future__ import annotations

import csv
import math
import os
from typing import List, Optional, Tuple

import numpy as np

from ..errors import ContractError, DataError
from ..graph import Graph, gaussian_kernel_adjacency
from ..masks import ScalingRecord, minmax_scale

MISSING_TOKENS = {"", "nan", "na", "n/a", "null", "?"}


def _open(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    return open(path, newline="")


def read_rows(path, header: bool = False) -> List[Tuple[int, List[str]]]:
    """Non-blank rows with their 1-based line numbers."""
    with _open(path) as fh:
        rows = [(i, [c.strip() for c in row]) for i, row in enumerate(csv.reader(fh), start=1)
                if row and any(c.strip() for c in row)]
    return rows[1:] if header else rows


def read_matrix(path, header: bool = False, allow_missing: bool = False) -> np.ndarray:
    rows = read_rows(path, header)
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0][1])
    out = np.empty((len(rows), width))
    for r, (line, cells) in enumerate(rows):
        if len(cells) != width:
            raise DataError(f"{path}:{line}: expected {width} columns, found {len(cells)}")
        for c, cell in enumerate(cells):
            if cell.lower() in MISSING_TOKENS:
                if not allow_missing:
                    raise DataError(f"{path}:{line}: column {c + 1} is empty or missing")
                out[r, c] = math.nan
                continue
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{line}: column {c + 1}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(out[r, c]):
                raise DataError(f"{path}:{line}: column {c + 1}: value {cell!r} is not finite")
    return out


def read_edges(path, n: int, header: bool = False) -> np.ndarray:
    """Symmetric weighted adjacency from an edge list."""
    a = np.zeros((n, n))
    for line, cells in read_rows(path, header):
        if len(cells) not in (2, 3):
            raise DataError(f"{path}:{line}: expected src,dst[,weight], found {len(cells)} columns")
        try:
            i, j = int(cells[0]), int(cells[1])
        except ValueError:
            raise DataError(f"{path}:{line}: node ids must be integers, got {cells[:2]}") from None
        try:
            w = float(cells[2]) if len(cells) == 3 else 1.0
        except ValueError:
            raise DataError(f"{path}:{line}: column 3: cannot parse {cells[2]!r} as a weight") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DataError(f"{path}:{line}: edge ({i}, {j}) outside node range 0..{n - 1}")
        if i == j:
            raise DataError(f"{path}:{line}: self-loop on node {i}")
        if not (math.isfinite(w) and w > 0):
            raise DataError(f"{path}:{line}: edge weight must be positive, got {w}")
        a[i, j] = a[j, i] = w
    return a


def ingest(features, edges=None, distance=None, sigma: Optional[float] = None,
           threshold: float = 0.0, mask=None, header: bool = False) -> Tuple[Graph, ScalingRecord]:
    """Build a :class:`Graph` with MinMax-scaled features from CSV files.

    Exactly one of ``edges`` and ``distance`` is required; a distance file
    also needs ``sigma``.  Missing cells in the features file and zeros in
    the mask file are both treated as unobserved.  Returns the graph and the
    scaling record needed to map results back to original units.
    """
    if (edges is None) == (distance is None):
        raise ContractError("give exactly one of an edge list and a distance matrix")
    x = read_matrix(features, header, allow_missing=True)
    n, d = x.shape
    m = np.isfinite(x).astype(float)
    if mask is not None:
        given = read_matrix(mask, header)
        if given.shape != x.shape:
            raise DataError(f"mask is {given.shape[0]}x{given.shape[1]}, features are {n}x{d}")
        if not np.all((given == 0) | (given == 1)):
            bad = np.argwhere((given != 0) & (given != 1))[0]
            raise DataError(f"{mask}: row {bad[0] + 1}, column {bad[1] + 1}: mask entries must be 0 or 1")
        m = m * given
    if edges is not None:
        a = read_edges(edges, n, header)
    else:
        if sigma is None:
            raise ContractError("a distance matrix needs sigma")
        dist = read_matrix(distance, header)
        if dist.shape != (n, n):
            raise DataError(f"distance matrix is {dist.shape[0]}x{dist.shape[1]}, expected {n}x{n} "
                            "to match the features")
        a = gaussian_kernel_adjacency(dist, sigma, threshold)
    scaled, record = minmax_scale(np.where(m == 1, x, 0.0), m)
    scaled = np.where(m == 1, scaled, np.nan)
    return Graph(a, scaled, m), record


def write_matrix(path, x, fmt: str = "%.17g") -> None:
    np.savetxt(path, np.asarray(x, dtype=float), delimiter=",", fmt=fmt)


def write_edges(path, a) -> None:
    a = np.asarray(a, dtype=float)
    i, j = np.nonzero(np.triu(a, k=1))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for u, v in zip(i.tolist(), j.tolist()):
            w.writerow([u, v, repr(float(a[u, v]))])


def evaluate(x_hat, x, mask, record: Optional[ScalingRecord] = None,
             eval_mask=None) -> Tuple[float, float]:
    """``(RMSE, MAE)`` over the entries with ``mask == 0``.

    With a scaling record both matrices are mapped back to original units
    first.  ``eval_mask`` (1 = scored) overrides the complement of ``mask``.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    m = np.asarray(mask, dtype=float)
    if x_hat.shape != x.shape or m.shape != x.shape:
        raise ContractError("prediction, truth and mask must share one shape")
    scored = (m == 0) if eval_mask is None else (np.asarray(eval_mask) == 1)
    if not scored.any():
        raise ContractError("no missing entries to evaluate")
    if record is not None:
        x_hat, x = record.inverse(x_hat), record.inverse(x)
    err = (x_hat - x)[scored]
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))
