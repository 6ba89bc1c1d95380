"""Reference imputers: column mean, K-hop neighbour mean, soft-impute and a
two-layer GCN refiner.

Every imputer returns an :class:`ImputeResult` whose matrix agrees with the
input bit-for-bit at observed positions.  ``mf`` is an alias of soft-impute
with a small shrinkage.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DataError, DimensionError
from .graph import Graph, augmented_laplacian
from .linalg import svd_thin
from .masks import make_rng
from . import training


@dataclass
class ImputeResult:
    x_hat: np.ndarray
    method: str
    iterations: int = 0
    converged: bool = True
    history: List[float] = field(default_factory=list)


def _prepare(x, mask):
    x = np.asarray(x, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if x.shape != mask.shape:
        raise DimensionError(f"features {x.shape} and mask {mask.shape} differ")
    return x, mask


def restore_observed(x_hat, x, mask) -> np.ndarray:
    return np.where(np.asarray(mask) == 1, x, x_hat)


def column_means(x, mask) -> np.ndarray:
    x, mask = _prepare(x, mask)
    counts = mask.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"column {int(empty[0])} has no observed entries")
    return np.where(mask == 1, x, 0.0).sum(axis=0) / counts


def mean_fill(x, mask) -> np.ndarray:
    x, mask = _prepare(x, mask)
    return np.where(mask == 1, x, column_means(x, mask)[None, :])


def mean_impute(x, mask) -> ImputeResult:
    return ImputeResult(mean_fill(x, mask), "mean")


def hop_reach(a, k_hops: int) -> np.ndarray:
    """Boolean matrix: ``reach[i, u]`` iff ``1 <= dist(i, u) <= k_hops``."""
    if k_hops < 1:
        raise ContractError("k_hops must be >= 1")
    adj = np.asarray(a) > 0
    n = adj.shape[0]
    reach = adj.copy()
    frontier = adj.copy()
    for _ in range(k_hops - 1):
        frontier = (frontier.astype(float) @ adj.astype(float)) > 0
        reach |= frontier
    reach[np.eye(n, dtype=bool)] = False
    return reach


def knn_fill(x, mask, reach) -> np.ndarray:
    x, mask = _prepare(x, mask)
    r = np.asarray(reach, dtype=float)
    obs = np.where(mask == 1, x, 0.0)
    total = r @ obs
    count = r @ mask
    fallback = column_means(x, mask)[None, :]
    guess = np.where(count > 0, total / np.where(count > 0, count, 1.0), fallback)
    return np.where(mask == 1, x, guess)


def nearest_fill(x, mask, a) -> np.ndarray:
    """Mean of the observed values at the smallest hop distance that has any.

    Entries with no observed value anywhere in their component get the column
    mean.  Observed entries are returned unchanged.
    """
    x, mask = _prepare(x, mask)
    adj = (np.asarray(a) > 0).astype(float)
    obs = np.where(mask == 1, x, 0.0)
    out = np.where(mask == 1, x, np.nan)
    todo = mask == 0
    seen = np.eye(adj.shape[0])
    ring = np.eye(adj.shape[0])
    while todo.any():
        ring = ((ring @ adj) > 0) & (seen == 0)
        if not ring.any():
            break
        seen = np.maximum(seen, ring)
        r = ring.astype(float)
        count = r @ mask
        hit = todo & (count > 0)
        out[hit] = ((r @ obs) / np.where(count > 0, count, 1.0))[hit]
        todo &= ~hit
        ring = r
    if todo.any():
        out[todo] = np.broadcast_to(column_means(x, mask), x.shape)[todo]
    return out


def knn_impute(graph: Graph, k_hops: int = 1) -> ImputeResult:
    """Missing ``(i, j)`` becomes the mean of observed ``X[u, j]`` over nodes
    ``u`` within ``k_hops`` of ``i``; the column mean if there are none."""
    reach = hop_reach(graph.adjacency, k_hops)
    return ImputeResult(knn_fill(graph.features, graph.mask, reach), f"knn{k_hops}")


def nuclear_objective(x, mask, z, lam) -> float:
    r = np.where(mask == 1, x - z, 0.0)
    s = svd_thin(z)[1]
    return 0.5 * float(np.sum(r * r)) + lam * float(np.sum(s))


def soft_impute(x, mask, lam: float = 0.1, max_iter: int = 100, tol: float = 1e-5,
                track_objective: bool = False, path: int = 10) -> ImputeResult:
    """Iterative soft-thresholded SVD (Mazumder, Hastie & Tibshirani).

    Iterates ``Z <- SVT_lam(M*X + (1-M)*Z)`` until ``||Z_new - Z||_F < tol``
    or ``max_iter`` sweeps.  The iteration is warm-started along ``path``
    geometrically spaced shrinkages from the largest singular value of the
    observed matrix down to ``lam`` (each stage capped at ``max_iter``);
    ``path=1`` is the plain iteration from ``Z = 0``.  Small ``lam`` needs
    the path: from zero, the plain iteration moves missing entries by about
    ``lam`` per sweep.  ``history`` holds the objective of the final stage.
    """
    if lam < 0:
        raise ContractError("shrinkage must be non-negative")
    if path < 1:
        raise ContractError("path must be >= 1")
    x, mask = _prepare(x, mask)
    obs = np.where(mask == 1, x, 0.0)
    z = np.zeros_like(obs)
    top = float(svd_thin(obs)[1][0]) if obs.size else 0.0
    stages = [lam]
    if path > 1 and top > lam:
        stages = list(np.geomspace(top, max(lam, 1e-12 * top), path)[:-1]) + [lam]
    history: List[float] = []
    converged = False
    total = 0
    for k, level in enumerate(stages):
        last = k == len(stages) - 1
        converged = False
        for _ in range(max_iter):
            u, sv, v = svd_thin(obs + (1.0 - mask) * z)
            sv = np.maximum(sv - level, 0.0)
            z_new = (u * sv) @ v.T
            step = float(np.linalg.norm(z_new - z))
            z = z_new
            total += 1
            if track_objective and last:
                r = mask * (obs - z)
                history.append(0.5 * float(np.sum(r * r)) + level * float(np.sum(sv)))
            if step < tol:
                converged = True
                break
    return ImputeResult(restore_observed(z, x, mask), "soft", total, converged, history)


def mf_impute(x, mask, lam: float = 1e-3, max_iter: int = 200, tol: float = 1e-5) -> ImputeResult:
    res = soft_impute(x, mask, lam=lam, max_iter=max_iter, tol=tol)
    res.method = "mf"
    return res


def gcn_propagator(a) -> np.ndarray:
    """``P = I - augmented Laplacian``, the renormalised GCN filter."""
    return np.eye(np.shape(a)[0]) - augmented_laplacian(a)


def gcn_forward(tape: ad.Tape, prop: ad.Var, x: ad.Var, weights, hidden_act="relu",
                out_act="identity") -> ad.Var:
    """``P sigma(... P X W_1 ...) W_L``; ``hidden_act`` between layers."""
    h = x
    act = ad.activation(hidden_act)
    for i, w in enumerate(weights):
        h = prop @ (h @ w)
        h = ad.activation(out_act)(h) if i == len(weights) - 1 else act(h)
    return h


def init_gcn(d: int, hidden: int, rng) -> dict:
    return {"gcn_w1": training.glorot(rng, d, hidden), "gcn_w2": training.glorot(rng, hidden, d)}


def gcn_refine(graph: Graph, x_draft, hidden: int = 100, epochs: int = 800, lr: float = 0.001,
               seed: int = 0, drafter=None, bank_size: int = 32, drop: float = 0.2,
               train_mask=None, loss_on: str = "hidden") -> ImputeResult:
    """Refine a complete draft with a 2-layer GCN trained on observed entries.

    ``drafter(x_obs, mask)`` rebuilds a draft from thinned observations for
    the training bank; without one the given draft is used as the only input.
    """
    x_draft = np.asarray(x_draft, dtype=float)
    if x_draft.shape != graph.features.shape or not np.all(np.isfinite(x_draft)):
        raise ContractError("draft must be a finite matrix shaped like the features")
    rng = make_rng(seed)
    mask = graph.mask if train_mask is None else np.asarray(train_mask, dtype=float)
    params = init_gcn(graph.d, hidden, rng)
    x_obs = graph.observed()
    if drafter is None:
        bank = [(mask, x_draft)]
        loss_on = "all"
    else:
        bank = training.draft_bank(x_obs, mask, drafter, bank_size, drop, rng)
    prop = gcn_propagator(graph.adjacency)

    def forward(tape, pv, x_in):
        return gcn_forward(tape, tape.const(prop), tape.const(x_in), [pv["gcn_w1"], pv["gcn_w2"]])

    fitted = training.fit(forward, params, x_obs, mask, bank, epochs, lr, loss_on=loss_on)
    out = training.predict(forward, fitted.params, x_draft)
    return ImputeResult(restore_observed(out, graph.features, graph.mask), "gcn", epochs, True,
                        fitted.curve)
