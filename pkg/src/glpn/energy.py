"""Numerical checks of Dirichlet-energy inequalities.

Each inequality is written as ``lhs <= rhs`` and evaluated into a
:class:`BoundReport` with ``slack = rhs - lhs``.  Exact bounds pass when
``slack >= -1e-8 * max(1, |rhs|)``; the Monte-Carlo check of draft energy
reduction passes when ``slack >= -3 * se`` with ``se`` the combined standard
error of the two estimates.

Bound ids:

``eq2``        ``|E(X_hat) - E(X)| / (2 B lam_max) <= ||X_hat - X||_F``
``prop32``     ``mean E(X_hat) <= mean E(X)`` for convex-combination drafts
``eq10``       ``(1 - lam_1)^2 E(X) <= E(P X)`` with ``P = I - Lap``
``prop51``     ``(1 + C_min)^2 E(X) <= E((I + Lap) X + alpha S S^T X)``
``appendixD``  the same with ``Lap`` replaced by ``Lap + Lap^2 / 2``

Random instances are a pure function of ``(bound id, seed, trial)``, so any
report can be replayed with :func:`replay`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import baselines
from .errors import ContractError, DimensionError
from .graph import Graph, SpectralCache, augmented_laplacian, dirichlet_energy, spectral_cache
from .linalg import sym_eigen
from .masks import MaskSpec, make_rng, mcar_mask
from .model import assignment_matrix
from .training import glorot

BOUND_IDS = ("eq2", "prop32", "eq10", "prop51", "appendixD")
ALPHA_GRID = (0.1, 1.0, 10.0)
EXACT_RTOL = 1e-8
MC_SIGMAS = 3.0


@dataclass(frozen=True)
class BoundReport:
    bound: str
    instance: Dict[str, Union[int, float, str]]
    lhs: float
    rhs: float
    eigenvalues: Dict[str, float] = field(default_factory=dict)
    tolerance: Optional[float] = None
    stats: Dict[str, float] = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def allowed(self) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return EXACT_RTOL * max(1.0, abs(self.rhs))

    @property
    def passed(self) -> bool:
        return bool(self.slack >= -self.allowed)

    def to_dict(self) -> dict:
        return {"bound": self.bound, "instance": dict(self.instance), "lhs": self.lhs,
                "rhs": self.rhs, "slack": self.slack, "allowed": self.allowed,
                "eigenvalues": dict(self.eigenvalues), "stats": dict(self.stats),
                "pass": self.passed}


def to_jsonl(reports: Iterable[BoundReport]) -> str:
    """One JSON object per line, sorted by bound id and instance descriptor."""
    rows = sorted((r.to_dict() for r in reports),
                  key=lambda d: (d["bound"], json.dumps(d["instance"], sort_keys=True)))
    return "".join(json.dumps(row, sort_keys=True, allow_nan=False) + "\n" for row in rows)


def summarize(reports: Sequence[BoundReport]) -> Dict[str, Dict[str, Union[int, float]]]:
    out: Dict[str, Dict[str, Union[int, float]]] = {}
    for r in reports:
        s = out.setdefault(r.bound, {"trials": 0, "failures": 0, "worst_relative_slack": math.inf})
        s["trials"] += 1
        s["failures"] += int(not r.passed)
        s["worst_relative_slack"] = min(s["worst_relative_slack"], r.slack / max(1.0, abs(r.rhs)))
    return out


# -- single-instance checks --------------------------------------------------


def _features(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def check_energy_gap(x_hat, x, cache: SpectralCache, instance=None) -> BoundReport:
    x_hat, x = _features(x_hat), _features(x)
    if x_hat.shape != x.shape:
        raise DimensionError(f"shapes differ: {x_hat.shape} vs {x.shape}")
    gap = abs(dirichlet_energy(x_hat, cache.laplacian) - dirichlet_energy(x, cache.laplacian))
    b = max(np.linalg.norm(x_hat), np.linalg.norm(x))
    denom = 2.0 * b * cache.lambda_max
    lhs = gap / denom if denom > 0 else 0.0
    return BoundReport("eq2", dict(instance or {}), float(lhs), float(np.linalg.norm(x_hat - x)),
                       {"lambda_max": cache.lambda_max})


def check_gcn_energy(x, cache: SpectralCache, instance=None) -> BoundReport:
    x = _features(x)
    lam1 = cache.lambda_1
    px = x - cache.laplacian @ x
    lhs = (1.0 - lam1) ** 2 * dirichlet_energy(x, cache.laplacian)
    return BoundReport("eq10", dict(instance or {}), float(lhs),
                       dirichlet_energy(px, cache.laplacian),
                       {"lambda_1": lam1, "lambda_max": cache.lambda_max})


def sharpening_operator(lap, order: int) -> np.ndarray:
    """``Lap`` for order 1, ``Lap + Lap^2 / 2`` for order 2."""
    lap = np.asarray(lap, dtype=float)
    if order == 1:
        return lap
    if order == 2:
        return lap + 0.5 * (lap @ lap)
    raise ContractError("only first- and second-order sharpening bounds are defined")


def check_glpn_energy(x, lap, s, alpha: float, order: int = 1, instance=None) -> BoundReport:
    """``(1 + C_min)^2 E(X) <= E((I + K) X + alpha S S^T X)`` with ``K`` the
    order-``order`` sharpening operator and ``C_min = min eig(K + alpha S S^T)``."""
    x = _features(x)
    lap = np.asarray(lap, dtype=float)
    s = np.asarray(s, dtype=float)
    if alpha < 0:
        raise ContractError("alpha must be >= 0")
    k = sharpening_operator(lap, order)
    sst = s @ s.T
    c_min = float(sym_eigen(k + alpha * sst)[0][0])
    x_hat = x + k @ x + alpha * (sst @ x)
    lhs = (1.0 + c_min) ** 2 * dirichlet_energy(x, lap)
    bound = "prop51" if order == 1 else "appendixD"
    return BoundReport(bound, dict(instance or {}), float(lhs), dirichlet_energy(x_hat, lap),
                       {"c_min": c_min})


# -- random instances ---------------------------------------------------------


def _instance_rng(bound: str, seed: int, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), BOUND_IDS.index(bound), int(trial)])
    return np.random.Generator(np.random.PCG64(ss))


def random_graph(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, k=1).astype(float)
    return upper + upper.T


def _draw(rng, sizes, dims):
    n = int(rng.integers(sizes[0], sizes[1] + 1))
    d = int(rng.integers(dims[0], dims[1] + 1))
    p = float(rng.uniform(0.1, 0.6))
    a = random_graph(rng, n, p)
    x = rng.normal(size=(n, d))
    return n, d, p, a, x


def replay(bound: str, seed: int, trial: int, sizes=(2, 30), dims=(1, 5),
           alpha_grid=ALPHA_GRID) -> BoundReport:
    """Rebuild the report of one randomized trial."""
    rng = _instance_rng(bound, seed, trial)
    n, d, p, a, x = _draw(rng, sizes, dims)
    inst = {"trial": int(trial), "seed": int(seed), "n": n, "d": d, "p": round(p, 12)}
    if bound == "eq2":
        cache = spectral_cache(a)
        scale = float(10.0 ** rng.uniform(-3, 1))
        x_hat = x + scale * rng.normal(size=x.shape)
        inst["noise"] = round(scale, 12)
        return check_energy_gap(x_hat, x, cache, inst)
    if bound == "eq10":
        return check_gcn_energy(x, spectral_cache(a), inst)
    if bound in ("prop51", "appendixD"):
        alpha = float(alpha_grid[trial % len(alpha_grid)])
        r = int(rng.integers(1, n)) if n > 1 else 1
        s = assignment_matrix(x, glorot(rng, d, 16), glorot(rng, 16, r))
        order = 1 if bound == "prop51" else 2
        inst.update(alpha=alpha, order=order, clusters=r)
        return check_glpn_energy(x, augmented_laplacian(a), s, alpha, order, inst)
    raise ContractError(f"no randomized instances for bound {bound!r}")


def _run(bound, trials, seed, **kw) -> List[BoundReport]:
    if trials < 1:
        raise ContractError("trials must be >= 1")
    return [replay(bound, seed, t, **kw) for t in range(trials)]


def verify_energy_gap_bound(trials: int = 1000, sizes=(2, 30), seed: int = 0,
                            dims=(1, 5)) -> List[BoundReport]:
    return _run("eq2", trials, seed, sizes=sizes, dims=dims)


def verify_gcn_energy_bound(trials: int = 1000, seed: int = 0, sizes=(2, 30),
                            dims=(1, 5)) -> List[BoundReport]:
    return _run("eq10", trials, seed, sizes=sizes, dims=dims)


def verify_glpn_energy_bound(trials: int = 1000, alpha_grid=ALPHA_GRID, seed: int = 0,
                             sizes=(2, 30), dims=(1, 5)) -> List[BoundReport]:
    return _run("prop51", trials, seed, sizes=sizes, dims=dims, alpha_grid=tuple(alpha_grid))


def verify_higher_order_bound(trials: int = 1000, seed: int = 0, alpha_grid=ALPHA_GRID,
                              sizes=(2, 30), dims=(1, 5)) -> List[BoundReport]:
    return _run("appendixD", trials, seed, sizes=sizes, dims=dims, alpha_grid=tuple(alpha_grid))


# -- Monte-Carlo draft energy -------------------------------------------------

Imputer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _column_imputer(kind, a, k_hops: int = 1) -> Tuple[str, Imputer]:
    if callable(kind):
        return getattr(kind, "__name__", "custom"), kind
    if kind == "mean":
        return "mean", baselines.mean_fill
    if kind == "knn":
        reach = baselines.hop_reach(a, k_hops)
        return f"knn{k_hops}", lambda x, m: baselines.knn_fill(x, m, reach)
    raise ContractError(f"unknown imputer {kind!r}; use 'mean', 'knn' or a callable")


def _per_sample_energy(x, lap, d: int) -> np.ndarray:
    col = np.sum(x * (lap @ x), axis=0)
    return col.reshape(-1, d).sum(axis=1)


def verify_draft_energy_reduction(graph: Graph, imputer="mean", mc_samples: int = 10_000,
                                  seed: int = 0, ratio: Optional[float] = None,
                                  k_hops: int = 1, chunk: int = 2000) -> BoundReport:
    """Monte-Carlo comparison of ``E[E(X_hat)]`` and ``E[E(X)]``.

    Every sample draws ``X`` with i.i.d. standard normal entries of the
    graph's shape and imputes the positions hidden by ``graph.mask`` (or, if
    ``ratio`` is given, by a fresh MCAR mask per sample).  ``imputer`` is
    ``"mean"``, ``"knn"`` or a callable ``(x, mask) -> x_hat`` that treats
    columns independently; samples are stacked side by side as extra columns.
    """
    if mc_samples < 2:
        raise ContractError("need at least two Monte-Carlo samples")
    lap = augmented_laplacian(graph.adjacency)
    name, impute = _column_imputer(imputer, graph.adjacency, k_hops)
    n, d = graph.n, graph.d
    rng = make_rng(np.random.SeedSequence([int(seed), BOUND_IDS.index("prop32")]))
    e_true, e_hat = [], []
    done = 0
    while done < mc_samples:
        b = min(chunk, mc_samples - done)
        x = rng.normal(size=(n, d * b))
        if ratio is None:
            m = np.tile(np.asarray(graph.mask, dtype=float), (1, b))
        else:
            m = (rng.random((n, d * b)) >= ratio).astype(float)
        empty = m.sum(axis=0) == 0
        if empty.any():
            # a column with nothing observed has no convex-combination fill
            m[rng.integers(0, n, size=int(empty.sum())), np.flatnonzero(empty)] = 1.0
        x_hat = impute(np.where(m == 1, x, 0.0), m)
        e_true.append(_per_sample_energy(x, lap, d))
        e_hat.append(_per_sample_energy(np.where(m == 1, x, x_hat), lap, d))
        done += b
    e_true, e_hat = np.concatenate(e_true), np.concatenate(e_hat)
    mu_t, mu_h = float(e_true.mean()), float(e_hat.mean())
    se_t = float(e_true.std(ddof=1) / math.sqrt(mc_samples))
    se_h = float(e_hat.std(ddof=1) / math.sqrt(mc_samples))
    se = math.sqrt(se_t ** 2 + se_h ** 2)
    inst = {"seed": int(seed), "n": n, "d": d, "imputer": name, "samples": int(mc_samples),
            "ratio": "mask" if ratio is None else float(ratio)}
    stats = {"se": se, "se_hat": se_h, "se_true": se_t,
             "reduction_sigmas": (mu_t - mu_h) / se if se > 0 else 0.0}
    return BoundReport("prop32", inst, mu_h, mu_t, {}, tolerance=MC_SIGMAS * se, stats=stats)


def significant_reduction(report: BoundReport, sigmas: float = MC_SIGMAS) -> bool:
    """True when the draft energy sits at least ``sigmas`` standard errors
    below the ground-truth energy."""
    return bool(report.stats.get("reduction_sigmas", 0.0) >= sigmas)


# -- diagnostics --------------------------------------------------------------


def relative_energy_gap(x_hat, x, cache) -> float:
    """``(E(X_hat) - E(X)) / E(X)``; negative means energy was lost."""
    lap = cache.laplacian if isinstance(cache, SpectralCache) else np.asarray(cache, dtype=float)
    e_true = dirichlet_energy(x, lap)
    # energies below rounding level of ||X||^2 are zero in disguise
    if e_true <= 1e-12 * float(np.sum(np.square(x))):
        raise ContractError("ground-truth features have zero Dirichlet energy")
    return (dirichlet_energy(x_hat, lap) - e_true) / e_true


def run_all(trials: int = 1000, seed: int = 0, which: str = "all",
            mc_samples: int = 10_000) -> List[BoundReport]:
    """Every randomized bound in ``which`` (an id or ``"all"``)."""
    if trials < 1:
        raise ContractError("trials must be >= 1")
    wanted = BOUND_IDS if which == "all" else (which,)
    unknown = [w for w in wanted if w not in BOUND_IDS]
    if unknown:
        raise ContractError(f"unknown bound {unknown[0]!r}; expected one of {BOUND_IDS} or 'all'")
    out: List[BoundReport] = []
    for bound in wanted:
        if bound == "prop32":
            out.extend(draft_energy_suite(seed=seed, mc_samples=mc_samples))
        else:
            out.extend(_run(bound, trials, seed))
    return out


def draft_energy_suite(seed: int = 0, mc_samples: int = 10_000, n: int = 20, p: float = 0.3,
                       d: int = 1, ratios=(0.1, 0.3, 0.5),
                       imputers=("mean", "knn")) -> List[BoundReport]:
    """Draft energy checks on one Erdos-Renyi graph across missing ratios."""
    rng = make_rng(np.random.SeedSequence([int(seed), BOUND_IDS.index("prop32"), 1]))
    a = random_graph(rng, n, p)
    g = Graph(a, np.zeros((n, d)), np.ones((n, d)))
    return [verify_draft_energy_reduction(g, imp, mc_samples, seed, ratio=r)
            for imp in imputers for r in ratios]
