"""Experiment grid: datasets x mechanisms x missing ratios x trials x methods.

A *cell* is one ``(mechanism, ratio, trial)`` triple.  Every method in a cell
sees the same graph and mask, and every cell owns a seed derived from the
experiment seed and its descriptor, so cells can run in any order or in
parallel and still produce identical numbers.

Methods:

``mean``, ``knn``, ``soft``, ``mf``      reference imputers
``dgcn``                                 the learned draft on its own
``gcn``                                  2-layer GCN refining the GLPN draft
``glpn``, ``glpn-wo-R``, ``glpn-wo-P``   full model and its two ablations
``<draft>+glpn``                         GLPN on a chosen draft (``mean+glpn`` ...)
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import baselines, model
from ..energy import relative_energy_gap
from ..errors import ContractError, GlpnError, TrainingDivergence
from ..graph import Graph, augmented_laplacian, dirichlet_energy
from ..masks import MaskSpec, Mechanism, make_mask
from .io import evaluate, ingest
from .synthetic import GRAPH_KINDS, gen_synthetic

SCHEMA = 1
DEFAULT_RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_METHODS = ("mean", "knn", "soft", "gcn", "glpn", "glpn-wo-R", "glpn-wo-P")
SIMPLE = ("mean", "knn", "soft", "mf", "dgcn", "gcn", "glpn", "glpn-wo-R", "glpn-wo-P")
COMBOS = tuple(f"{k}+glpn" for k in model.DRAFT_KINDS)
ABLATION = ("glpn", "glpn-wo-R", "glpn-wo-P")
CSV_NAMES = ("fig3_normalized.csv", "fig5_energy.csv", "table1_ablation.csv",
             "table4_draft.csv", "table5_gap.csv")


def _tuple(value, cast):
    if isinstance(value, str):
        value = [v for v in (p.strip() for p in value.split(",")) if v]
    return tuple(cast(v) for v in value)


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synthetic"
    n: int = 200
    d: int = 8
    kind: str = "grid"
    smoothness: int = 8
    p: float = 0.1
    k: int = 2
    features: Optional[str] = None
    edges: Optional[str] = None
    distance: Optional[str] = None
    sigma: Optional[float] = None
    threshold: float = 0.0
    mask: Optional[str] = None
    header: bool = False
    mechanisms: Tuple[str, ...] = ("MCAR", "MAR", "MNAR")
    ratios: Tuple[float, ...] = DEFAULT_RATIOS
    methods: Tuple[str, ...] = DEFAULT_METHODS
    trials: int = 1
    seed: int = 0
    workers: int = 0
    model: model.GlpnConfig = field(default_factory=model.GlpnConfig)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("mechanisms", tuple(Mechanism(str(m).upper()).value for m in _tuple(self.mechanisms, str)))
        set_("ratios", _tuple(self.ratios, float))
        set_("methods", _tuple(self.methods, str))
        if self.source not in ("synthetic", "files"):
            raise ContractError("source must be 'synthetic' or 'files'")
        if self.source == "synthetic" and self.kind not in GRAPH_KINDS:
            raise ContractError(f"graph kind must be one of {GRAPH_KINDS}")
        if self.source == "files" and self.features is None:
            raise ContractError("a file dataset needs a features path")
        if not self.ratios or any(not 0.0 < r < 1.0 for r in self.ratios):
            raise ContractError("missing ratios must lie strictly between 0 and 1")
        if not self.mechanisms:
            raise ContractError("need at least one mechanism")
        bad = [m for m in self.methods if m not in SIMPLE + COMBOS]
        if bad or not self.methods:
            raise ContractError(f"unknown method {bad[0] if bad else None!r}; "
                                f"choose from {SIMPLE + COMBOS}")
        if self.trials < 1:
            raise ContractError("trials must be >= 1")
        if self.workers < 0:
            raise ContractError("workers must be >= 0 (0 = all cores)")

    @classmethod
    def from_mapping(cls, data: Dict[str, object]) -> "ExperimentConfig":
        """Build from flat ``key -> value`` pairs; keys naming model fields
        (``epochs``, ``lr``, ``clusters`` ...) go to the model config."""
        own = {f.name: f for f in dataclasses.fields(cls)}
        model_fields = {f.name: f for f in dataclasses.fields(model.GlpnConfig)}
        top, sub = {}, {}
        for key, raw in data.items():
            key = key.replace("-", "_")
            if key in own and key != "model":
                top[key] = _coerce(raw, own[key].type)
            elif key in model_fields:
                sub[key] = _coerce(raw, model_fields[key].type)
            else:
                raise ContractError(f"unknown configuration key {key!r}")
        if sub:
            top["model"] = model.GlpnConfig(**sub)
        return cls(**top)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "model"}
        out["mechanisms"] = list(self.mechanisms)
        out["ratios"] = list(self.ratios)
        out["methods"] = list(self.methods)
        out.pop("workers")
        out["model"] = self.model.to_dict()
        return out


def _coerce(raw, annotation):
    if not isinstance(raw, str):
        return raw
    text = str(annotation)
    value = raw.strip()
    if value.lower() in ("none", "null", ""):
        return None
    if "bool" in text:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"cannot read {raw!r} as a boolean")
    try:
        if "Tuple[int" in text:
            return tuple(int(v) for v in value.split(","))
        if "Tuple" in text:
            return value
        if "float" in text:
            return float(value)
        if "int" in text:
            return int(value)
    except ValueError:
        raise ContractError(f"cannot read {raw!r} as {text}") from None
    return value


def load_config_file(path) -> Dict[str, str]:
    """Flat ``key = value`` text; ``#`` starts a comment, blank lines skip."""
    out: Dict[str, str] = {}
    with open(path) as fh:
        for number, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ContractError(f"{path}:{number}: expected key = value")
            key, value = (p.strip() for p in body.split("=", 1))
            if not key:
                raise ContractError(f"{path}:{number}: empty key")
            out[key] = value
    return out


# -- cells ---------------------------------------------------------------------


def derive_seed(seed: int, descriptor: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}|{descriptor}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True, order=True)
class Cell:
    mechanism: str
    ratio: float
    trial: int

    @property
    def descriptor(self) -> str:
        return f"mechanism={self.mechanism};ratio={self.ratio!r};trial={self.trial}"


def cells(config: ExperimentConfig) -> List[Cell]:
    return sorted(Cell(m, r, t) for m in config.mechanisms for r in config.ratios
                  for t in range(config.trials))


def load_dataset(config: ExperimentConfig, trial: int):
    """``(graph, scaling record)``; synthetic graphs are redrawn per trial."""
    if config.source == "files":
        return ingest(config.features, config.edges, config.distance, config.sigma,
                      config.threshold, config.mask, config.header)
    g = gen_synthetic(config.n, config.d, config.kind, config.smoothness,
                      seed=derive_seed(config.seed, f"graph;trial={trial}"), p=config.p, k=config.k)
    return g, None


def variant_config(base: model.GlpnConfig, method: str) -> model.GlpnConfig:
    if method == "glpn-wo-R":
        return dataclasses.replace(base, use_residual=False)
    if method == "glpn-wo-P":
        return dataclasses.replace(base, use_pyramid=False)
    if method.endswith("+glpn"):
        return dataclasses.replace(base, draft=method.split("+")[0])
    return base


def run_cell(config: ExperimentConfig, cell: Cell) -> List[dict]:
    """Every method on one cell; failures are recorded, never raised."""
    seed = derive_seed(config.seed, cell.descriptor)

    def row_for(method):
        return {"method": method, "mechanism": cell.mechanism, "ratio": cell.ratio,
                "trial": cell.trial, "seed": seed, "status": "ok", "error": None,
                "rmse": None, "mae": None, "relative_energy": None, "delta_e": None,
                "seconds": None}

    try:
        truth, record = load_dataset(config, cell.trial)
        x = truth.features
        known = truth.mask
        filled = np.where(known == 1, x, np.nanmean(np.where(known == 1, x, np.nan), axis=0))
        hide = make_mask(filled, MaskSpec(cell.mechanism, cell.ratio, seed=seed))
    except GlpnError as exc:
        error = f"{type(exc).__name__}: {exc}"
        return [dict(row_for(m), status="failed", error=error, seconds=0.0) for m in config.methods]
    mask = known * hide
    scored = (known == 1) & (hide == 0)
    graph = truth.with_mask(mask)
    lap = augmented_laplacian(truth.adjacency)
    full_truth = bool(known.all())
    e_true = dirichlet_energy(x, lap) if full_truth else None
    base = dataclasses.replace(config.model, seed=seed)
    prepared: Dict[str, tuple] = {}

    def prep(cfg):
        if cfg.draft not in prepared:
            prepared[cfg.draft] = model.prepare(graph, cfg)
        return prepared[cfg.draft]

    rows = []
    for method in config.methods:
        row = row_for(method)
        start = time.perf_counter()
        try:
            x_hat = impute_method(method, graph, base, prep)
            row["rmse"], row["mae"] = evaluate(x_hat, np.where(known == 1, x, 0.0), mask, record,
                                               eval_mask=scored)
            if full_truth and e_true > 0:
                row["delta_e"] = relative_energy_gap(x_hat, x, lap)
                row["relative_energy"] = 1.0 + row["delta_e"]
        except TrainingDivergence as exc:
            row.update(status="diverged", error=str(exc))
        except (GlpnError, FloatingPointError) as exc:
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        row["seconds"] = time.perf_counter() - start
        rows.append(row)
    return rows


def impute_method(method, graph: Graph, base: model.GlpnConfig, prep) -> np.ndarray:
    x_obs = graph.observed()
    if method == "mean":
        return baselines.mean_impute(x_obs, graph.mask).x_hat
    if method == "knn":
        return baselines.knn_impute(graph, base.knn_hops).x_hat
    if method == "soft":
        return baselines.soft_impute(x_obs, graph.mask, lam=base.soft_lambda).x_hat
    if method == "mf":
        return baselines.mf_impute(x_obs, graph.mask).x_hat
    if method in ("dgcn", "gcn"):
        train_mask, _, drafter, _ = prep(base)
        draft = baselines.restore_observed(drafter(x_obs, graph.mask), graph.features, graph.mask)
        if method == "dgcn":
            return draft
        return baselines.gcn_refine(graph, draft, hidden=base.hidden, epochs=base.epochs,
                                    lr=base.lr, seed=base.seed, drafter=drafter,
                                    bank_size=base.bank_size, drop=base.drop,
                                    train_mask=train_mask, loss_on=base.loss_on).x_hat
    cfg = variant_config(base, method)
    return model.train(graph, cfg, prep(cfg)).x_hat


# -- report --------------------------------------------------------------------


@dataclass
class ExperimentReport:
    config: dict
    rows: List[dict]
    started: str = ""
    schema: int = SCHEMA

    @property
    def failures(self) -> List[dict]:
        return [r for r in self.rows if r["status"] != "ok"]

    @property
    def diverged(self) -> bool:
        return any(r["status"] == "diverged" for r in self.rows)

    def results(self) -> List[dict]:
        """Rows without wall-clock fields, in a canonical order."""
        keep = [{k: v for k, v in r.items() if k != "seconds"} for r in self.rows]
        return sorted(keep, key=lambda r: (r["mechanism"], r["ratio"], r["trial"], r["method"]))

    def aggregate(self) -> List[dict]:
        """Trial means per (mechanism, ratio, method), normalised by ``mean``."""
        groups: Dict[tuple, List[dict]] = {}
        for r in self.rows:
            if r["status"] == "ok":
                groups.setdefault((r["mechanism"], r["ratio"], r["method"]), []).append(r)
        out = []
        for (mech, ratio, method), rs in sorted(groups.items()):
            entry = {"mechanism": mech, "ratio": ratio, "method": method, "trials": len(rs)}
            for key in ("rmse", "mae", "relative_energy", "delta_e"):
                vals = [r[key] for r in rs if r[key] is not None]
                entry[key] = float(np.mean(vals)) if vals else None
            out.append(entry)
        ref = {(e["mechanism"], e["ratio"]): e for e in out if e["method"] == "mean"}
        for e in out:
            base = ref.get((e["mechanism"], e["ratio"]))
            for key in ("rmse", "mae"):
                ok = base is not None and base[key] and e[key] is not None
                e[f"{key}_norm"] = e[key] / base[key] if ok else None
        return out

    def to_json(self) -> str:
        body = {"schema": self.schema, "units": "original", "config": self.config,
                "results": self.results(), "summary": self.aggregate(),
                "failures": len(self.failures)}
        return json.dumps(body, sort_keys=True, indent=1, allow_nan=False) + "\n"

    def timings_json(self) -> str:
        cells = {f"{r['mechanism']}|{r['ratio']!r}|{r['trial']}|{r['method']}": r["seconds"]
                 for r in self.rows}
        return json.dumps({"started": self.started, "seconds": cells}, sort_keys=True, indent=1) + "\n"

    def write(self, out_dir) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            fh.write(self.to_json())
        paths.append(path)
        path = os.path.join(out_dir, "timings.json")
        with open(path, "w") as fh:
            fh.write(self.timings_json())
        paths.append(path)
        for name, (header, rows) in self.tables().items():
            path = os.path.join(out_dir, name)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
            paths.append(path)
        return paths

    def tables(self) -> Dict[str, Tuple[List[str], List[list]]]:
        agg = self.aggregate()

        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        def pick(methods=None, cols=()):
            return [[e["mechanism"], fmt(e["ratio"]), e["method"]] + [fmt(e[c]) for c in cols]
                    for e in agg if methods is None or e["method"] in methods]

        draft_rows = ("mean", "knn", "soft", "dgcn") + COMBOS
        key = ["mechanism", "ratio", "method"]
        return {
            "fig3_normalized.csv": (key + ["rmse", "mae", "rmse_norm", "mae_norm"],
                                    pick(None, ("rmse", "mae", "rmse_norm", "mae_norm"))),
            "fig5_energy.csv": (key + ["relative_energy", "delta_e"],
                                pick(None, ("relative_energy", "delta_e"))),
            "table1_ablation.csv": (key + ["rmse", "mae"], pick(ABLATION, ("rmse", "mae"))),
            "table4_draft.csv": (key + ["rmse_norm", "mae_norm"],
                                 pick(draft_rows, ("rmse_norm", "mae_norm"))),
            "table5_gap.csv": (key + ["rmse", "mae", "delta_e"], pick(None, ("rmse", "mae", "delta_e"))),
        }


def _worker(args):
    config, cell = args
    return run_cell(config, cell)


def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None) -> ExperimentReport:
    """Run the full grid; writes ``report.json``, ``timings.json`` and the CSV
    tables when ``out_dir`` is given."""
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    todo = cells(config)
    width = config.workers or os.cpu_count() or 1
    width = min(width, len(todo))
    if width <= 1:
        chunks = [run_cell(config, c) for c in todo]
    else:
        with cf.ProcessPoolExecutor(max_workers=width) as pool:
            chunks = list(pool.map(_worker, [(config, c) for c in todo]))
    rows = [r for chunk in chunks for r in chunk]
    report = ExperimentReport(config.to_dict(), rows, started)
    if out_dir is not None:
        report.write(out_dir)
    return report
