"""Command-line entry point.

Subcommands: ``gen`` (synthetic dataset), ``impute`` (fill a CSV dataset),
``verify`` (energy-bound checks), ``bench`` (experiment grid) and ``energy``
(Dirichlet energy of a dataset or of an imputation).

Exit codes: 0 success, 1 usage error, 2 data error, 3 bound violation,
4 training divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Dict, List, Optional

from . import energy, model
from .errors import ContractError, DataError, GlpnError, TrainingDivergence
from .graph import dirichlet_energy, spectral_cache
from .harness import io
from .harness.experiment import (ExperimentConfig, impute_method, load_config_file, run_experiment,
                                 variant_config)
from .harness.synthetic import GRAPH_KINDS, gen_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BOUND, EXIT_DIVERGED = 0, 1, 2, 3, 4
VERIFY_CHOICES = ("eq2", "prop32", "eq10", "prop51", "appendixD", "all")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glpn", description=__doc__.split("\n\n")[0])
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--out", default=None, help="output directory (default ./glpn-out)")
    p.add_argument("--config", default=None, help="flat key = value configuration file")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic smooth-signal dataset")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--kind", choices=GRAPH_KINDS, default="grid")
    g.add_argument("--smoothness", type=int, default=8)
    g.add_argument("--p", type=float, default=0.1, help="Erdos-Renyi edge probability")
    g.add_argument("--k", type=int, default=2, help="ring-lattice half-width")

    def dataset_args(q):
        q.add_argument("--features", required=True)
        q.add_argument("--edges")
        q.add_argument("--distance")
        q.add_argument("--sigma", type=float)
        q.add_argument("--threshold", type=float, default=0.0)
        q.add_argument("--mask")
        q.add_argument("--header", action="store_true", help="skip one header row in every CSV")

    i = sub.add_parser("impute", help="impute the missing entries of a CSV dataset")
    dataset_args(i)
    i.add_argument("--method", default="glpn")
    i.add_argument("--epochs", type=int)
    i.add_argument("--save-params", help="also write the trained GLPN parameters here")

    v = sub.add_parser("verify", help="numerically check the Dirichlet-energy bounds")
    v.add_argument("which", nargs="?", choices=VERIFY_CHOICES, default="all")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--mc-samples", type=int, default=10_000)

    b = sub.add_parser("bench", help="run an experiment grid and write the report")
    b.add_argument("--trials", type=int)
    b.add_argument("--ratios")
    b.add_argument("--mechanisms")
    b.add_argument("--methods")
    b.add_argument("--n", type=int)
    b.add_argument("--kind", choices=GRAPH_KINDS)
    b.add_argument("--epochs", type=int)
    b.add_argument("--workers", type=int)

    e = sub.add_parser("energy", help="Dirichlet energy of a dataset, or the gap of an imputation")
    dataset_args(e)
    e.add_argument("--imputed", help="CSV of imputed features in original units")
    return p


def _out(args) -> str:
    out = args.out or "glpn-out"
    os.makedirs(out, exist_ok=True)
    return out


def _settings(args) -> Dict[str, str]:
    return load_config_file(args.config) if args.config else {}


def cmd_gen(args) -> int:
    g = gen_synthetic(args.n, args.d, args.kind, args.smoothness,
                      seed=args.seed or 0, p=args.p, k=args.k)
    out = _out(args)
    io.write_matrix(os.path.join(out, "features.csv"), g.features)
    io.write_edges(os.path.join(out, "edges.csv"), g.adjacency)
    print(json.dumps({"n": g.n, "d": g.d, "kind": args.kind, "out": out}, sort_keys=True))
    return EXIT_OK


def _ingest(args):
    return io.ingest(args.features, args.edges, args.distance, args.sigma, args.threshold,
                     args.mask, args.header)


def cmd_impute(args) -> int:
    graph, record = _ingest(args)
    if graph.mask.all():
        raise DataError("the dataset has no missing entries")
    model_keys = {f.name for f in dataclasses.fields(model.GlpnConfig)}
    settings = {k: v for k, v in _settings(args).items() if k in model_keys}
    cfg = ExperimentConfig.from_mapping(settings).model
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cache: Dict[str, tuple] = {}

    def prep(c):
        if c.draft not in cache:
            cache[c.draft] = model.prepare(graph, c)
        return cache[c.draft]

    out = _out(args)
    method = args.method
    known = ("mean", "knn", "soft", "mf", "dgcn", "gcn", "glpn", "glpn-wo-R", "glpn-wo-P")
    if method not in known and not (method.endswith("+glpn") and
                                    method.split("+")[0] in model.DRAFT_KINDS):
        raise UsageError(f"unknown method {method!r}")
    if args.save_params and "glpn" in method:
        variant = variant_config(cfg, method)
        report = model.train(graph, variant, prep(variant))
        model.save_params(args.save_params, report.params, variant)
        x_hat = report.x_hat
    else:
        x_hat = impute_method(method, graph, cfg, prep)
    path = os.path.join(out, "imputed.csv")
    io.write_matrix(path, record.inverse(x_hat))
    print(json.dumps({"method": method, "missing": int((graph.mask == 0).sum()), "out": path},
                     sort_keys=True))
    return EXIT_OK


def _verify(which, trials, seed, mc_samples):
    if which not in VERIFY_CHOICES:
        raise UsageError(f"unknown bound {which!r}")
    if trials < 1:
        raise UsageError("--trials must be >= 1")
    return energy.run_all(trials=trials, seed=seed, which=which, mc_samples=mc_samples)


def verify_bounds_command(which: str = "all", trials: int = 1000, seed: int = 0,
                          out: Optional[str] = None, mc_samples: int = 10_000):
    """Run the verifiers; returns ``(exit status, JSONL text)``.

    The status is nonzero exactly when some report fails.  With ``out`` the
    JSONL is also written to ``out/bounds.jsonl``.
    """
    reports = _verify(which, trials, seed, mc_samples)
    text = energy.to_jsonl(reports)
    if out is not None:
        with open(os.path.join(out, "bounds.jsonl"), "w") as fh:
            fh.write(text)
    return (EXIT_BOUND if any(not r.passed for r in reports) else EXIT_OK), text


def cmd_verify(args) -> int:
    reports = _verify(args.which, args.trials, args.seed or 0, args.mc_samples)
    out = _out(args)
    with open(os.path.join(out, "bounds.jsonl"), "w") as fh:
        fh.write(energy.to_jsonl(reports))
    print(json.dumps(energy.summarize(reports), sort_keys=True))
    return EXIT_BOUND if any(not r.passed for r in reports) else EXIT_OK


def cmd_bench(args) -> int:
    settings: Dict[str, object] = dict(_settings(args))
    for key in ("trials", "ratios", "mechanisms", "methods", "n", "kind", "epochs", "workers"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if args.seed is not None:
        settings["seed"] = args.seed
    config = ExperimentConfig.from_mapping(settings)
    out = _out(args)
    report = run_experiment(config, out)
    print(json.dumps({"cells": len(report.rows), "failures": len(report.failures), "out": out},
                     sort_keys=True))
    if report.diverged:
        return EXIT_DIVERGED
    return EXIT_DATA if report.failures else EXIT_OK


def cmd_energy(args) -> int:
    graph, record = _ingest(args)
    cache = spectral_cache(graph.adjacency)
    result = {"n": graph.n, "d": graph.d, "lambda_max": cache.lambda_max,
              "lambda_1": cache.lambda_1}
    observed_all = bool(graph.mask.all())
    if observed_all:
        result["energy"] = dirichlet_energy(graph.features, cache.laplacian)
    if args.imputed:
        x_hat = io.read_matrix(args.imputed, args.header)
        if x_hat.shape != graph.features.shape:
            raise DataError(f"imputed matrix is {x_hat.shape}, features are {graph.features.shape}")
        scaled = record.transform(x_hat)
        result["energy_imputed"] = dirichlet_energy(scaled, cache.laplacian)
        if observed_all:
            result["delta_e"] = energy.relative_energy_gap(scaled, graph.features, cache)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "impute": cmd_impute, "verify": cmd_verify, "bench": cmd_bench,
            "energy": cmd_energy}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ContractError, GlpnError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
