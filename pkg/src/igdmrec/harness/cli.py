"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 numeric failure, 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import scipy.sparse as sp

from .. import graphs as gr
from ..config import ABLATIONS, VARIANTS, RunConfig, resolve, write_config_file
from ..datahub import (MODALITIES, CorruptionSpec, corrupt, load_features, load_interactions,
                       synth_planted)
from ..errors import ConfigError, DataFormatError, IGDMError
from ..metrics import evaluate_scores
from ..recmodel import build_graphs, score_matrix
from . import runner
from .artifacts import load_model, read_prepared, write_prepared

log = logging.getLogger("igdmrec")

SYNTH_KEYS = {"users": int, "items": int, "clusters": int, "seed": int, "dim": int,
              "noise": float, "per_user": int}
SYNTH_DEFAULTS = {"users": 200, "items": 100, "clusters": 2, "seed": 0, "dim": 32,
                  "noise": 0.6, "per_user": 12}


def _kv(items, allowed=None) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if allowed is not None:
            if k not in allowed:
                raise ConfigError(f"unknown key {k!r}; expected one of {sorted(allowed)}")
            try:
                v = allowed[k](v)
            except ValueError as exc:
                raise ConfigError(f"{k}: cannot parse {v!r}") from exc
        out[k] = v
    return out


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError as exc:
        raise ConfigError(f"--k expects comma-separated integers, got {text!r}") from exc
    if not ks or min(ks) < 1:
        raise ConfigError("--k values must be positive")
    return ks


def _config(args) -> RunConfig:
    if getattr(args, "from_report", None):
        base = runner.config_from_report(args.from_report)
        return resolve(base, None, args.set, args.variant, args.ablate, args.seed)
    return resolve(None, args.config, args.set, args.variant, args.ablate, args.seed)


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- verbs ----------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    labels = None
    if args.synth is not None:
        spec = dict(SYNTH_DEFAULTS, **_kv(args.synth, SYNTH_KEYS))
        ds, features, labels = synth_planted(spec["users"], spec["items"], spec["clusters"], spec["dim"],
                                             spec["noise"], spec["seed"], spec["per_user"])
        source = {"synth": spec}
    else:
        if not args.interactions:
            raise ConfigError("prepare needs --synth or --interactions")
        if not Path(args.interactions).exists():
            raise DataFormatError(f"missing interaction file {args.interactions}")
        feats = _kv(args.features)
        for m in MODALITIES:
            if m not in feats:
                raise ConfigError(f"--features {m}=PATH is required")
        for m, p in feats.items():
            if not Path(p).exists():
                raise DataFormatError(f"missing feature file {p}")
        ds = load_interactions(args.interactions, seed=args.seed, core=args.core)
        features = {}
        for m, p in sorted(feats.items()):
            manifest = Path(p + ".json")
            if not manifest.exists():
                raise DataFormatError(f"missing feature manifest {manifest}")
            f = load_features(p, manifest, ds.item_ids)
            features[m] = f
        source = {"interactions": str(args.interactions), "seed": args.seed, "core": args.core,
                  "features": {m: str(p) for m, p in sorted(feats.items())}}
    root = write_prepared(args.out, ds, features, labels, source)
    _print({"prepared": str(root), "users": ds.num_users, "items": ds.num_items,
            "train": len(ds.train), "val": len(ds.val), "test": len(ds.test),
            "fingerprint": ds.fingerprint()})
    return 0


def cmd_train(args) -> int:
    prep = read_prepared(args.data)
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(out / "config.cfg", cfg)
    res = runner.run_training(prep, cfg, out, figures=not args.no_figures)
    _print({"out": str(out), "best_epoch": res["best_epoch"], "test": res["test"],
            "graph_quality": res["graph_quality"]})
    return 0


def cmd_eval(args) -> int:
    prep = read_prepared(args.data)
    ks = _ks(args.k)
    model = load_model(args.checkpoint, prep.dataset.fingerprint())
    cfg = model.config
    features = prep.features
    corr = model.meta.get("corruption")
    if corr:
        spec = CorruptionSpec(**corr)
        features = {m: corrupt(f, spec) for m, f in features.items()}
    g = build_graphs(cfg, prep.dataset, features)
    if cfg.item_graphs:
        if model.diffusion is None:
            raise DataFormatError(f"{args.checkpoint}: item-graph model without a diffusion graph")
        g.diffusion = model.diffusion
        g.diffusion_norm = sp.csr_matrix(gr.normalize_sym(model.diffusion))
    ds = prep.dataset
    metrics = evaluate_scores(score_matrix(cfg, g, model.embeddings), ds.train_items, ds.test_items, ks=ks)
    record = {"type": "eval", "checkpoint": str(args.checkpoint), "dataset": ds.fingerprint(),
              "ks": list(ks), "test": metrics}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(runner.dumps(record) + "\n", encoding="utf-8")
    _print(record)
    return 0


def cmd_robustness(args) -> int:
    prep = read_prepared(args.data)
    cfg = _config(args)
    rates = tuple(float(r) for r in args.mask.split(",") if r.strip())
    if any(r < 0 or r > 1 for r in rates):
        raise ConfigError("mask rates must lie in [0, 1]")
    rows = runner.run_robustness(prep, cfg, args.out, args.noise, rates, figures=not args.no_figures)
    for r in rows:
        _print(r)
    return 0


def cmd_sweep(args) -> int:
    prep = read_prepared(args.data)
    cfg = _config(args)
    if not args.axis:
        raise ConfigError("sweep needs at least one --axis name=v1,v2")
    axes = [runner.parse_axis(a) for a in args.axis]
    names = [a for a, _ in axes]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate sweep axis")
    for name, values in axes:
        for v in values:
            cfg.replace(**{name: v})  # validate every point before launching
    rows = runner.run_sweep(prep, cfg, axes, args.out, jobs=max(1, args.jobs),
                            figures=not args.no_figures)
    for r in rows:
        _print(r)
    return 0


def cmd_export_graph(args) -> int:
    prep = read_prepared(args.data)
    if args.kind == "diffusion":
        if not args.checkpoint:
            raise ConfigError("exporting the diffusion graph needs --checkpoint")
        model = load_model(args.checkpoint, prep.dataset.fingerprint())
        if model.diffusion is None:
            raise DataFormatError(f"{args.checkpoint} holds no diffusion graph")
        adj = model.diffusion
    else:
        if args.checkpoint:
            cfg = load_model(args.checkpoint, prep.dataset.fingerprint()).config
        else:
            cfg = resolve(None, args.config, args.set)
        cfg = cfg.replace(item_graphs=True)
        g = build_graphs(cfg, prep.dataset, prep.features)
        adj = g.semantic if args.kind == "semantic" else g.behavioral
    if args.normalized:
        adj = gr.normalize_sym(adj)
    gr.write_edge_list(args.out, adj)
    _print({"graph": args.kind, "out": str(args.out), "edges": int((adj != 0).sum())})
    return 0


# -- parser --------------------------------------------------------------------------

def _run_options(p, with_out=True):
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--from-report", help="reuse the resolved config embedded in a report.jsonl")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--ablate", choices=ABLATIONS)
    p.add_argument("--no-figures", action="store_true")
    if with_out:
        p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igdmrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("prepare", help="build split files and feature matrices")
    p.add_argument("--synth", nargs="*", metavar="KEY=VALUE",
                   help="planted dataset: users items clusters seed dim noise per_user")
    p.add_argument("--interactions", help="user<TAB>item file")
    p.add_argument("--features", nargs="*", metavar="MODALITY=PATH",
                   help="raw float32 matrices with PATH.json manifests")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--core", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model")
    _run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", default="10,20")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="clean, noisy and masked-modality runs")
    _run_options(p)
    p.add_argument("--noise", type=float, default=1e-4, help="Gaussian noise variance")
    p.add_argument("--mask", default="0.5,0.6,0.7,0.8", help="missing rates")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("sweep", help="grid over one or more config axes")
    _run_options(p)
    p.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-graph", help="write an item graph as an edge list")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", dest="kind", choices=("semantic", "behavioral", "diffusion"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[])
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IGDMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
