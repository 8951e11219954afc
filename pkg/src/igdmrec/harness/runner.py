"""Single training runs, robustness suites and grid sweeps writing reports to disk."""

from __future__ import annotations

import itertools
import json
import logging
import resource
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .. import recmodel
from ..config import GRID, RunConfig, canonical_key, coerce
from ..datahub import CorruptionSpec, corrupt
from ..errors import ConfigError
from . import plotting
from .artifacts import Prepared, read_prepared, save_model

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("R@10", "R@20", "N@10", "N@20")

# Choices the method leaves open; written into every report.
RUN_NOTES = {
    "adam": "beta1=0.9 beta2=0.999 eps=1e-8 unless overridden in config",
    "l2_scope": "ID-embedding rows touched by the batch (unique users, positives, negatives)",
    "loss_reduction": "BPR mean over triplets, contrastive mean over items",
    "bipartite_layers": "mean of layers 0..layers_ui",
    "ranking_mask": "train positives only; validation items stay candidates at test time",
}


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_training(prep: Prepared, cfg: RunConfig, out_dir, corruption: CorruptionSpec | None = None,
                 figures: bool = True) -> dict:
    """Train once and write ``report.jsonl``, ``checkpoint.bin``, ``timing.json``
    and (optionally) ``curve.png`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    features = prep.features
    corr = None
    if corruption is not None:
        features = {m: corrupt(f, corruption) for m, f in features.items()}
        corr = {"mode": corruption.mode, "noise_variance": corruption.noise_variance,
                "missing_rate": corruption.missing_rate, "seed": corruption.seed}
    fp = prep.dataset.fingerprint()
    lines = [dumps({"type": "config", "config": cfg.to_dict(), "seed": cfg.seed, "dataset": fp,
                    "corruption": corr, "notes": RUN_NOTES})]
    t0 = time.perf_counter()
    result = recmodel.train(cfg, prep.dataset, features, prep.labels)
    wall = time.perf_counter() - t0
    for rec in result.history:
        lines.append(dumps({"type": "epoch", **rec}))
    final = {"type": "final", "best_epoch": result.best_epoch, "epochs_run": len(result.history),
             "test": result.test_metrics, "val": result.val_metrics,
             "graph_quality": result.graph_quality}
    lines.append(dumps(final))
    (out / "report.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_model(out / "checkpoint.bin", result, fp, corr)
    timing = dict(result.timing, wall_seconds=wall,
                  peak_rss_mb=resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0)
    (out / "timing.json").write_text(json.dumps(timing, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if figures:
        plotting.training_curve(result.history, out / "curve.png", result.best_epoch)
    return {"dir": str(out), "best_epoch": result.best_epoch, "test": result.test_metrics,
            "val": result.val_metrics, "graph_quality": result.graph_quality, "timing": timing}


def read_report(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


def config_from_report(path) -> RunConfig:
    for rec in read_report(path):
        if rec.get("type") == "config":
            return RunConfig(**rec["config"])
    raise ConfigError(f"{path}: no config record")


# -- robustness -------------------------------------------------------------------

def avg_delta(clean: dict, other: dict) -> float:
    """Mean relative drop of R@20 and N@20 against the clean run."""
    drops = [(clean[m] - other[m]) / clean[m] if clean[m] else 0.0 for m in ("R@20", "N@20")]
    return sum(drops) / len(drops)


def run_robustness(prep: Prepared, cfg: RunConfig, out_dir, noise_variance: float = 1e-4,
                   missing_rates=(0.5, 0.6, 0.7, 0.8), figures: bool = True) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conditions = [("clean", None)]
    conditions.append((f"noise_{noise_variance:g}",
                       CorruptionSpec("gaussian_noise", noise_variance=noise_variance, seed=cfg.seed)))
    for rate in missing_rates:
        if rate >= 1.0:
            log.warning("missing rate %.2f masks every item's features", rate)
        conditions.append((f"mask_{rate:g}", CorruptionSpec("modality_mask", missing_rate=rate, seed=cfg.seed)))
    rows = []
    clean = None
    for name, spec in conditions:
        res = run_training(prep, cfg, out / name, spec, figures=False)
        if clean is None:
            clean = res["test"]
        rows.append({"condition": name, "noise_variance": spec.noise_variance if spec else 0.0,
                     "missing_rate": spec.missing_rate if spec else 0.0,
                     "R@20": res["test"]["R@20"], "N@20": res["test"]["N@20"],
                     "avg_delta": avg_delta(clean, res["test"])})
    header = ["condition", "noise_variance", "missing_rate", "R@20", "N@20", "avg_delta"]
    body = ["\t".join(header)] + ["\t".join(_fmt(r[h]) for h in header) for r in rows]
    (out / "robustness.tsv").write_text("\n".join(body) + "\n", encoding="utf-8")
    if figures:
        plotting.robustness_plot(rows, out / "robustness.png")
    return rows


# -- sweeps -------------------------------------------------------------------------

def parse_axis(spec: str) -> tuple[str, list]:
    if "=" not in spec:
        raise ConfigError(f"axis must look like name=v1,v2,..., got {spec!r}")
    name, values = spec.split("=", 1)
    key = canonical_key(name)
    if key not in GRID and key not in ("knn_k", "prune_eps", "phi_visual", "p_uncond", "refresh_interval",
                                       "embed_dim", "layers_ui", "layers_ii", "lr", "lambda_reg"):
        raise ConfigError(f"{name!r} is not a sweepable axis")
    vals = [coerce(key, v) for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"axis {name!r} has no values")
    return key, vals


def _sweep_point(args):
    root, cfg_dict, out_dir, figures = args
    prep = read_prepared(root)
    return run_training(prep, RunConfig(**cfg_dict), out_dir, figures=figures)


def run_sweep(prep: Prepared, base: RunConfig, axes: list[tuple[str, list]], out_dir, jobs: int = 1,
              figures: bool = True) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [a for a, _ in axes]
    points = list(itertools.product(*[v for _, v in axes]))
    tasks = []
    for point in points:
        cfg = base.replace(**dict(zip(names, point)))
        sub = out / "_".join(f"{n}={_fmt(v)}" for n, v in zip(names, point))
        tasks.append((str(prep.root), cfg.to_dict(), str(sub), False))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    rows = []
    for point, res in zip(points, results):
        row = dict(zip(names, point))
        row.update({m: res["test"][m] for m in METRIC_COLUMNS})
        row["best_epoch"] = res["best_epoch"]
        row["report"] = str(Path(res["dir"]).relative_to(out) / "report.jsonl")
        rows.append(row)
    header = names + list(METRIC_COLUMNS) + ["best_epoch", "report"]
    body = ["\t".join(header)] + ["\t".join(_fmt(r[h]) for h in header) for r in rows]
    (out / "summary.tsv").write_text("\n".join(body) + "\n", encoding="utf-8")
    if figures:
        plotting.sweep_plot(rows, names, out / "sweep.png")
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
