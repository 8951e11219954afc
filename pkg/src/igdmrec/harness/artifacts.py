"""Prepared-dataset directories and model checkpoints on disk."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..bgd import CDNet
from ..config import RunConfig
from ..datahub import MODALITIES, InteractionDataset, ModalityFeatures, load_features, write_features
from ..errors import ArtifactMismatch, DataFormatError
from ..recmodel import EmbeddingTable, TrainResult


@dataclass
class Prepared:
    root: Path
    dataset: InteractionDataset
    features: dict[str, ModalityFeatures]
    labels: np.ndarray | None
    meta: dict


def _write_pairs(path: Path, pairs: np.ndarray) -> None:
    lines = [f"{u}\t{i}" for u, i in pairs.tolist()]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _read_pairs(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataFormatError(f"missing split file {path}")
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 'user<TAB>item'")
        rows.append((int(parts[0]), int(parts[1])))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def write_prepared(root, ds: InteractionDataset, features: dict[str, ModalityFeatures],
                   labels=None, source: dict | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    _write_pairs(root / "train.tsv", ds.train)
    _write_pairs(root / "val.tsv", ds.val)
    _write_pairs(root / "test.tsv", ds.test)
    for modality, feats in sorted(features.items()):
        write_features(root / f"{modality}.f32", feats, ds.item_ids)
    if labels is not None:
        (root / "labels.tsv").write_text(
            "".join(f"{i}\t{int(c)}\n" for i, c in enumerate(np.asarray(labels).tolist())), encoding="utf-8")
    meta = {"num_users": ds.num_users, "num_items": ds.num_items, "user_ids": ds.user_ids,
            "item_ids": ds.item_ids, "modalities": sorted(features), "fingerprint": ds.fingerprint(),
            "source": source or {}, "stats": ds.stats}
    (root / "dataset.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return root


def read_prepared(root) -> Prepared:
    root = Path(root)
    mpath = root / "dataset.json"
    if not mpath.exists():
        raise DataFormatError(f"{root}: not a prepared dataset (missing dataset.json)")
    meta = json.loads(mpath.read_text(encoding="utf-8"))
    ds = InteractionDataset(meta["num_users"], meta["num_items"], _read_pairs(root / "train.tsv"),
                            _read_pairs(root / "val.tsv"), _read_pairs(root / "test.tsv"),
                            meta["user_ids"], meta["item_ids"], meta.get("stats", {}))
    ds.validate()
    if ds.fingerprint() != meta["fingerprint"]:
        raise ArtifactMismatch(f"{root}: split files do not match dataset.json fingerprint")
    features = {}
    for modality in meta.get("modalities", MODALITIES):
        fpath = root / f"{modality}.f32"
        if not fpath.exists():
            raise DataFormatError(f"missing feature file {fpath}")
        features[modality] = load_features(fpath, root / f"{modality}.f32.json", ds.item_ids)
    labels = None
    lpath = root / "labels.tsv"
    if lpath.exists():
        rows = [line.split("\t") for line in lpath.read_text(encoding="utf-8").splitlines() if line]
        labels = np.array([int(c) for _, c in rows], dtype=np.int64)
    return Prepared(root, ds, features, labels, meta)


def save_model(path, result: TrainResult, dataset_fp: str, corruption: dict | None = None) -> None:
    arrays = {"embed.user": result.embeddings.user, "embed.item": result.embeddings.item}
    if result.cdnet is not None:
        arrays.update({f"cdnet.{k}": v for k, v in result.cdnet.params.items()})
    if result.graphs.diffusion is not None:
        cols = result.graphs.diffusion
        arrays["graph.diffusion"] = cols
    meta = {"config": result.config.to_dict(), "config_digest": result.config.digest(),
            "dataset": dataset_fp, "best_epoch": result.best_epoch, "corruption": corruption,
            "test_metrics": result.test_metrics}
    checkpoint.save(path, arrays, meta)


@dataclass
class LoadedModel:
    config: RunConfig
    embeddings: EmbeddingTable
    cdnet: CDNet | None
    diffusion: np.ndarray | None
    meta: dict


def load_model(path, dataset_fp: str | None = None) -> LoadedModel:
    arrays, meta = checkpoint.load(path)
    if dataset_fp is not None and meta.get("dataset") != dataset_fp:
        raise ArtifactMismatch(f"checkpoint {path} was trained on dataset {meta.get('dataset', '?')[:12]}, "
                               f"not {dataset_fp[:12]}")
    cfg = RunConfig(**meta["config"])
    emb = EmbeddingTable(arrays["embed.user"], arrays["embed.item"])
    net = None
    cd = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("cdnet.")}
    if cd:
        net = CDNet(emb.item.shape[0], cfg.latent_dim, np.random.default_rng(0), codec=cfg.codec)
        net.params = cd
    return LoadedModel(cfg, emb, net, arrays.get("graph.diffusion"), meta)
