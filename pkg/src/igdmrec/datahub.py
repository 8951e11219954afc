"""Interaction and modality-feature ingestion, splits, BPR sampling,
robustness corruptions and the planted-cluster generator."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import rng as rngmod
from .errors import ConfigError, DataFormatError, NumericalError

log = logging.getLogger(__name__)

MODALITIES = ("visual", "textual")


@dataclass
class InteractionDataset:
    num_users: int
    num_items: int
    train: np.ndarray  # (n, 2) int64 rows of (user, item)
    val: np.ndarray
    test: np.ndarray
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            setattr(self, name, arr)
        if not self.user_ids:
            self.user_ids = [str(u) for u in range(self.num_users)]
        if not self.item_ids:
            self.item_ids = [str(i) for i in range(self.num_items)]
        self.train_items = _group(self.train, self.num_users)
        self.val_items = _group(self.val, self.num_users)
        self.test_items = _group(self.test, self.num_users)

    def validate(self) -> None:
        for name in ("train", "val", "test"):
            arr = getattr(self, name)
            if arr.size and (arr[:, 0].min() < 0 or arr[:, 0].max() >= self.num_users
                             or arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_items):
                raise DataFormatError(f"{name} split has out-of-range indices")
        seen = set()
        for name in ("train", "val", "test"):
            pairs = set(map(tuple, getattr(self, name).tolist()))
            if seen & pairs:
                raise DataFormatError(f"{name} split overlaps an earlier split")
            seen |= pairs
        empty = [u for u in range(self.num_users) if not self.train_items[u]]
        if empty:
            raise DataFormatError(f"{len(empty)} users have no train positives")

    def train_matrix(self) -> sp.csr_matrix:
        """Binary |U| x |I| matrix built from train pairs only."""
        data = np.ones(len(self.train))
        mat = sp.csr_matrix((data, (self.train[:, 0], self.train[:, 1])),
                            shape=(self.num_users, self.num_items))
        mat.sum_duplicates()
        mat.data[:] = 1.0
        return mat

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.num_users}:{self.num_items}".encode())
        for name in ("train", "val", "test"):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.train if name == "train" else getattr(self, name),
                                          dtype="<i8").tobytes())
        h.update("\n".join(self.user_ids).encode())
        h.update(b"\x00")
        h.update("\n".join(self.item_ids).encode())
        return h.hexdigest()


def _group(pairs: np.ndarray, n: int) -> list[set[int]]:
    out: list[set[int]] = [set() for _ in range(n)]
    for u, i in pairs.tolist():
        out[u].add(i)
    return out


@dataclass
class ModalityFeatures:
    modality: str
    matrix: np.ndarray
    missing: np.ndarray | None = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if not np.all(np.isfinite(self.matrix)):
            raise NumericalError(f"{self.modality} features contain NaN/Inf")
        if self.missing is None:
            self.missing = ~np.any(self.matrix != 0.0, axis=1)

    @property
    def num_items(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class CorruptionSpec:
    mode: str
    noise_variance: float = 0.0
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("gaussian_noise", "modality_mask"):
            raise ConfigError(f"unknown corruption mode {self.mode!r}")
        if self.mode == "modality_mask" and not 0.0 <= self.missing_rate <= 1.0:
            raise ConfigError(f"missing_rate must lie in [0, 1], got {self.missing_rate}")
        if self.mode == "gaussian_noise" and self.noise_variance < 0:
            raise ConfigError(f"noise_variance must be >= 0, got {self.noise_variance}")


# -- loading ---------------------------------------------------------------

def read_pairs(path) -> tuple[list[tuple[str, str]], int]:
    """Parse ``user<TAB>item`` lines; returns unique pairs in file order and
    the number of duplicates dropped."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    pairs, seen, dups = [], set(), 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataFormatError(f"{path}:{lineno}: expected 'user<TAB>item', got {line!r}")
        key = (parts[0], parts[1])
        if key in seen:
            dups += 1
            continue
        seen.add(key)
        pairs.append(key)
    if not pairs:
        raise DataFormatError(f"{path}: no interactions")
    return pairs, dups


def k_core(pairs: list[tuple[str, str]], core: int) -> list[tuple[str, str]]:
    """Iteratively drop users and items with fewer than ``core`` interactions."""
    if core <= 1:
        return pairs
    while True:
        ucount: dict[str, int] = {}
        icount: dict[str, int] = {}
        for u, i in pairs:
            ucount[u] = ucount.get(u, 0) + 1
            icount[i] = icount.get(i, 0) + 1
        kept = [(u, i) for u, i in pairs if ucount[u] >= core and icount[i] >= core]
        if len(kept) == len(pairs):
            return kept
        pairs = kept


def split_counts(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes for a user with ``n`` positives, 8:1:1."""
    n_test = max(1, int(np.floor(n * 0.1)))
    n_val = max(1, int(np.floor(n * 0.1)))
    return n - n_val - n_test, n_val, n_test


def split_pairs(user_items: list[list[int]], seed: int):
    gen = rngmod.stream(seed, "split")
    train, val, test = [], [], []
    for u, items in enumerate(user_items):
        items = np.array(sorted(items), dtype=np.int64)
        gen.shuffle(items)
        n_tr, n_va, _ = split_counts(len(items))
        train += [(u, i) for i in items[:n_tr]]
        val += [(u, i) for i in items[n_tr:n_tr + n_va]]
        test += [(u, i) for i in items[n_tr + n_va:]]
    return np.array(train, dtype=np.int64), np.array(val, dtype=np.int64), np.array(test, dtype=np.int64)


def load_interactions(path, seed: int = 0, core: int = 5, min_user: int = 3) -> InteractionDataset:
    pairs, dups = read_pairs(path)
    if dups:
        log.warning("dropped %d duplicate interaction lines", dups)
    n_raw = len(pairs)
    pairs = k_core(pairs, core)
    per_user: dict[str, list[str]] = {}
    for u, i in pairs:
        per_user.setdefault(u, []).append(i)
    dropped = sorted(u for u, its in per_user.items() if len(its) < min_user)
    if dropped:
        log.warning("dropped %d users with fewer than %d interactions", len(dropped), min_user)
    users = sorted(u for u in per_user if len(per_user[u]) >= min_user)
    if not users:
        raise DataFormatError(f"{path}: no users left after filtering")
    items = sorted({i for u in users for i in per_user[u]})
    uidx = {u: n for n, u in enumerate(users)}
    iidx = {i: n for n, i in enumerate(items)}
    user_items = [[iidx[i] for i in per_user[u]] for u in users]
    train, val, test = split_pairs(user_items, seed)
    ds = InteractionDataset(len(users), len(items), train, val, test, users, items,
                            stats={"raw_pairs": n_raw, "duplicates": dups,
                                   "core_filtered_pairs": n_raw - len(pairs),
                                   "dropped_users": len(dropped)})
    ds.validate()
    return ds


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read feature manifest {path}: {exc}") from exc
    for key in ("num_items", "dim", "modality", "item_ids"):
        if key not in manifest:
            raise DataFormatError(f"manifest {path} lacks {key!r}")
    if len(manifest["item_ids"]) != manifest["num_items"]:
        raise DataFormatError(f"manifest {path}: {len(manifest['item_ids'])} ids for "
                              f"num_items={manifest['num_items']}")
    return manifest


def load_features(path, manifest, item_ids: list[str] | None = None) -> ModalityFeatures:
    """Read a raw little-endian float32 matrix and align rows to ``item_ids``."""
    if not isinstance(manifest, dict):
        manifest = read_manifest(manifest)
    n, dim = int(manifest["num_items"]), int(manifest["dim"])
    raw = Path(path).read_bytes()
    expected = 4 * n * dim
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    mat = np.frombuffer(raw, dtype="<f4").reshape(n, dim).astype(np.float64)
    if item_ids is not None:
        pos = {iid: r for r, iid in enumerate(manifest["item_ids"])}
        missing = [iid for iid in item_ids if iid not in pos]
        if missing:
            raise DataFormatError(f"{path}: {len(missing)} item ids absent from manifest: "
                                  f"{missing[:20]}")
        mat = mat[[pos[iid] for iid in item_ids]]
    return ModalityFeatures(manifest["modality"], mat)


def write_features(path, features: ModalityFeatures, item_ids: list[str]) -> Path:
    """Write ``<path>`` raw float32 plus ``<path>.json`` manifest."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(features.matrix, dtype="<f4").tobytes())
    manifest = {"num_items": features.num_items, "dim": int(features.matrix.shape[1]),
                "modality": features.modality, "item_ids": list(item_ids)}
    mpath = path.with_name(path.name + ".json")
    mpath.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return mpath


# -- sampling and corruption -------------------------------------------------

def sample_bpr_triplets(ds: InteractionDataset, epoch_seed: int):
    """One (u, i, j) per train positive, j drawn uniformly from the user's
    non-train items. Returned as three int arrays in shuffled order."""
    gen = np.random.default_rng(epoch_seed)
    full = [u for u in range(ds.num_users) if len(ds.train_items[u]) >= ds.num_items]
    if full:
        log.warning("skipping %d users whose train set covers every item", len(full))
    pairs = ds.train
    if full:
        pairs = pairs[~np.isin(pairs[:, 0], full)]
    order = gen.permutation(len(pairs))
    users, pos = pairs[order, 0], pairs[order, 1]
    neg = gen.integers(0, ds.num_items, size=len(users))
    bad = np.array([j in ds.train_items[u] for u, j in zip(users.tolist(), neg.tolist())], dtype=bool)
    while bad.any():
        idx = np.flatnonzero(bad)
        neg[idx] = gen.integers(0, ds.num_items, size=len(idx))
        bad[idx] = [j in ds.train_items[u] for u, j in zip(users[idx].tolist(), neg[idx].tolist())]
    return users, pos, neg


def corrupt(features: ModalityFeatures, spec: CorruptionSpec) -> ModalityFeatures:
    gen = rngmod.stream(spec.seed, "corrupt", MODALITIES.index(features.modality)
                        if features.modality in MODALITIES else 99)
    mat = features.matrix.copy()
    missing = features.missing.copy()
    if spec.mode == "gaussian_noise":
        if spec.noise_variance > 0:
            mat += gen.normal(0.0, np.sqrt(spec.noise_variance), size=mat.shape)
    else:
        n_mask = int(np.floor(spec.missing_rate * features.num_items))
        rows = gen.choice(features.num_items, size=n_mask, replace=False)
        mat[rows] = 0.0
        missing[rows] = True
    return ModalityFeatures(features.modality, mat, missing)


# -- planted-structure generator ----------------------------------------------

def synth_planted(num_users: int, num_items: int, num_clusters: int, feature_dim: int,
                  noise_level: float, seed: int, interactions_per_user: int = 12,
                  in_cluster: float = 0.9):
    """Users and items share latent clusters; features are cluster centroids
    plus isotropic Gaussian noise of scale ``noise_level``.

    Returns ``(dataset, {modality: features}, item_labels)``.
    """
    if num_clusters < 1 or num_items % num_clusters:
        raise ConfigError("num_items must be divisible by num_clusters")
    size = num_items // num_clusters
    if interactions_per_user > num_items or interactions_per_user < 3:
        raise ConfigError("interactions_per_user must lie in [3, num_items]")
    gen = rngmod.stream(seed, "synth")
    labels = np.repeat(np.arange(num_clusters), size)
    user_cluster = gen.integers(0, num_clusters, size=num_users)
    user_items = []
    for u in range(num_users):
        own = np.flatnonzero(labels == user_cluster[u])
        other = np.flatnonzero(labels != user_cluster[u])
        n_in = int(gen.binomial(interactions_per_user, in_cluster)) if len(other) else interactions_per_user
        n_in = min(n_in, len(own))
        n_out = min(interactions_per_user - n_in, len(other))
        chosen = list(gen.choice(own, size=n_in, replace=False))
        if n_out:
            chosen += list(gen.choice(other, size=n_out, replace=False))
        user_items.append([int(i) for i in chosen])
    train, val, test = split_pairs(user_items, seed)
    ds = InteractionDataset(num_users, num_items, train, val, test,
                            [f"u{u}" for u in range(num_users)], [f"i{i}" for i in range(num_items)])
    ds.validate()
    features = {}
    for modality in MODALITIES:
        centroids = gen.normal(size=(num_clusters, feature_dim))
        centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
        noise = gen.normal(size=(num_items, feature_dim)) * noise_level
        features[modality] = ModalityFeatures(modality, centroids[labels] + noise)
    return ds, features, labels
