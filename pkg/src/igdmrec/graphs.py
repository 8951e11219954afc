"""Item-item graphs: modality KNN, behavioral co-occurrence, and the
symmetric normalization used for propagation.

Adjacencies are dense ``(|I|, |I|)`` float64 arrays at construction time;
:func:`to_sparse` gives the column-compressed mirror used by propagation.
Column ``j`` of an item graph holds the neighbors selected *for* item ``j``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .datahub import InteractionDataset
from .errors import ConfigError, DataFormatError


def cosine_similarity_matrix(features: np.ndarray) -> np.ndarray:
    g = np.asarray(features, dtype=np.float64)
    gram = g @ g.T
    sq = np.diag(gram).copy()
    norms = np.sqrt(sq)
    zero = norms == 0.0
    norms[zero] = 1.0
    sim = gram / norms[:, None] / norms[None, :]
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    return sim


def topk_mask_columns(scores: np.ndarray, k: int) -> np.ndarray:
    """Binary mask with the ``k`` largest entries of each column set to 1.

    Ties go to the smaller row index.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    n_rows = scores.shape[0]
    k = min(k, n_rows)
    order = np.argsort(-scores, axis=0, kind="stable")[:k]
    mask = np.zeros(scores.shape)
    mask[order, np.arange(scores.shape[1])[None, :]] = 1.0
    return mask


def knn_columns(sim: np.ndarray, k: int) -> np.ndarray:
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ConfigError(f"knn_columns needs a square matrix, got {sim.shape}")
    return topk_mask_columns(sim, k)


def fuse_modalities(graphs: dict[str, np.ndarray], weights: dict[str, float]) -> np.ndarray:
    if set(graphs) != set(weights):
        raise ConfigError(f"modality mismatch: graphs {sorted(graphs)} vs weights {sorted(weights)}")
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-12 or any(w < 0 for w in weights.values()):
        raise ConfigError(f"modality weights must be nonnegative and sum to 1, got {weights}")
    names = sorted(graphs)
    out = np.zeros_like(graphs[names[0]], dtype=np.float64)
    for name in names:
        out += weights[name] * graphs[name]
    return out


def modality_weights(phi_visual: float) -> dict[str, float]:
    if not 0.0 <= phi_visual <= 1.0:
        raise ConfigError(f"phi_visual must lie in [0, 1], got {phi_visual}")
    return {"visual": phi_visual, "textual": 1.0 - phi_visual}


def semantic_graphs(features: dict, k: int) -> dict[str, np.ndarray]:
    """Per-modality binary KNN graphs from a ``{modality: ModalityFeatures}`` map."""
    return {m: knn_columns(cosine_similarity_matrix(f.matrix), k) for m, f in features.items()}


def cooccurrence(ds: InteractionDataset) -> np.ndarray:
    a = ds.train_matrix()
    return np.asarray((a.T @ a).todense(), dtype=np.float64)


def build_behavioral(ds: InteractionDataset, k: int, eps: float) -> np.ndarray:
    """Co-occurrence graph pruned to the top-k off-diagonal entries per column
    that also exceed ``eps``; self-loops are always 1."""
    counts = cooccurrence(ds)
    off = counts.copy()
    np.fill_diagonal(off, -np.inf)
    keep = topk_mask_columns(off, min(k, max(ds.num_items - 1, 1))).astype(bool)
    keep &= off > eps
    out = np.where(keep, counts, 0.0)
    np.fill_diagonal(out, 1.0)
    return out


def normalize_sym(adj) -> np.ndarray | sp.csr_matrix:
    """D^-1/2 S D^-1/2 with D the row sums; zero-degree rows stay zero."""
    if sp.issparse(adj):
        adj = sp.csr_matrix(adj, dtype=np.float64)
        deg = np.asarray(adj.sum(axis=1)).ravel()
    else:
        adj = np.asarray(adj, dtype=np.float64)
        deg = adj.sum(axis=1)
    inv = np.zeros_like(deg)
    pos = deg > 0
    inv[pos] = 1.0 / np.sqrt(deg[pos])
    if sp.issparse(adj):
        d = sp.diags(inv)
        return sp.csr_matrix(d @ adj @ d)
    return adj * inv[:, None] * inv[None, :]


def build_bipartite(ds: InteractionDataset) -> sp.csr_matrix:
    """Normalized (|U|+|I|)^2 user-item adjacency [[0, A], [A^T, 0]]."""
    if len(ds.train) == 0:
        raise DataFormatError("cannot build the interaction graph from an empty train split")
    a = ds.train_matrix()
    block = sp.bmat([[None, a], [a.T, None]], format="csr",
                    dtype=np.float64)
    block.resize((ds.num_users + ds.num_items, ds.num_users + ds.num_items))
    return normalize_sym(block)


def to_sparse(adj) -> sp.csc_matrix:
    return sp.csc_matrix(adj, dtype=np.float64)


def normalized_semantic(graphs: dict[str, np.ndarray], weights: dict[str, float]) -> np.ndarray:
    """Weighted sum of the per-modality normalized KNN graphs."""
    return fuse_modalities({m: normalize_sym(g) for m, g in graphs.items()}, weights)


# -- edge-list export ----------------------------------------------------------

def write_edge_list(path, adj) -> None:
    """``i<TAB>j<TAB>weight`` for every nonzero, weights in round-trip repr."""
    dense = adj.toarray() if sp.issparse(adj) else np.asarray(adj)
    rows, cols = np.nonzero(dense)
    lines = [f"# nodes\t{dense.shape[0]}"]
    lines += [f"{i}\t{j}\t{float(dense[i, j])!r}" for i, j in zip(rows.tolist(), cols.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edge_list(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("# nodes\t"):
        raise DataFormatError(f"{path}: missing '# nodes' header")
    n = int(text[0].split("\t")[1])
    out = np.zeros((n, n))
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected 'i<TAB>j<TAB>weight'")
        out[int(parts[0]), int(parts[1])] = float(parts[2])
    return out
