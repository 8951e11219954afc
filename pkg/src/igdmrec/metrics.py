"""Full-ranking top-K evaluation and graph-quality scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RankingResult:
    topk: np.ndarray          # (num_users, max K) item indices, best first
    ks: tuple[int, ...]


def rank_all(scores: np.ndarray, exclude: list[set[int]], ks=(10, 20)) -> RankingResult:
    """Top-max(K) items per user by descending score, excluding each user's
    ``exclude`` set; ties go to the smaller item index."""
    scores = np.array(scores, dtype=np.float64)
    for u, items in enumerate(exclude):
        if items:
            scores[u, list(items)] = -np.inf
    kmax = min(max(ks), scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
    return RankingResult(order, tuple(ks))


def _per_user(ranking: RankingResult, relevant: list[set[int]], k: int, fn) -> float:
    vals = []
    for u, rel in enumerate(relevant):
        if not rel:
            continue
        vals.append(fn(ranking.topk[u, :k], rel, k))
    if not vals:
        return 0.0
    return float(np.mean(vals))


def _recall(top, rel, k):
    return sum(1 for i in top.tolist() if i in rel) / len(rel)


def _ndcg(top, rel, k):
    dcg = sum(1.0 / np.log2(r + 2) for r, i in enumerate(top.tolist()) if i in rel)
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(len(rel), k)))
    return dcg / idcg


def recall_at_k(ranking: RankingResult, relevant: list[set[int]], k: int) -> float:
    return _per_user(ranking, relevant, k, _recall)


def ndcg_at_k(ranking: RankingResult, relevant: list[set[int]], k: int) -> float:
    return _per_user(ranking, relevant, k, _ndcg)


def metric_report(ranking: RankingResult, relevant: list[set[int]], ks=(10, 20)) -> dict[str, float]:
    out = {}
    for k in ks:
        out[f"R@{k}"] = recall_at_k(ranking, relevant, k)
    for k in ks:
        out[f"N@{k}"] = ndcg_at_k(ranking, relevant, k)
    return out


def evaluate_scores(scores: np.ndarray, exclude: list[set[int]], relevant: list[set[int]],
                    ks=(10, 20)) -> dict[str, float]:
    return metric_report(rank_all(scores, exclude, ks), relevant, ks)


def graph_edge_precision(adj, labels) -> tuple[float, bool]:
    """Share of off-diagonal edges joining same-cluster items.

    Returns ``(precision, vacuous)``; a graph without off-diagonal edges
    scores 1.0 with ``vacuous=True``.
    """
    adj = adj.toarray() if hasattr(adj, "toarray") else np.asarray(adj)
    labels = np.asarray(labels)
    edges = adj != 0
    np.fill_diagonal(edges, False)
    total = int(edges.sum())
    if total == 0:
        return 1.0, True
    same = labels[:, None] == labels[None, :]
    return float((edges & same).sum() / total), False
