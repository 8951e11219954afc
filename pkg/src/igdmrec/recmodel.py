"""Propagation over the interaction and item graphs, dual-view losses and
the training loop with early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import bgd
from . import graphs as gr
from . import numerics as nx
from . import rng as rngmod
from .config import RunConfig
from .datahub import InteractionDataset, ModalityFeatures, sample_bpr_triplets
from .errors import NumericalError
from .metrics import evaluate_scores, graph_edge_precision
from .optim import Adam

log = logging.getLogger(__name__)


# -- propagation and losses ------------------------------------------------------

def propagate_item_graph(adj, items: nx.Var, layers: int) -> nx.Var:
    """H^l = adj H^(l-1); returns the last layer."""
    h = items
    for _ in range(layers):
        h = nx.spmm(adj, h)
    return h


def propagate_bipartite(adj, users: nx.Var, items: nx.Var, layers: int) -> tuple[nx.Var, nx.Var]:
    """Mean of layers 0..L over the stacked user-item graph, split back per side."""
    h = nx.concat([users, items], axis=0)
    total = h
    for _ in range(layers):
        h = nx.spmm(adj, h)
        total = nx.add(total, h)
    mean = nx.scale(total, 1.0 / (layers + 1))
    hu, hi = nx.split(mean, [users.shape[0], items.shape[0]], axis=0)
    return hu, hi


def cosine_matrix(a: nx.Var, b: nx.Var) -> nx.Var:
    an = nx.div(a, nx.l2norm_rows(a))
    bn = nx.div(b, nx.l2norm_rows(b))
    return nx.matmul(an, nx.transpose(bn))


def contrastive_loss(h_hat: nx.Var, h: nx.Var, tau: float, reduction: str = "sum") -> nx.Var:
    """InfoNCE between row i of ``h_hat`` and row i of ``h``, all rows of ``h``
    in the denominator."""
    sims = nx.scale(cosine_matrix(h_hat, h), 1.0 / tau)
    logp = nx.log(nx.softmax_rows(sims))
    eye = h.tape.constant(np.eye(h.shape[0]))
    total = nx.neg(nx.sum_(nx.mul(logp, eye)))
    return total if reduction == "sum" else nx.scale(total, 1.0 / h.shape[0])


def bpr_loss(hu: nx.Var, hi: nx.Var, hj: nx.Var, reduction: str = "sum") -> nx.Var:
    """sum of -log sigmoid(hu.hi - hu.hj) over the rows of a triplet batch."""
    diff = nx.sum_(nx.mul(hu, nx.sub(hi, hj)), axis=1)
    total = nx.neg(nx.sum_(nx.log_sigmoid(diff)))
    return total if reduction == "sum" else nx.scale(total, 1.0 / hu.shape[0])


def l2_penalty(rows: list[nx.Var]) -> nx.Var:
    parts = [nx.sum_(nx.mul(r, r)) for r in rows]
    total = parts[0]
    for p in parts[1:]:
        total = nx.add(total, p)
    return total


def joint_loss(bpr, cl, reg, lambda_cl: float, lambda_reg: float) -> nx.Var:
    out = bpr
    if cl is not None and lambda_cl:
        out = nx.add(out, nx.scale(cl, lambda_cl))
    if reg is not None and lambda_reg:
        out = nx.add(out, nx.scale(reg, lambda_reg))
    return out


# -- model state -----------------------------------------------------------------

@dataclass
class EmbeddingTable:
    user: np.ndarray
    item: np.ndarray

    @classmethod
    def init(cls, num_users: int, num_items: int, dim: int, rng: np.random.Generator):
        return cls(nx.xavier_uniform(num_users, dim, rng), nx.xavier_uniform(num_items, dim, rng))

    def as_params(self) -> dict[str, np.ndarray]:
        return {"user": self.user, "item": self.item}

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.user.copy(), self.item.copy())


@dataclass
class ItemGraphs:
    """All fixed or refreshed adjacencies a model run needs."""
    bipartite: sp.csr_matrix
    semantic_by_modality: dict[str, np.ndarray] | None = None
    semantic: np.ndarray | None = None           # fused, unnormalized: diffusion targets
    semantic_norm: sp.csr_matrix | None = None   # weighted sum of normalized modality graphs
    behavioral: np.ndarray | None = None
    diffusion: np.ndarray | None = None
    diffusion_norm: sp.csr_matrix | None = None


def build_graphs(cfg: RunConfig, ds: InteractionDataset, features: dict[str, ModalityFeatures]) -> ItemGraphs:
    out = ItemGraphs(gr.build_bipartite(ds))
    if not cfg.item_graphs:
        return out
    weights = gr.modality_weights(cfg.phi_visual)
    per = gr.semantic_graphs({m: features[m] for m in weights}, cfg.knn_k)
    out.semantic_by_modality = per
    out.semantic = gr.fuse_modalities(per, weights)
    out.semantic_norm = sp.csr_matrix(gr.normalized_semantic(per, weights))
    out.behavioral = gr.build_behavioral(ds, cfg.knn_k, cfg.prune_eps)
    return out


@dataclass
class ViewSet:
    user: nx.Var            # h_u
    item_ui: nx.Var         # h_i^ui
    item_sem: nx.Var | None  # h_i^m
    item_diff: nx.Var | None  # h_i^d
    item_hat: nx.Var        # h_i^ui + h_i^m
    item: nx.Var            # h_i^ui + h_i^d


def compute_views(cfg: RunConfig, g: ItemGraphs, users: nx.Var, items: nx.Var) -> ViewSet:
    hu, hi_ui = propagate_bipartite(g.bipartite, users, items, cfg.layers_ui)
    if not cfg.item_graphs:
        return ViewSet(hu, hi_ui, None, None, hi_ui, hi_ui)
    h_sem = propagate_item_graph(g.semantic_norm, items, cfg.layers_ii)
    h_diff = propagate_item_graph(g.diffusion_norm, items, cfg.layers_ii)
    return ViewSet(hu, hi_ui, h_sem, h_diff, nx.add(hi_ui, h_sem), nx.add(hi_ui, h_diff))


def score_matrix(cfg: RunConfig, g: ItemGraphs, emb: EmbeddingTable) -> np.ndarray:
    tape = nx.Tape()
    views = compute_views(cfg, g, tape.constant(emb.user), tape.constant(emb.item))
    items = views.item if cfg.score_with == "h" else views.item_hat
    return views.user.value @ items.value.T


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    config: RunConfig
    embeddings: EmbeddingTable
    cdnet: bgd.CDNet | None
    graphs: ItemGraphs
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    test_metrics: dict = field(default_factory=dict)
    val_metrics: dict = field(default_factory=dict)
    graph_quality: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)


class Refresher:
    """Owns CD-Net, its optimizer and the diffusion-aware graph."""

    def __init__(self, cfg: RunConfig, g: ItemGraphs, num_items: int):
        self.cfg = cfg
        self.g = g
        self.schedule = bgd.build_schedule(cfg.T, cfg.noise_scale, cfg.alpha_min, cfg.alpha_max)
        self.guidance = bgd.GuidanceConfig(cfg.omega, cfg.p_uncond)
        self.net = bgd.CDNet(num_items, cfg.latent_dim, rngmod.stream(cfg.seed, "cdnet-init"),
                             codec=cfg.codec)
        self.opt = Adam(cfg.bgd_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.count = 0

    def refresh(self) -> float:
        gen = rngmod.stream(self.cfg.seed, "bgd", self.count)
        loss = float("nan")
        for _ in range(self.cfg.bgd_passes):
            loss = bgd.bgd_train_pass(self.net, self.opt, self.g.semantic, self.g.behavioral,
                                      self.schedule, self.guidance, self.cfg.bgd_batch_size, gen)
        self.regenerate()
        self.count += 1
        return loss

    def regenerate(self) -> None:
        denoised = bgd.reverse_generate(self.g.semantic.T, self.g.behavioral.T, self.net,
                                        self.schedule, self.cfg.omega)
        self.g.diffusion = bgd.build_diffusion_graph(denoised, self.cfg.knn_k)
        self.g.diffusion_norm = sp.csr_matrix(gr.normalize_sym(self.g.diffusion))


def early_stop_epoch(values, patience: int) -> tuple[int, int]:
    """Replay a validation sequence; returns (best_epoch, stop_epoch), 1-based."""
    best, best_epoch, waited = -np.inf, 0, 0
    for epoch, v in enumerate(values, start=1):
        if v > best:
            best, best_epoch, waited = v, epoch, 0
        else:
            waited += 1
            if waited >= patience:
                return best_epoch, epoch
    return best_epoch, len(values)


def train_step(cfg: RunConfig, g: ItemGraphs, emb: EmbeddingTable, opt: Adam,
               users: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> dict[str, float]:
    tape = nx.Tape()
    u_all = tape.leaf(emb.user, name="user")
    i_all = tape.leaf(emb.item, name="item")
    views = compute_views(cfg, g, u_all, i_all)
    items = views.item if cfg.score_with == "h" else views.item_hat
    bpr = bpr_loss(nx.take_rows(views.user, users), nx.take_rows(items, pos),
                   nx.take_rows(items, neg), reduction="mean")
    cl = None
    if cfg.item_graphs and cfg.lambda_cl > 0:
        cl = contrastive_loss(views.item_hat, views.item, cfg.tau, reduction="mean")
    reg = l2_penalty([nx.take_rows(u_all, np.unique(users)),
                      nx.take_rows(i_all, np.unique(np.concatenate([pos, neg])))])
    loss = joint_loss(bpr, cl, reg, cfg.lambda_cl, cfg.lambda_reg)
    value = float(loss.value[0, 0])
    if not np.isfinite(value):
        raise NumericalError("non-finite recommendation loss")
    grads = tape.backward(loss)
    opt.update(emb.as_params(), grads)
    return {"loss": value, "bpr": float(bpr.value[0, 0]),
            "cl": float(cl.value[0, 0]) if cl is not None else 0.0,
            "reg": float(reg.value[0, 0])}


def train(cfg: RunConfig, ds: InteractionDataset, features: dict[str, ModalityFeatures],
          labels=None, on_epoch=None) -> TrainResult:
    """Train with BPR + contrastive objective, refreshing the diffusion graph
    every ``refresh_interval`` epochs; keeps the best validation R@20 state."""
    g = build_graphs(cfg, ds, features)
    emb = EmbeddingTable.init(ds.num_users, ds.num_items, cfg.embed_dim, rngmod.stream(cfg.seed, "embed-init"))
    opt = Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    refresher = Refresher(cfg, g, ds.num_items) if cfg.item_graphs else None

    best = {"r20": -np.inf, "epoch": 0, "emb": emb.copy(), "diff": None, "cdnet": None, "val": {}}
    history, waited = [], 0
    bgd_time = rec_time = eval_time = 0.0
    for epoch in range(1, cfg.max_epochs + 1):
        record = {"epoch": epoch}
        if refresher is not None and (epoch - 1) % cfg.refresh_interval == 0:
            t0 = time.perf_counter()
            record["bgd_loss"] = refresher.refresh()
            bgd_time += time.perf_counter() - t0
            record["refreshed"] = True
        t0 = time.perf_counter()
        users, pos, neg = sample_bpr_triplets(ds, _epoch_seed(cfg.seed, epoch))
        sums = {"loss": 0.0, "bpr": 0.0, "cl": 0.0, "reg": 0.0}
        n_batches = 0
        for s in range(0, len(users), cfg.batch_size):
            try:
                parts = train_step(cfg, g, emb, opt, users[s:s + cfg.batch_size],
                                   pos[s:s + cfg.batch_size], neg[s:s + cfg.batch_size])
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {n_batches + 1}: {exc}") from exc
            for k in sums:
                sums[k] += parts[k]
            n_batches += 1
        rec_time += time.perf_counter() - t0
        record.update({k: v / max(n_batches, 1) for k, v in sums.items()})

        t0 = time.perf_counter()
        val = evaluate_scores(score_matrix(cfg, g, emb), ds.train_items, ds.val_items, ks=(20,))
        eval_time += time.perf_counter() - t0
        record["val_R@20"] = val["R@20"]
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if val["R@20"] > best["r20"]:
            best.update(r20=val["R@20"], epoch=epoch, emb=emb.copy(), val=val,
                        diff=None if g.diffusion is None else g.diffusion.copy(),
                        cdnet=None if refresher is None else
                        {k: v.copy() for k, v in refresher.net.params.items()})
            waited = 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break

    final_emb = best["emb"]
    net = None
    if refresher is not None:
        refresher.net.params = best["cdnet"]
        net = refresher.net
        g.diffusion = best["diff"]
        g.diffusion_norm = sp.csr_matrix(gr.normalize_sym(g.diffusion))
    scores = score_matrix(cfg, g, final_emb)
    test = evaluate_scores(scores, ds.train_items, ds.test_items)
    val_full = evaluate_scores(scores, ds.train_items, ds.val_items)
    quality = {}
    if labels is not None and cfg.item_graphs:
        quality = graph_quality(g, labels)
    timing = {"bgd_seconds": bgd_time, "rec_seconds": rec_time, "eval_seconds": eval_time,
              "epochs": len(history)}
    return TrainResult(cfg, final_emb, net, g, best["epoch"], history, test, val_full, quality, timing)


def graph_quality(g: ItemGraphs, labels) -> dict[str, float]:
    out = {}
    for name, adj in (("semantic", g.semantic), ("behavioral", g.behavioral), ("diffusion", g.diffusion)):
        if adj is not None:
            out[name] = graph_edge_precision(adj, labels)[0]
    return out


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(rngmod.stream(seed, "bpr-neg", epoch).integers(0, 2**63 - 1))
