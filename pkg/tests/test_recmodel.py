import math

import numpy as np
import pytest
import scipy.sparse as sp

from gradcheck import max_relative_error
from igdmrec import graphs as gr
from igdmrec import numerics as nx
from igdmrec import recmodel as rm
from igdmrec.config import RunConfig, ablation_variant
from igdmrec.datahub import InteractionDataset, synth_planted
from igdmrec.errors import ConfigError


def _const(x):
    tape = nx.Tape()
    return tape, tape.constant(np.asarray(x, dtype=float))


def test_item_propagation_cases():
    tape, h = _const([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(rm.propagate_item_graph(sp.identity(2, format="csr"), h, 1).value, h.value)
    swap = sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(rm.propagate_item_graph(swap, h, 1).value, [[3.0, 4.0], [1.0, 2.0]])
    assert not rm.propagate_item_graph(sp.csr_matrix((2, 2)), h, 1).value.any()


def test_bipartite_zero_adjacency_averages_in_zeros():
    tape = nx.Tape()
    u, i = tape.constant(np.ones((2, 3))), tape.constant(np.full((1, 3), 3.0))
    hu, hi = rm.propagate_bipartite(sp.csr_matrix((3, 3)), u, i, 2)
    assert np.allclose(hu.value, 1 / 3, atol=1e-15) and np.allclose(hi.value, 1.0, atol=1e-15)


def test_bipartite_single_pair():
    empty = np.zeros((0, 2), dtype=np.int64)
    ds = InteractionDataset(1, 1, np.array([[0, 0]]), empty, empty)
    tape = nx.Tape()
    hu, hi = rm.propagate_bipartite(gr.build_bipartite(ds), tape.constant([[1.0]]), tape.constant([[1.0]]), 1)
    assert hu.value[0, 0] == 1.0 and hi.value[0, 0] == 1.0


def test_propagation_linearity_and_equivariance():
    rng = np.random.default_rng(0)
    train = np.array([[0, 0], [0, 2], [1, 1], [2, 2], [2, 3]])
    empty = np.zeros((0, 2), dtype=np.int64)
    ds = InteractionDataset(3, 4, train, empty, empty)
    adj = gr.build_bipartite(ds)
    u, i = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
    tape = nx.Tape()
    hu, hi = rm.propagate_bipartite(adj, tape.constant(u), tape.constant(i), 2)
    hu2, hi2 = rm.propagate_bipartite(adj, tape.constant(2.5 * u), tape.constant(2.5 * i), 2)
    assert np.allclose(hu2.value, 2.5 * hu.value, atol=1e-14)
    perm = np.array([2, 0, 3, 1])
    inv = np.argsort(perm)
    ds_p = InteractionDataset(3, 4, np.column_stack([train[:, 0], inv[train[:, 1]]]), empty, empty)
    _, hi_p = rm.propagate_bipartite(gr.build_bipartite(ds_p), tape.constant(u), tape.constant(i[perm]), 2)
    assert np.allclose(hi_p.value, hi.value[perm], atol=1e-14)


def test_contrastive_two_item_case():
    tape = nx.Tape()
    h_hat = tape.constant([[1.0, 0.0], [0.0, 1.0]])
    h = tape.constant([[1.0, 0.0], [0.0, 1.0]])
    total = rm.contrastive_loss(h_hat, h, 1.0).value[0, 0]
    term = -math.log(math.e / (math.e + 1))
    assert abs(term - 0.31326) < 1e-5
    assert abs(total - 2 * term) < 1e-12


def test_contrastive_orthogonal_closed_form():
    n = 5
    tape = nx.Tape()
    e = tape.constant(np.eye(n))
    per_item = rm.contrastive_loss(e, e, 1.0, reduction="mean").value[0, 0]
    assert abs(per_item - (-math.log(math.e / (math.e + n - 1)))) < 1e-12


def test_contrastive_small_temperature_limit():
    tape = nx.Tape()
    e = tape.constant(np.eye(3))
    assert rm.contrastive_loss(e, e, 0.01).value[0, 0] < 1e-30


def test_bpr_cases():
    tape = nx.Tape()
    hu = tape.constant([[1.0, 0.0], [0.5, 0.5]])
    same = rm.bpr_loss(hu, tape.constant([[2.0, 1.0], [1.0, 1.0]]), tape.constant([[2.0, 3.0], [1.0, 1.0]]))
    assert abs(same.value[0, 0] - 2 * math.log(2)) < 1e-15
    gap = rm.bpr_loss(tape.constant([[1.0]]), tape.constant([[0.0]]), tape.constant([[20.0]]))
    assert abs(gap.value[0, 0] - 20.0) < 1e-8
    big = rm.bpr_loss(tape.constant([[1.0]]), tape.constant([[800.0]]), tape.constant([[0.0]]))
    assert big.value[0, 0] == 0.0


def test_bpr_depends_only_on_score_difference():
    rng = np.random.default_rng(0)
    hu, hi, hj = rng.normal(size=(3, 4, 3))
    shift = rng.normal(size=(4, 3))
    shift -= (np.sum(shift * hu, axis=1) / np.sum(hu * hu, axis=1))[:, None] * hu
    tape = nx.Tape()
    a = rm.bpr_loss(tape.constant(hu), tape.constant(hi), tape.constant(hj)).value
    b = rm.bpr_loss(tape.constant(hu), tape.constant(hi + shift), tape.constant(hj + shift)).value
    assert abs(a[0, 0] - b[0, 0]) < 1e-12


def test_joint_loss_arithmetic():
    tape = nx.Tape()
    one = tape.constant([[1.0]])
    assert rm.joint_loss(one, one, one, 0.0, 0.0).value[0, 0] == 1.0
    assert abs(rm.joint_loss(one, one, tape.constant([[0.0]]), 0.1, 1e-7).value[0, 0] - 1.1) < 1e-15


def _micro():
    train = np.array([[0, 0], [0, 1], [1, 1], [1, 2], [2, 3], [2, 0]])
    empty = np.zeros((0, 2), dtype=np.int64)
    ds = InteractionDataset(3, 4, train, empty, empty)
    rng = np.random.default_rng(1)
    sem = gr.knn_columns(gr.cosine_similarity_matrix(rng.normal(size=(4, 3))), 2)
    diff = gr.knn_columns(rng.normal(size=(4, 4)), 2)
    g = rm.ItemGraphs(gr.build_bipartite(ds), semantic_norm=sp.csr_matrix(gr.normalize_sym(sem)),
                      diffusion_norm=sp.csr_matrix(gr.normalize_sym(diff)))
    cfg = RunConfig(embed_dim=2, lambda_cl=0.3, lambda_reg=0.05, tau=0.5)
    return cfg, g, {"user": rng.normal(size=(3, 2)), "item": rng.normal(size=(4, 2))}


def test_fusion_identities_exact():
    cfg, g, p = _micro()
    tape = nx.Tape()
    v = rm.compute_views(cfg, g, tape.constant(p["user"]), tape.constant(p["item"]))
    assert np.array_equal(v.item_hat.value, v.item_ui.value + v.item_sem.value)
    assert np.array_equal(v.item.value, v.item_ui.value + v.item_diff.value)
    assert np.allclose(v.item_hat.value - v.item.value, v.item_sem.value - v.item_diff.value, atol=1e-15)


@pytest.mark.parametrize("part", ["bpr", "cl", "joint"])
def test_micro_gradients(part):
    cfg, g, params = _micro()
    users, pos, neg = np.array([0, 1, 2, 0]), np.array([1, 2, 3, 0]), np.array([3, 0, 1, 2])

    def build(tape, p):
        v = rm.compute_views(cfg, g, p["user"], p["item"])
        bpr = rm.bpr_loss(nx.take_rows(v.user, users), nx.take_rows(v.item, pos), nx.take_rows(v.item, neg))
        cl = rm.contrastive_loss(v.item_hat, v.item, cfg.tau)
        if part == "bpr":
            return bpr
        if part == "cl":
            return cl
        reg = rm.l2_penalty([nx.take_rows(p["user"], np.unique(users)),
                             nx.take_rows(p["item"], np.unique(np.concatenate([pos, neg])))])
        return rm.joint_loss(bpr, cl, reg, cfg.lambda_cl, cfg.lambda_reg)

    assert max_relative_error(build, params) < 1e-4


def test_joint_gradient_decomposes():
    cfg, g, params = _micro()
    users, pos, neg = np.array([0, 1]), np.array([1, 2]), np.array([3, 0])

    def grads(which):
        tape = nx.Tape()
        u = tape.leaf(params["user"], name="user")
        i = tape.leaf(params["item"], name="item")
        v = rm.compute_views(cfg, g, u, i)
        bpr = rm.bpr_loss(nx.take_rows(v.user, users), nx.take_rows(v.item, pos), nx.take_rows(v.item, neg))
        cl = rm.contrastive_loss(v.item_hat, v.item, cfg.tau)
        reg = rm.l2_penalty([u, i])
        loss = {"bpr": bpr, "cl": cl, "joint": rm.joint_loss(bpr, cl, reg, cfg.lambda_cl, cfg.lambda_reg)}[which]
        return tape.backward(loss)
    gb, gc, gj = grads("bpr"), grads("cl"), grads("joint")
    for k in ("user", "item"):
        expected = gb[k] + cfg.lambda_cl * gc[k] + 2 * cfg.lambda_reg * params[k]
        assert np.allclose(gj[k], expected, atol=1e-13)


def test_early_stop_counter():
    assert rm.early_stop_epoch([0.1] * 40, 20) == (1, 21)
    assert rm.early_stop_epoch([0.1, 0.2, 0.3], 20) == (3, 3)


def test_ablation_transforms():
    base = RunConfig()
    ci = ablation_variant(base, "w/o CI")
    assert ci.omega == -1.0 and ci.p_uncond == 1.0
    assert ablation_variant(base, "wo-cl").lambda_cl == 0.0
    assert ablation_variant(base, "wo_ed").codec is False
    with pytest.raises(ConfigError):
        ablation_variant(base, "wo-xx")


SMALL = dict(latent_dim=4, noise_scale=1.0, alpha_max=0.5, bgd_batch_size=100, bgd_passes=3, bgd_lr=0.01,
             batch_size=256, max_epochs=6, lambda_cl=0.01, tau=1.0)


@pytest.fixture(scope="module")
def planted():
    return synth_planted(60, 40, 2, 16, 0.6, seed=0, interactions_per_user=8)


def test_train_is_deterministic(planted):
    ds, feats, labels = planted
    cfg = RunConfig(**SMALL)
    a = rm.train(cfg, ds, feats, labels)
    b = rm.train(cfg, ds, feats, labels)
    assert a.history == b.history and a.test_metrics == b.test_metrics
    assert np.array_equal(a.embeddings.item, b.embeddings.item)


def test_w_o_cl_reports_zero_cl(planted):
    ds, feats, _ = planted
    res = rm.train(ablation_variant(RunConfig(**SMALL), "wo-cl"), ds, feats)
    assert all(r["cl"] == 0.0 for r in res.history)


def test_w_o_ed_runs_with_quadratic_parameter_count(planted):
    ds, feats, _ = planted
    cfg = ablation_variant(RunConfig(**SMALL, seed=1), "wo-ed").replace(max_epochs=2)
    res = rm.train(cfg, ds, feats)
    n = ds.num_items
    assert res.cdnet.num_parameters() == 3 * n * n + 12 * n
    assert set(res.cdnet.params) == {"W1", "b1", "W2", "b2"}


def test_no_item_graph_skips_diffusion(planted):
    ds, feats, _ = planted
    from igdmrec.config import apply_variant
    res = rm.train(apply_variant(RunConfig(**SMALL), "no-item-graph"), ds, feats)
    assert res.cdnet is None and res.graphs.diffusion is None
    assert "bgd_loss" not in res.history[0]


def test_refresh_interval_controls_refreshes(planted):
    ds, feats, _ = planted
    res = rm.train(RunConfig(**{**SMALL, "max_epochs": 6, "patience": 100}, refresh_interval=5), ds, feats)
    assert [r["epoch"] for r in res.history if r.get("refreshed")] == [1, 6]


def test_score_with_flag_changes_item_view(planted):
    ds, feats, _ = planted
    cfg = RunConfig(**SMALL)
    g = rm.build_graphs(cfg, ds, feats)
    rf = rm.Refresher(cfg, g, ds.num_items)
    rf.regenerate()
    emb = rm.EmbeddingTable.init(ds.num_users, ds.num_items, 8, np.random.default_rng(0))
    a = rm.score_matrix(cfg, g, emb)
    b = rm.score_matrix(cfg.replace(score_with="h_hat"), g, emb)
    assert a.shape == (ds.num_users, ds.num_items) and not np.array_equal(a, b)
