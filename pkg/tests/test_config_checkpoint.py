import numpy as np
import pytest

from igdmrec import checkpoint
from igdmrec.config import GRID, RunConfig, apply_variant, read_config_file, resolve, write_config_file
from igdmrec.errors import ArtifactMismatch, ConfigError


def test_default_hyperparameters():
    c = RunConfig()
    assert (c.embed_dim, c.layers_ui, c.layers_ii) == (64, 2, 1)
    assert (c.lambda_reg, c.phi_visual, c.knn_k, c.prune_eps) == (1e-7, 0.1, 10, 2.0)
    assert (c.p_uncond, c.alpha_min, c.lr, c.patience, c.max_epochs) == (0.1, 1e-4, 0.001, 20, 1000)
    assert (c.adam_beta1, c.adam_beta2, c.adam_eps) == (0.9, 0.999, 1e-8)
    assert c.tau in GRID["tau"] and c.lambda_cl in GRID["lambda_cl"] and c.omega in GRID["omega"]
    assert c.latent_dim in GRID["latent_dim"] and c.T in GRID["T"]
    assert c.noise_scale in GRID["noise_scale"] and c.alpha_max in GRID["alpha_max"]


def test_config_file_roundtrip_and_aliases(tmp_path):
    cfg = RunConfig(seed=3, omega=4.0, codec=False, score_with="h_hat")
    write_config_file(tmp_path / "a.cfg", cfg)
    assert RunConfig(**read_config_file(tmp_path / "a.cfg")) == cfg
    (tmp_path / "b.cfg").write_text("# comment\nw = 6\nk_d = 2000  # trailing\nlambda1=0.01\n")
    r = resolve(None, tmp_path / "b.cfg", ["tau=0.5"], seed=9)
    assert (r.omega, r.latent_dim, r.lambda_cl, r.tau, r.seed) == (6.0, 2000, 0.01, 0.5, 9)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        resolve(None, None, ["bogus=1"])
    with pytest.raises(ConfigError):
        resolve(None, None, ["T=abc"])
    with pytest.raises(ConfigError):
        RunConfig(tau=0.0)
    (tmp_path / "c.cfg").write_text("no equals sign\n")
    with pytest.raises(ConfigError, match=":1"):
        read_config_file(tmp_path / "c.cfg")


def test_variants():
    assert apply_variant(RunConfig(), "igdmrec-star").refresh_interval == 5
    ng = apply_variant(RunConfig(), "no-item-graph")
    assert ng.item_graphs is False and ng.lambda_cl == 0.0
    assert RunConfig().digest() == RunConfig().digest() != RunConfig(seed=1).digest()


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a": np.random.default_rng(0).normal(size=(3, 4)), "b": np.arange(5)}
    checkpoint.save(tmp_path / "c.bin", arrays, {"x": 1})
    back, meta = checkpoint.load(tmp_path / "c.bin")
    assert meta == {"x": 1}
    assert np.array_equal(back["a"], arrays["a"]) and np.array_equal(back["b"], arrays["b"])


def test_checkpoint_corruption_detected(tmp_path):
    checkpoint.save(tmp_path / "c.bin", {"a": np.ones((2, 2))}, {})
    data = bytearray((tmp_path / "c.bin").read_bytes())
    data[-40] ^= 0xFF
    (tmp_path / "c.bin").write_bytes(bytes(data))
    with pytest.raises(ArtifactMismatch, match="checksum"):
        checkpoint.load(tmp_path / "c.bin")
    (tmp_path / "d.bin").write_bytes(b"not a checkpoint at all, clearly too short")
    with pytest.raises(ArtifactMismatch):
        checkpoint.load(tmp_path / "d.bin")
