"""Behavior-conditioned graph diffusion.

Relation vectors are item-graph columns. The forward process corrupts a
semantic column with Gaussian noise; CD-Net predicts the clean column from
the noisy one, the matching behavioral column and the step index. Sampling
starts from the uncorrupted semantic column and runs the deterministic
posterior-mean reverse chain under classifier-free guidance.

Batched arrays hold one relation vector per *row*.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, NumericalError
from .graphs import topk_mask_columns
from .optim import Adam

TIME_EMB_DIM = 10


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    s: float
    alpha_min: float
    alpha_max: float
    alpha_bar: np.ndarray       # index t = 0..T, alpha_bar[0] = 1
    alpha: np.ndarray           # index t = 1..T (alpha[0] unused, set to 1)
    posterior_var: np.ndarray   # beta-tilde, index t = 1..T
    loss_weight: np.ndarray     # alpha-hat, index t = 1..T

    def reverse_coefficients(self, t: int) -> tuple[float, float]:
        """Weights of (x_t, guided x0) in the one-step posterior mean."""
        ab, ab_prev, a = self.alpha_bar[t], self.alpha_bar[t - 1], self.alpha[t]
        c_xt = np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
        c_x0 = np.sqrt(ab_prev) * (1.0 - a) / (1.0 - ab)
        return float(c_xt), float(c_x0)


def build_schedule(T: int, s: float, alpha_min: float, alpha_max: float) -> DiffusionSchedule:
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0.0 < alpha_min < alpha_max < 1.0:
        raise ConfigError(f"need 0 < alpha_min < alpha_max < 1, got {alpha_min}, {alpha_max}")
    if not 0.0 < s <= 1.0:
        raise ConfigError(f"noise scale s must lie in (0, 1], got {s}")
    t = np.arange(1, T + 1, dtype=np.float64)
    if T == 1:
        one_minus = np.array([s * alpha_min])
    else:
        one_minus = s * (alpha_min + (t - 1.0) / (T - 1.0) * (alpha_max - alpha_min))
    alpha_bar = np.concatenate([[1.0], 1.0 - one_minus])
    alpha = np.ones(T + 1)
    alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
    post = np.zeros(T + 1)
    post[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * (1.0 - alpha[1:])
    snr = alpha_bar / np.where(alpha_bar < 1.0, 1.0 - alpha_bar, np.inf)
    weight = np.zeros(T + 1)
    weight[1] = 1.0
    if T >= 2:
        weight[2:] = 0.5 * (snr[1:-1] - snr[2:])
    return DiffusionSchedule(T, s, alpha_min, alpha_max, alpha_bar, alpha, post, weight)


def forward_noise(x0: np.ndarray, t, schedule: DiffusionSchedule, rng: np.random.Generator) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` may be one step per row."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ConfigError(f"t must lie in [1, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    eps = rng.standard_normal(size=x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def timestep_embedding(t) -> np.ndarray:
    """Sinusoidal embedding: [sin(t/f_0), cos(t/f_0), sin(t/f_1), ...],
    f_i = 10000^(2i/10). Returns (len(t), 10)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = 10000.0 ** (2.0 * np.arange(TIME_EMB_DIM // 2) / TIME_EMB_DIM)
    args = t[:, None] / freqs[None, :]
    emb = np.empty((len(t), TIME_EMB_DIM))
    emb[:, 0::2] = np.sin(args)
    emb[:, 1::2] = np.cos(args)
    return emb


# -- CD-Net ---------------------------------------------------------------------

class CDNet:
    """Linear encoder, one-hidden-layer tanh MLP, linear decoder.

    With ``codec=False`` the MLP works on raw relation vectors (hidden width
    and output equal to the item count) and no encoder/decoder exists.
    """

    def __init__(self, num_items: int, latent_dim: int, rng: np.random.Generator, codec: bool = True):
        self.num_items = num_items
        self.codec = codec
        self.latent_dim = latent_dim if codec else num_items
        kd = self.latent_dim
        self.params: dict[str, np.ndarray] = {}
        if codec:
            self.params["E"] = nx.xavier_uniform(kd, num_items, rng)
            self.params["D"] = nx.xavier_uniform(num_items, kd, rng)
        self.params["W1"] = nx.xavier_uniform(kd, 2 * kd + TIME_EMB_DIM, rng)
        self.params["b1"] = np.zeros((1, kd))
        self.params["W2"] = nx.xavier_uniform(kd, kd, rng)
        self.params["b2"] = np.zeros((1, kd))

    @staticmethod
    def parameter_count(num_items: int, latent_dim: int, codec: bool = True) -> int:
        kd = latent_dim if codec else num_items
        mlp = kd * (2 * kd + TIME_EMB_DIM) + kd + kd * kd + kd
        return mlp + (2 * kd * num_items if codec else 0)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, tape: nx.Tape, p: dict[str, nx.Var], x_t, cond, t) -> nx.Var:
        """Predicted clean relation vectors, one row per input row."""
        x_t = x_t if isinstance(x_t, nx.Var) else tape.constant(x_t)
        cond = cond if isinstance(cond, nx.Var) else tape.constant(cond)
        if x_t.shape[1] != self.num_items or cond.shape != x_t.shape:
            raise DimensionError(f"CD-Net expects (B, {self.num_items}) inputs, got "
                                 f"{x_t.shape} and {cond.shape}")
        temb = tape.constant(timestep_embedding(np.broadcast_to(t, (x_t.shape[0],))))
        if self.codec:
            e_t = nx.transpose(p["E"])
            z = nx.matmul(x_t, e_t)
            c = nx.matmul(cond, e_t)
        else:
            z, c = x_t, cond
        h = nx.tanh(nx.add(nx.matmul(nx.concat([z, c, temb]), nx.transpose(p["W1"])), p["b1"]))
        out = nx.add(nx.matmul(h, nx.transpose(p["W2"])), p["b2"])
        if self.codec:
            out = nx.matmul(out, nx.transpose(p["D"]))
        return out

    def leaves(self, tape: nx.Tape, trainable: bool = True) -> dict[str, nx.Var]:
        return {k: tape.leaf(v, name=f"cdnet.{k}", trainable=trainable) for k, v in self.params.items()}

    def predict(self, x_t: np.ndarray, cond: np.ndarray, t) -> np.ndarray:
        tape = nx.Tape()
        return self.forward(tape, self.leaves(tape, trainable=False), np.atleast_2d(x_t),
                            np.atleast_2d(cond), t).value


def cdnet_predict(net: CDNet, x_t: np.ndarray, cond: np.ndarray, t: int) -> np.ndarray:
    single = np.ndim(x_t) == 1
    out = net.predict(x_t, cond, t)
    return out[0] if single else out


def guided_prediction(net: CDNet, x_t: np.ndarray, cond: np.ndarray, t, omega: float) -> np.ndarray:
    """(1 + omega) * conditional - omega * unconditional prediction."""
    if omega == -1.0:
        return cdnet_predict(net, x_t, np.zeros_like(cond), t)
    cond_pred = cdnet_predict(net, x_t, cond, t)
    if omega == 0.0:
        return cond_pred
    uncond = cdnet_predict(net, x_t, np.zeros_like(cond), t)
    return (1.0 + omega) * cond_pred - omega * uncond


def diffusion_loss(net: CDNet, tape: nx.Tape, p: dict[str, nx.Var], x0: np.ndarray, x_t: np.ndarray,
                   cond: np.ndarray, t: np.ndarray, schedule: DiffusionSchedule) -> nx.Var:
    """Batch mean of weight(t) * ||x0 - x0_hat||^2."""
    pred = net.forward(tape, p, x_t, cond, t)
    err = nx.sub(tape.constant(x0), pred)
    per_row = nx.sum_(nx.mul(err, err), axis=1)
    weights = tape.constant(schedule.loss_weight[t].reshape(-1, 1))
    return nx.scale(nx.sum_(nx.mul(weights, per_row)), 1.0 / x0.shape[0])


@dataclass
class GuidanceConfig:
    omega: float = 2.0
    p_uncond: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")


def bgd_train_step(net: CDNet, opt: Adam, semantic: np.ndarray, behavioral: np.ndarray,
                   items: np.ndarray, schedule: DiffusionSchedule, guidance: GuidanceConfig,
                   rng: np.random.Generator) -> float:
    """One Adam step on a batch of item columns; returns the batch loss."""
    items = np.asarray(items)
    x0 = semantic[:, items].T
    cond = behavioral[:, items].T.copy()
    t = rng.integers(1, schedule.T + 1, size=len(items))
    x_t = forward_noise(x0, t, schedule, rng)
    drop = rng.random(len(items)) < guidance.p_uncond
    cond[drop] = 0.0
    tape = nx.Tape()
    p = net.leaves(tape)
    loss = diffusion_loss(net, tape, p, x0, x_t, cond, t, schedule)
    value = float(loss.value[0, 0])
    if not np.isfinite(value):
        raise NumericalError(f"non-finite diffusion loss at CD-Net step {opt.step + 1}")
    grads = tape.backward(loss)
    opt.update(net.params, {k.split(".", 1)[1]: g for k, g in grads.items()})
    return value


def bgd_train_pass(net: CDNet, opt: Adam, semantic: np.ndarray, behavioral: np.ndarray,
                   schedule: DiffusionSchedule, guidance: GuidanceConfig, batch_size: int,
                   rng: np.random.Generator) -> float:
    """One shuffled pass over all items; returns the mean batch loss."""
    order = rng.permutation(semantic.shape[1])
    losses = [bgd_train_step(net, opt, semantic, behavioral, order[s:s + batch_size],
                             schedule, guidance, rng)
              for s in range(0, len(order), batch_size)]
    return float(np.mean(losses))


def reverse_generate(semantic_cols: np.ndarray, behavioral_cols: np.ndarray, net: CDNet,
                     schedule: DiffusionSchedule, omega: float) -> np.ndarray:
    """Denoised relation vectors, starting from the semantic vectors as x_T.

    Inputs hold one relation vector per row (or a single 1-D vector).
    """
    single = np.ndim(semantic_cols) == 1
    x = np.atleast_2d(np.asarray(semantic_cols, dtype=np.float64)).copy()
    cond = np.atleast_2d(np.asarray(behavioral_cols, dtype=np.float64))
    for t in range(schedule.T, 0, -1):
        guided = guided_prediction(net, x, cond, t, omega)
        c_xt, c_x0 = schedule.reverse_coefficients(t)
        x = c_xt * x + c_x0 * guided
    return x[0] if single else x


def build_diffusion_graph(denoised: np.ndarray, k: int) -> np.ndarray:
    """S^d with column j = top-k mask of item j's denoised vector (row j of ``denoised``)."""
    return topk_mask_columns(np.asarray(denoised).T, k)
