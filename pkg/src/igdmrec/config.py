"""Run configuration: defaults, flat ``key = value`` files, variants and ablations."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

# Values searched by the grid sweep for each tunable axis.
GRID = {
    "tau": (0.1, 0.2, 0.5, 1.0),
    "lambda_cl": (1e-1, 1e-2, 1e-3),
    "latent_dim": (1000, 2000, 3000, 4000),
    "T": (2, 5, 10),
    "noise_scale": (1e-2, 2e-3),
    "alpha_max": (2e-2, 5e-2),
    "omega": (0.0, 2.0, 4.0, 6.0, 8.0),
}

AXIS_ALIASES = {"lambda1": "lambda_cl", "k_d": "latent_dim", "kd": "latent_dim", "s": "noise_scale",
                "w": "omega", "lambda2": "lambda_reg", "p_mu": "p_uncond"}

ABLATIONS = ("wo-ci", "wo-cl", "wo-ed")
VARIANTS = ("igdmrec", "igdmrec-star", "no-item-graph")


@dataclass
class RunConfig:
    seed: int = 0
    # embeddings and propagation
    embed_dim: int = 64
    layers_ui: int = 2
    layers_ii: int = 1
    # item graphs
    knn_k: int = 10
    prune_eps: float = 2.0
    phi_visual: float = 0.1
    # losses
    lambda_cl: float = 0.1
    lambda_reg: float = 1e-7
    tau: float = 0.2
    # diffusion
    T: int = 5
    noise_scale: float = 0.01
    alpha_min: float = 1e-4
    alpha_max: float = 0.02
    latent_dim: int = 1000
    omega: float = 2.0
    p_uncond: float = 0.1
    codec: bool = True
    refresh_interval: int = 1
    bgd_batch_size: int = 512
    bgd_passes: int = 1
    bgd_lr: float = 0.001
    # optimization
    batch_size: int = 2048
    lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 20
    max_epochs: int = 1000
    # model switches
    item_graphs: bool = True
    score_with: str = "h"
    variant: str = "igdmrec"
    ablation: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.embed_dim < 1 or self.layers_ui < 0 or self.layers_ii < 0:
            raise ConfigError("embed_dim must be >= 1 and layer counts >= 0")
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be >= 1, got {self.knn_k}")
        if not 0.0 <= self.phi_visual <= 1.0:
            raise ConfigError(f"phi_visual must lie in [0, 1], got {self.phi_visual}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lambda_cl < 0 or self.lambda_reg < 0:
            raise ConfigError("loss weights must be >= 0")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")
        if self.refresh_interval < 1 or self.bgd_passes < 0:
            raise ConfigError("refresh_interval must be >= 1 and bgd_passes >= 0")
        if min(self.batch_size, self.bgd_batch_size, self.latent_dim, self.T, self.max_epochs) < 1:
            raise ConfigError("batch sizes, latent_dim, T and max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.score_with not in ("h", "h_hat"):
            raise ConfigError(f"score_with must be 'h' or 'h_hat', got {self.score_with!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.ablation and self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = AXIS_ALIASES.get(key, key)
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def coerce(key: str, raw) -> object:
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_assignments(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = canonical_key(key)
        out[key] = coerce(key, value)
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    items = []
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        items.append(line)
    return parse_assignments(items)


def write_config_file(path, cfg: RunConfig) -> None:
    lines = [f"{k} = {v}" for k, v in cfg.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def apply_variant(cfg: RunConfig, variant: str) -> RunConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if variant == "igdmrec-star":
        return cfg.replace(variant=variant, refresh_interval=5)
    if variant == "no-item-graph":
        return cfg.replace(variant=variant, item_graphs=False, lambda_cl=0.0)
    return cfg.replace(variant=variant)


def ablation_variant(cfg: RunConfig, name: str) -> RunConfig:
    key = name.lower().replace("/", "").replace(" ", "-").replace("_", "-")
    key = {"woci": "wo-ci", "wocl": "wo-cl", "woed": "wo-ed"}.get(key.replace("-", ""), key)
    if key == "wo-ci":
        return cfg.replace(ablation=key, omega=-1.0, p_uncond=1.0)
    if key == "wo-cl":
        return cfg.replace(ablation=key, lambda_cl=0.0)
    if key == "wo-ed":
        return cfg.replace(ablation=key, codec=False)
    raise ConfigError(f"unknown ablation {name!r}; choose from {ABLATIONS}")


def resolve(base: RunConfig | None = None, config_file=None, overrides=(), variant=None,
            ablation=None, seed=None) -> RunConfig:
    cfg = base or RunConfig()
    if config_file is not None:
        cfg = cfg.replace(**read_config_file(config_file))
    if overrides:
        cfg = cfg.replace(**parse_assignments(overrides))
    if variant:
        cfg = apply_variant(cfg, variant)
    if ablation:
        cfg = ablation_variant(cfg, ablation)
    if seed is not None:
        cfg = cfg.replace(seed=int(seed))
    return cfg
