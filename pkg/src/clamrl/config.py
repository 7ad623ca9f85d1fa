"""Run configuration: defaults, INI-style file parsing, variant resolution."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .contrastive import ContrastiveConfig
from .envs import ENV_KINDS
from .model import ModelConfig
from .ppo import PPOConfig

VARIANTS = ("clam", "nam", "clam-avg", "clam-p", "clam-sym")

# pooling strategy implied by each variant (nam never builds the encoder)
_VARIANT_POOLING = {
    "clam": "attention",
    "nam": "attention",
    "clam-avg": "average",
    "clam-p": "weight",
    "clam-sym": "attention",
}


@dataclass(frozen=True)
class TrainConfig:
    env: str = "lbf"
    variant: str = "clam"
    episodes: int = 2000
    seed: int = 0
    out_dir: str = "runs/run0"
    log_every: int = 10
    freq_clam: int = 16
    tau_ema: float = 0.01
    buffer_capacity: int = 512
    policy_subset: tuple = None
    # encoder dims
    d: int = 64
    heads: int = 4
    layers: int = 2
    d_proj: int = 32
    max_len: int = 50
    init_std: float = 0.02
    ppo_width: int = 128
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)

    def __post_init__(self):
        if self.env not in ENV_KINDS:
            raise ValueError(f"unknown env {self.env!r}; choose from {ENV_KINDS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; "
                             f"choose from {VARIANTS}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.freq_clam < 1 or self.ppo.freq_ppo < 1:
            raise ValueError("update frequencies must be >= 1")
        if not 0.0 < self.tau_ema <= 1.0:
            raise ValueError("tau_ema must lie in (0, 1]")
        if self.buffer_capacity < self.contrastive.batch_size:
            raise ValueError("buffer_capacity must cover one contrastive batch")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.policy_subset is not None:
            object.__setattr__(self, "policy_subset",
                               tuple(int(i) for i in self.policy_subset))

    @property
    def pooling(self):
        return _VARIANT_POOLING[self.variant]

    def effective_contrastive(self):
        """The symmetric variant drops the masking augmentation entirely."""
        if self.variant == "clam-sym":
            return dataclasses.replace(self.contrastive, mask_ratio=0.0)
        return self.contrastive

    def model_config(self, obs_dim):
        return ModelConfig(obs_dim=obs_dim, d=self.d, heads=self.heads,
                           layers=self.layers, d_proj=self.d_proj,
                           max_len=self.max_len, pooling=self.pooling,
                           init_std=self.init_std)

    def resolved(self):
        """Plain nested dict with every effective value, for the manifest."""
        out = dataclasses.asdict(self)
        out["contrastive"] = dataclasses.asdict(self.effective_contrastive())
        out["ppo"] = dataclasses.asdict(self.ppo)
        out["pooling"] = self.pooling
        out["policy_subset"] = (list(self.policy_subset)
                                if self.policy_subset is not None else None)
        return out


_RUN_KEYS = {
    "env": str, "variant": str, "episodes": int, "seed": int, "out": str,
    "log_every": int, "policy_subset": "int_list",
}
_MODEL_KEYS = {
    "d": int, "heads": int, "layers": int, "d_proj": int, "max_len": int,
    "init_std": float, "ppo_width": int,
}
_TRAIN_KEYS = {"freq_clam": int, "tau_ema": float, "buffer_capacity": int}
_CONTRASTIVE_KEYS = {
    "batch_size": int, "temperature": float, "mask_ratio": float,
    "crop_len_min": int, "crop_len_max": int, "lr": float,
    "clip_norm": float, "bidirectional": bool,
}
_PPO_KEYS = {
    "clip_eps": float, "entropy_coef": float, "gamma": float,
    "gae_lambda": float, "epochs": int, "minibatch_size": int, "lr": float,
    "freq_ppo": int, "normalize_adv": bool,
}
_SECTIONS = {
    "run": _RUN_KEYS, "model": _MODEL_KEYS, "train": _TRAIN_KEYS,
    "contrastive": _CONTRASTIVE_KEYS, "ppo": _PPO_KEYS,
}


class ConfigError(ValueError):
    pass


def _convert(section, key, raw, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def read_config_file(path):
    """Parse one INI-style file into a {section: {key: value}} dict."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        keys = _SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values.setdefault(section, {})[key] = _convert(
                section, key, raw, keys[key])
    return values


def build_config(file_values=None, overrides=None):
    """Defaults <- config file <- explicit overrides, then validate once.

    `overrides` uses the flat CLI names: env, variant, seed, out, episodes.
    """
    file_values = file_values or {}
    overrides = overrides or {}

    run = dict(file_values.get("run", {}))
    run.update({k: v for k, v in overrides.items() if v is not None})

    model = file_values.get("model", {})
    train = file_values.get("train", {})

    contrastive = ContrastiveConfig(**file_values.get("contrastive", {}))
    ppo = PPOConfig(**file_values.get("ppo", {}))

    kwargs = {
        "env": run.get("env", "lbf"),
        "variant": run.get("variant", "clam"),
        "episodes": run.get("episodes", 2000),
        "seed": run.get("seed", 0),
        "out_dir": run.get("out", "runs/run0"),
        "log_every": run.get("log_every", 10),
        "policy_subset": run.get("policy_subset"),
        "contrastive": contrastive,
        "ppo": ppo,
    }
    kwargs.update(model)
    kwargs.update(train)
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides=None):
    file_values = read_config_file(path) if path else None
    return build_config(file_values, overrides)
