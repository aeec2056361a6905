"""Experiment configuration: defaults, INI-style files, CLI overrides.

Every knob is a flat uniquely-named field; the section layout below is
organizational only. A config snapshot serializes canonically so run ids
and manifests are byte-stable.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields

BITS_PER_MEGABYTE = 8_000_000
BITS_PER_MBPS = 1_000_000

SYSTEMS = ("dagfl", "google", "async", "blockfl")


class ConfigError(ValueError):
    """Config parse or validation failure; the message names the field."""


@dataclass
class ExperimentConfig:
    # run control
    system: str = "dagfl"
    seed: int = 0
    duration: float = 2000.0
    max_iterations: int = 0  # 0 = no cap
    watchdog: float = 300.0  # starvation termination threshold, seconds

    # node population and arrivals
    n_nodes: int = 100
    f_min: float = 1.0e9
    f_max: float = 2.0e9
    lam: float = 1.0  # idle arrivals per second across the population
    success_prob: float = 1.0  # an iteration survives node shutdown with this prob
    lazy_nodes: int = 0
    poisoning_nodes: int = 0
    backdoor_nodes: int = 0

    # ledger protocol
    k: int = 2
    alpha: int = 5
    tau_max: float = 20.0
    acc_target: float = 1.0
    poll_interval: float = 10.0
    sync_interval: float = 1.0
    m_threshold: int = 0  # contribution-rate approval threshold

    # local training
    beta: int = 1  # epochs per iteration
    minibatch: int = 100
    learning_rate: float = 0.05
    hidden_dim: int = 0  # 0 = linear softmax head

    # data
    source: str = "synthetic"  # synthetic | idx
    classes: int = 10
    per_class: int = 2000
    dim: int = 16
    spread: float = 0.5
    validation_fraction: float = 0.1
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""

    # adversary shaping
    poison_fraction: float = 1.0
    trigger_fraction: float = 0.5
    trigger_width: int = 5
    trigger_value: float = 3.0
    trigger_mode: str = "add"  # add | set

    # sizes in bits, bandwidth in bits/s, eta in cycles/bit
    bandwidth: float = 1.0e8
    phi: float = 5.6e7
    phi0: float = 2.4e6
    phi1: float = 2.4e6
    eta0: float = 500.0
    eta1: float = 160.0

    # synchronous baseline
    round_size: int = 10
    member_timeout_factor: float = 2.0

    # miner baseline
    miners: int = 5
    block_txs: int = 5
    block_timeout: float = 10.0
    pow_mean: float = 5.0
    miner_floor: float = 0.8


SECTIONS = {
    "run": ("system", "seed", "duration", "max_iterations", "watchdog"),
    "nodes": ("n_nodes", "f_min", "f_max", "lam", "success_prob",
              "lazy_nodes", "poisoning_nodes", "backdoor_nodes"),
    "protocol": ("k", "alpha", "tau_max", "acc_target", "poll_interval",
                 "sync_interval", "m_threshold"),
    "training": ("beta", "minibatch", "learning_rate", "hidden_dim"),
    "data": ("source", "classes", "per_class", "dim", "spread",
             "validation_fraction", "idx_train_images", "idx_train_labels",
             "idx_test_images", "idx_test_labels"),
    "adversary": ("poison_fraction", "trigger_fraction", "trigger_width",
                  "trigger_value", "trigger_mode"),
    "network": ("bandwidth", "phi", "phi0", "phi1", "eta0", "eta1"),
    "google": ("round_size", "member_timeout_factor"),
    "blockfl": ("miners", "block_txs", "block_timeout", "pow_mean",
                "miner_floor"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def set_field(cfg: ExperimentConfig, key: str, raw: str) -> None:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _coerce(key, raw))


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            set_field(cfg, key, raw)
    return cfg


def apply_overrides(cfg: ExperimentConfig, pairs: list[str]) -> None:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, raw = pair.split("=", 1)
        set_field(cfg, key.strip(), raw.strip())


def snapshot(cfg: ExperimentConfig) -> str:
    """Canonical INI text of the full config (fixed section and key order)."""
    parser = configparser.ConfigParser()
    for section, keys in SECTIONS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(cfg, key)
            parser[section][key] = repr(value) if isinstance(value, float) else str(value)
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as f:
        f.write(snapshot(cfg))


def validate(cfg: ExperimentConfig) -> None:
    """Raise ConfigError naming the first violated field constraint."""
    def require(ok: bool, message: str):
        if not ok:
            raise ConfigError(message)

    require(cfg.system in SYSTEMS, f"system must be one of {SYSTEMS}, got {cfg.system!r}")
    require(cfg.seed >= 0, f"seed must be >= 0, got {cfg.seed}")
    require(cfg.duration >= 0, f"duration must be >= 0, got {cfg.duration}")
    require(cfg.max_iterations >= 0,
            f"max_iterations must be >= 0, got {cfg.max_iterations}")
    require(cfg.watchdog > 0, f"watchdog must be > 0, got {cfg.watchdog}")

    require(cfg.n_nodes >= 2, f"n_nodes must be >= 2, got {cfg.n_nodes}")
    require(0 < cfg.f_min <= cfg.f_max,
            f"need 0 < f_min <= f_max, got [{cfg.f_min}, {cfg.f_max}]")
    require(cfg.lam > 0, f"lam must be > 0, got {cfg.lam}")
    require(0 < cfg.success_prob <= 1,
            f"success_prob must be in (0, 1], got {cfg.success_prob}")
    for name in ("lazy_nodes", "poisoning_nodes", "backdoor_nodes"):
        require(getattr(cfg, name) >= 0, f"{name} must be >= 0")
    adversaries = cfg.lazy_nodes + cfg.poisoning_nodes + cfg.backdoor_nodes
    require(adversaries <= cfg.n_nodes,
            f"adversary count {adversaries} exceeds n_nodes {cfg.n_nodes}")

    require(cfg.k >= 1, f"k must be >= 1, got {cfg.k}")
    require(cfg.alpha >= 1, f"alpha must be >= 1, got {cfg.alpha}")
    require(cfg.k < cfg.alpha, f"k < alpha required, got k={cfg.k} alpha={cfg.alpha}")
    require(cfg.tau_max > 0, f"tau_max must be > 0, got {cfg.tau_max}")
    require(0 <= cfg.acc_target <= 1,
            f"acc_target must be in [0, 1], got {cfg.acc_target}")
    require(cfg.poll_interval > 0,
            f"poll_interval must be > 0, got {cfg.poll_interval}")
    require(cfg.sync_interval > 0,
            f"sync_interval must be > 0, got {cfg.sync_interval}")
    require(cfg.m_threshold >= 0, f"m_threshold must be >= 0, got {cfg.m_threshold}")

    require(cfg.beta >= 1, f"beta must be >= 1, got {cfg.beta}")
    require(cfg.minibatch >= 1, f"minibatch must be >= 1, got {cfg.minibatch}")
    require(cfg.learning_rate >= 0,
            f"learning_rate must be >= 0, got {cfg.learning_rate}")
    require(cfg.hidden_dim >= 0, f"hidden_dim must be >= 0, got {cfg.hidden_dim}")

    require(cfg.source in ("synthetic", "idx"),
            f"source must be synthetic or idx, got {cfg.source!r}")
    require(cfg.classes >= 2, f"classes must be >= 2, got {cfg.classes}")
    require(cfg.per_class >= 2, f"per_class must be >= 2, got {cfg.per_class}")
    require(cfg.dim >= 2, f"dim must be >= 2, got {cfg.dim}")
    require(cfg.spread > 0, f"spread must be > 0, got {cfg.spread}")
    require(0 < cfg.validation_fraction < 1,
            f"validation_fraction must be in (0, 1), got {cfg.validation_fraction}")
    if cfg.source == "idx":
        for name in ("idx_train_images", "idx_train_labels",
                     "idx_test_images", "idx_test_labels"):
            require(bool(getattr(cfg, name)), f"{name} required when source=idx")

    require(0 <= cfg.poison_fraction <= 1,
            f"poison_fraction must be in [0, 1], got {cfg.poison_fraction}")
    require(0 <= cfg.trigger_fraction <= 1,
            f"trigger_fraction must be in [0, 1], got {cfg.trigger_fraction}")
    require(cfg.trigger_width >= 1,
            f"trigger_width must be >= 1, got {cfg.trigger_width}")
    require(cfg.trigger_mode in ("add", "set"),
            f"trigger_mode must be add or set, got {cfg.trigger_mode!r}")

    for name in ("bandwidth", "phi", "phi0", "phi1", "eta0", "eta1"):
        require(getattr(cfg, name) > 0, f"{name} must be > 0")

    require(cfg.round_size >= 1, f"round_size must be >= 1, got {cfg.round_size}")
    require(cfg.member_timeout_factor > 0,
            f"member_timeout_factor must be > 0, got {cfg.member_timeout_factor}")
    require(1 <= cfg.miners <= cfg.n_nodes,
            f"need 1 <= miners <= n_nodes, got {cfg.miners}")
    require(cfg.block_txs >= 1, f"block_txs must be >= 1, got {cfg.block_txs}")
    require(cfg.block_timeout > 0,
            f"block_timeout must be > 0, got {cfg.block_timeout}")
    require(cfg.pow_mean > 0, f"pow_mean must be > 0, got {cfg.pow_mean}")
    require(0 <= cfg.miner_floor <= 1,
            f"miner_floor must be in [0, 1], got {cfg.miner_floor}")
