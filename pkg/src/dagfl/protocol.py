"""Participant-node and external-agent logic.

A node iteration runs four stages: pick candidate tips from the local DAG
view, verify and score them on the node's held-out validation slice,
aggregate the k best and train on the node's (behavior-dependent) data,
then publish a transaction approving exactly the tips that were used.

The external agent seeds the genesis transaction, periodically aggregates
the current best tips, and ends the run once the aggregate beats the
target accuracy (strictly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import datasets
from .datasets import DataShard, Trigger
from .delays import compute_delays
from .ledger import Dag, Transaction, TransactionId, make_transaction
from .model import ModelParams, TrainConfig, evaluate, federated_average, train

NORMAL = "normal"
LAZY = "lazy"
POISONING = "poisoning"
BACKDOOR = "backdoor"
BEHAVIORS = (NORMAL, LAZY, POISONING, BACKDOOR)


@dataclass(frozen=True)
class NodeProfile:
    node_id: int
    cpu_freq: float  # Hz, drawn once per run
    train_shard: DataShard  # clean local data minus the holdout
    val_shard: DataShard  # held-out slice used to score candidate tips
    effective_train: DataShard  # what the node actually trains on
    behavior: str
    key: bytes

    def __post_init__(self):
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"unknown behavior {self.behavior!r}")
        if self.cpu_freq <= 0:
            raise ValueError(f"cpu_freq must be > 0, got {self.cpu_freq}")


@dataclass(frozen=True)
class AgentConfig:
    acc_target: float
    poll_interval: float
    alpha: int
    k: int
    tau_max: float

    def __post_init__(self):
        # target 0 is allowed: any valid aggregate finishes the run
        if not 0.0 <= self.acc_target <= 1.0:
            raise ValueError(
                f"acc_target must be in [0, 1], got {self.acc_target}"
            )
        if self.poll_interval <= 0:
            raise ValueError("poll_interval must be > 0")
        if not self.k < self.alpha:
            raise ValueError(f"k < alpha required, got k={self.k} alpha={self.alpha}")
        if self.tau_max <= 0:
            raise ValueError("tau_max must be > 0")


@dataclass(frozen=True)
class IterationResult:
    tx: Transaction | None
    delay: float  # h, seconds
    reason: str  # "published" | "no_tips" | "auth_failed"
    train_loss: float | None


@dataclass(frozen=True)
class PollResult:
    finished: bool
    model: ModelParams | None
    accuracy: float | None
    loss: float | None
    starved: bool


def build_trigger(cfg, dim: int) -> Trigger:
    """Backdoor pattern for this feature space per the configured mode."""
    if cfg.trigger_mode == "set":
        side = int(round(dim ** 0.5))
        if side * side != dim:
            raise ValueError(
                f"trigger_mode=set needs square images, got dim {dim}"
            )
        return datasets.corner_square_trigger(side, cfg.trigger_width,
                                              cfg.trigger_value)
    return datasets.offset_trigger(dim, cfg.trigger_width, cfg.trigger_value)


def train_config(cfg) -> TrainConfig:
    return TrainConfig(cfg.learning_rate, cfg.minibatch, cfg.beta)


def _verified(dag: Dag, candidates: list[TransactionId]) -> list[Transaction]:
    out = []
    for tid in candidates:
        tx = dag.transactions[tid]
        if dag.keyring is not None and not dag.keyring.verify(
            tx.publisher, tx.content, tx.auth_tag
        ):
            continue
        out.append(tx)
    return out


def _rank_and_aggregate(candidates: list[Transaction], shard: DataShard,
                        k: int) -> tuple[ModelParams, list[TransactionId]]:
    """Score candidates on `shard`, take the k most accurate, average them.

    Ties break toward the earlier published_at, then id. Fewer than k
    candidates aggregate all of them with equal weights.
    """
    scored = sorted(
        ((-evaluate(tx.model, shard)[0], tx.published_at, tx.id, tx)
         for tx in candidates),
        key=lambda item: item[:3],
    )
    chosen = [item[3] for item in scored[:k]]
    aggregate = federated_average([tx.model for tx in chosen])
    return aggregate, [tx.id for tx in chosen]


def local_update(profile: NodeProfile, start: ModelParams, cfg,
                 rng: np.random.Generator) -> tuple[ModelParams, float | None]:
    """Behavior-dependent training step; lazy nodes republish unchanged."""
    if profile.behavior == LAZY:
        return start, None
    model, loss = train(start, profile.effective_train, train_config(cfg), rng)
    return model, loss


def node_iteration(profile: NodeProfile, dag: Dag, now: float, cfg,
                   rng: np.random.Generator) -> IterationResult:
    """One full publication attempt against the node's current DAG view.

    The returned transaction is stamped with published_at = now + h; the
    caller appends it when the iteration completes. A node skips its own
    transactions while other tips exist.
    """
    _d0, _d1, h = compute_delays(cfg, profile.cpu_freq)
    candidates = dag.select_candidate_tips(
        now, cfg.tau_max, cfg.alpha, rng, exclude_publisher=profile.node_id
    )
    if not candidates:
        return IterationResult(None, h, "no_tips", None)
    verified = _verified(dag, candidates)
    if not verified:
        return IterationResult(None, h, "auth_failed", None)
    aggregate, chosen = _rank_and_aggregate(verified, profile.val_shard, cfg.k)
    model, loss = local_update(profile, aggregate, cfg, rng)
    tx = make_transaction(profile.node_id, now + h, model, chosen, profile.key)
    return IterationResult(tx, h, "published", loss)


def agent_poll(agent: AgentConfig, dag: Dag, now: float, test_shard: DataShard,
               rng: np.random.Generator) -> PollResult:
    """Aggregate the k best visible tips and test against the target."""
    candidates = dag.select_candidate_tips(now, agent.tau_max, agent.alpha, rng)
    verified = _verified(dag, candidates)
    if not verified:
        return PollResult(False, None, None, None, True)
    aggregate, _chosen = _rank_and_aggregate(verified, test_shard, agent.k)
    accuracy, loss = evaluate(aggregate, test_shard)
    finished = accuracy > agent.acc_target
    return PollResult(finished, aggregate, accuracy, loss, False)


def assign_behaviors(n_nodes: int, lazy: int, poisoning: int, backdoor: int,
                     rng: np.random.Generator) -> list[str]:
    """Behavior per node index 0..n-1; adversaries land on distinct nodes."""
    total = lazy + poisoning + backdoor
    if total > n_nodes:
        raise ValueError(f"{total} adversaries exceed {n_nodes} nodes")
    behaviors = [NORMAL] * n_nodes
    perm = rng.permutation(n_nodes)
    for i in range(lazy):
        behaviors[perm[i]] = LAZY
    for i in range(lazy, lazy + poisoning):
        behaviors[perm[i]] = POISONING
    for i in range(lazy + poisoning, total):
        behaviors[perm[i]] = BACKDOOR
    return behaviors
