"""Deterministic discrete-event engine and the DAG-FL run orchestration.

Time is simulated seconds. Node readiness follows a Poisson process of
rate lam; each arrival engages one idle node, which runs a full protocol
iteration and publishes h seconds later (h from the delay model), unless
the node draws a mid-iteration shutdown. Every node keeps a local ledger
replica synced from the publication stream with a transfer-delay cutoff.
An external agent polls on a fixed period and raises the end signal once
the aggregated model beats the accuracy target.

All randomness flows from named SeedSequence substreams of the run seed,
so equal configs give byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass

import numpy as np

from . import analysis
from .auth import KeyRing, derive_key
from .config import ExperimentConfig, validate
from .datasets import (DataShard, Trigger, backdoor_shard, load_idx,
                       partition_noniid, poison_shard, split_holdout,
                       synthesize)
from .delays import compute_delays, transfer_delay
from .ledger import AGENT_ID, Dag, Transaction, make_transaction
from .metrics import MetricsLog, MetricsRow
from .model import ModelParams, ModelShape, evaluate, init_params
from .protocol import (AgentConfig, NodeProfile, agent_poll, assign_behaviors,
                       build_trigger, node_iteration, BACKDOOR, NORMAL,
                       POISONING)

# processing order for events that share a timestamp; lower wins
EVENT_PRIORITY = {
    "end_signal": 0,
    "complete": 1,
    "pow_complete": 1,
    "sync": 2,
    "agent_poll": 3,
    "arrival": 4,
    "member_timeout": 5,
    "buffer_timeout": 6,
}


def _tag_int(tag) -> int:
    if isinstance(tag, int):
        return tag
    return int.from_bytes(hashlib.sha256(str(tag).encode()).digest()[:8], "big")


def substream(seed: int, *tags) -> np.random.Generator:
    """Named child RNG stream; streams never share draws."""
    return np.random.default_rng(
        np.random.SeedSequence([seed] + [_tag_int(t) for t in tags])
    )


def child_seed(seed: int, tag: str) -> int:
    return _tag_int(f"{seed}:{tag}")


class EventQueue:
    """Min-heap of (time, kind priority, node, insertion seq) events."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, at: float, kind: str, node: int = 0, payload=None) -> None:
        heapq.heappush(
            self._heap, (at, EVENT_PRIORITY[kind], node, self._seq, kind, payload)
        )
        self._seq += 1

    def pop(self):
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class World:
    """Everything a run shares across systems for one seed."""

    train: DataShard
    test: DataShard
    node_shards: list[DataShard]
    profiles: dict[int, NodeProfile]
    behaviors: dict[int, str]
    keyring: KeyRing
    agent_key: bytes
    trigger: Trigger
    init_model: ModelParams


def build_world(cfg: ExperimentConfig) -> World:
    """Data, partitions, node profiles, keys, and the seeded initial model.

    Depends only on (cfg minus system selector), so every system consumes
    identical nodes, shards, and adversary assignments for a given seed.
    """
    if cfg.source == "idx":
        train = load_idx(cfg.idx_train_images, cfg.idx_train_labels,
                         cfg.classes, "train")
        test = load_idx(cfg.idx_test_images, cfg.idx_test_labels,
                        cfg.classes, "test")
    else:
        train, test = synthesize(cfg.classes, cfg.per_class, cfg.dim,
                                 cfg.spread, child_seed(cfg.seed, "data"))
    dim = train.features.shape[1]
    node_shards = partition_noniid(train, cfg.n_nodes,
                                   child_seed(cfg.seed, "partition"))
    behavior_list = assign_behaviors(
        cfg.n_nodes, cfg.lazy_nodes, cfg.poisoning_nodes, cfg.backdoor_nodes,
        substream(cfg.seed, "behaviors"),
    )
    trigger = build_trigger(cfg, dim)
    freqs = substream(cfg.seed, "cpu").uniform(cfg.f_min, cfg.f_max, cfg.n_nodes)

    profiles: dict[int, NodeProfile] = {}
    behaviors: dict[int, str] = {}
    for i in range(cfg.n_nodes):
        node_id = i + 1  # id 0 is the agent
        behavior = behavior_list[i]
        train_part, val_part = split_holdout(
            node_shards[i], cfg.validation_fraction,
            substream(cfg.seed, "holdout", node_id),
        )
        effective = train_part
        if behavior == POISONING:
            effective = poison_shard(train_part, cfg.poison_fraction,
                                     substream(cfg.seed, "corrupt", node_id))
        elif behavior == BACKDOOR:
            effective = backdoor_shard(train_part, trigger, cfg.trigger_fraction,
                                       substream(cfg.seed, "corrupt", node_id))
        profiles[node_id] = NodeProfile(
            node_id, float(freqs[i]), train_part, val_part, effective,
            behavior, derive_key(cfg.seed, node_id),
        )
        behaviors[node_id] = behavior

    keyring = KeyRing.for_run(cfg.seed, [AGENT_ID] + list(profiles))
    init_model = init_params(ModelShape(dim, cfg.hidden_dim, cfg.classes),
                             substream(cfg.seed, "init"))
    return World(train, test, node_shards, profiles, behaviors, keyring,
                 derive_key(cfg.seed, AGENT_ID), trigger, init_model)


class BaseRunner:
    """Event loop, arrival process, metrics, and summary plumbing.

    System-specific runners implement engage_node / on_complete plus any
    extra event kinds, and contribute summary fields via extend_summary.
    """

    system = "base"

    def __init__(self, cfg: ExperimentConfig):
        validate(cfg)
        self.cfg = cfg
        self.world = build_world(cfg)
        self.q = EventQueue()
        self.now = 0.0
        self.iterations = 0
        self.arrivals = 0
        self.dropped_arrivals = 0
        self.failures = 0
        self.starved_iterations = 0
        self.delays: list[float] = []
        self.busy: set[int] = set()
        self.log = MetricsLog(self.system, cfg.seed)
        self.end_time: float | None = None
        self.end_reason: str | None = None
        self.last_progress = 0.0
        self.final_model = self.world.init_model

        seed = cfg.seed
        self.arrival_rng = substream(seed, "arrivals")
        self.pick_rng = substream(seed, "pick")
        self.failure_rng = substream(seed, "failure")
        self.agent_rng = substream(seed, "agent")
        self.node_rngs = {i: substream(seed, "node", i) for i in self.world.profiles}

    # mechanics

    def run(self) -> MetricsLog:
        self.start()
        while len(self.q):
            at, _prio, node, _seq, kind, payload = self.q.pop()
            if at > self.cfg.duration:
                self.finish(self.cfg.duration, "duration")
                return self.log
            if at - self.last_progress > self.cfg.watchdog:
                self.finish(at, "starved")
                return self.log
            self.now = at
            if kind == "end_signal":
                self.finish(at, payload)
                return self.log
            self.dispatch(kind, node, payload)
            if self.end_time is not None:
                return self.log
        self.finish(self.now, "drained")
        return self.log

    def start(self) -> None:
        accuracy, loss = evaluate(self.world.init_model, self.world.test)
        self.record_row(0.0, self.current_tips(0.0), accuracy, loss)
        self.schedule_next_arrival()
        self.q.push(self.cfg.poll_interval, "agent_poll")
        self.system_start()

    def dispatch(self, kind: str, node: int, payload) -> None:
        if kind == "arrival":
            self.on_arrival()
        elif kind == "complete":
            self.busy.discard(node)
            self.on_complete(node, payload)
        elif kind == "sync":
            self.on_sync(node)
        elif kind == "agent_poll":
            self.on_poll()
        else:
            self.on_system_event(kind, node, payload)

    def schedule_next_arrival(self) -> None:
        gap = self.arrival_rng.exponential(1.0 / self.cfg.lam)
        self.q.push(self.now + gap, "arrival")

    def on_arrival(self) -> None:
        self.arrivals += 1
        idle = sorted(set(self.world.profiles) - self.busy)
        if not idle or not self.accepts_arrivals():
            self.dropped_arrivals += 1
        else:
            node = idle[int(self.pick_rng.integers(len(idle)))]
            self.busy.add(node)
            self.engage_node(node)
        self.schedule_next_arrival()

    def draw_failure(self) -> bool:
        return float(self.failure_rng.random()) >= self.cfg.success_prob

    def count_iteration(self) -> None:
        self.iterations += 1
        self.last_progress = self.now
        if self.cfg.max_iterations and self.iterations >= self.cfg.max_iterations:
            self.finish(self.now, "max_iterations")

    def record_row(self, time: float, tips: int, accuracy: float,
                   loss: float) -> None:
        self.log.append(MetricsRow(time, self.iterations, tips, accuracy, loss))

    def finish(self, at: float, reason: str) -> None:
        if self.end_time is not None:
            return
        self.now = at
        self.end_time = at
        self.end_reason = reason
        if not self.log.rows or self.log.rows[-1].time < at:
            accuracy, loss = self.terminal_metrics()
            self.record_row(at, self.current_tips(at), accuracy, loss)
        self.log.summary = self.build_summary()

    def build_summary(self) -> dict:
        last = self.log.rows[-1]
        node_losses = {
            str(n): evaluate(self.final_model, self.world.node_shards[n - 1])[1]
            for n in sorted(self.world.profiles)
        }
        abnormal = sorted(n for n, b in self.world.behaviors.items() if b != NORMAL)
        summary = {
            "system": self.system,
            "seed": self.cfg.seed,
            "end_time": self.end_time,
            "end_reason": self.end_reason,
            "iterations": self.iterations,
            "arrivals": self.arrivals,
            "dropped_arrivals": self.dropped_arrivals,
            "failures": self.failures,
            "starved_iterations": self.starved_iterations,
            "mean_iteration_delay": (
                float(np.mean(self.delays)) if self.delays else None
            ),
            "final_accuracy": last.accuracy,
            "final_loss": last.loss,
            "acc_target_reached": self.end_reason == "acc_target",
            "global_objective": float(np.mean(list(map(float, node_losses.values())))),
            "node_objectives": node_losses,
            "behaviors": {str(n): b for n, b in sorted(self.world.behaviors.items())},
            "abnormal_nodes": abnormal,
            "attack_success_rate": analysis.attack_success_rate(
                self.final_model, self.world.test, self.world.trigger
            ),
        }
        self.extend_summary(summary)
        return summary

    # system hooks

    def system_start(self) -> None:
        pass

    def accepts_arrivals(self) -> bool:
        return True

    def engage_node(self, node: int) -> None:
        raise NotImplementedError

    def on_complete(self, node: int, payload) -> None:
        raise NotImplementedError

    def on_sync(self, node: int) -> None:
        pass

    def on_poll(self) -> None:
        accuracy, loss = self.terminal_metrics()
        self.record_row(self.now, self.current_tips(self.now), accuracy, loss)
        self.q.push(self.now + self.cfg.poll_interval, "agent_poll")

    def on_system_event(self, kind: str, node: int, payload) -> None:
        raise NotImplementedError(kind)

    def current_tips(self, at: float) -> int:
        return 0

    def terminal_metrics(self) -> tuple[float, float]:
        return evaluate(self.final_model, self.world.test)

    def extend_summary(self, summary: dict) -> None:
        pass


class DagFLRunner(BaseRunner):
    """The ledger-based system: per-node replicas, syncs, agent polls."""

    system = "dagfl"

    def __init__(self, cfg: ExperimentConfig):
        super().__init__(cfg)
        w = self.world
        genesis = make_transaction(AGENT_ID, 0.0, w.init_model, (), w.agent_key)
        self.global_dag = Dag(-1, cfg.k, w.keyring)
        self.global_dag.append(genesis)
        # publication-ordered stream replicas consume through an index
        self.order: list[Transaction] = [genesis]
        self.local = {}
        self.sync_index = {}
        for node in w.profiles:
            dag = Dag(node, cfg.k, w.keyring)
            dag.append(genesis)
            self.local[node] = dag
            self.sync_index[node] = 1
        self.agent_dag = Dag(AGENT_ID, cfg.k, w.keyring)
        self.agent_dag.append(genesis)
        self.agent_index = 1
        self.agent_cfg = AgentConfig(cfg.acc_target, cfg.poll_interval,
                                     cfg.alpha, cfg.k, cfg.tau_max)

    def system_start(self) -> None:
        for node in self.world.profiles:
            self.q.push(self.cfg.sync_interval, "sync", node)

    def engage_node(self, node: int) -> None:
        profile = self.world.profiles[node]
        _d0, _d1, h = compute_delays(self.cfg, profile.cpu_freq)
        self.delays.append(h)
        if self.draw_failure():
            self.q.push(self.now + h, "complete", node, None)
            return
        result = node_iteration(profile, self.local[node], self.now, self.cfg,
                                self.node_rngs[node])
        self.q.push(self.now + result.delay, "complete", node, result)

    def on_complete(self, node: int, result) -> None:
        if result is None:
            self.failures += 1
            return
        if result.tx is None:
            self.starved_iterations += 1
            return
        self.global_dag.append(result.tx)
        self.order.append(result.tx)
        self.local[node].append(result.tx)
        self.count_iteration()

    def _advance(self, dag: Dag, index: int, cutoff: float) -> int:
        while index < len(self.order) and self.order[index].published_at <= cutoff:
            tx = self.order[index]
            if tx.id not in dag:
                dag.append(tx)
            index += 1
        return index

    def on_sync(self, node: int) -> None:
        cutoff = self.now - transfer_delay(self.cfg, self.cfg.phi)
        self.sync_index[node] = self._advance(
            self.local[node], self.sync_index[node], cutoff
        )
        self.q.push(self.now + self.cfg.sync_interval, "sync", node)

    def on_poll(self) -> None:
        cutoff = self.now - transfer_delay(self.cfg, self.cfg.phi)
        self.agent_index = self._advance(self.agent_dag, self.agent_index, cutoff)
        result = agent_poll(self.agent_cfg, self.agent_dag, self.now,
                            self.world.test, self.agent_rng)
        if result.starved:
            last = self.log.rows[-1]
            self.record_row(self.now, self.current_tips(self.now),
                            last.accuracy, last.loss)
        else:
            self.final_model = result.model
            self.record_row(self.now, self.current_tips(self.now),
                            result.accuracy, result.loss)
            if result.finished:
                self.q.push(self.now, "end_signal", payload="acc_target")
        self.q.push(self.now + self.cfg.poll_interval, "agent_poll")

    def current_tips(self, at: float) -> int:
        return len(self.global_dag.tips(at, self.cfg.tau_max))

    def terminal_metrics(self) -> tuple[float, float]:
        # final agent-style aggregation over everything published
        self.agent_index = self._advance(self.agent_dag, self.agent_index,
                                         self.now)
        result = agent_poll(self.agent_cfg, self.agent_dag, self.now,
                            self.world.test, self.agent_rng)
        if not result.starved:
            self.final_model = result.model
            return result.accuracy, result.loss
        last = self.log.rows[-1]
        return last.accuracy, last.loss

    def extend_summary(self, summary: dict) -> None:
        cfg = self.cfg
        report = analysis.anomaly_report(
            self.global_dag, cfg.m_threshold, sorted(self.world.profiles),
            summary["abnormal_nodes"],
        )
        window = (self.end_time / 2.0, self.end_time)
        try:
            mean_tips = analysis.measure_tips(self.log.rows, window)
        except ValueError:
            mean_tips = None
        summary.update({
            "transactions": len(self.global_dag),
            "mean_tips_stationary": mean_tips,
            "contribution": {str(n): v for n, v in sorted(report.per_node.items())},
            "contribution_undefined": report.undefined_count,
            "r": report.r,
            "r0": report.r0,
            "r0_over_r": report.ratio,
        })


def make_runner(cfg: ExperimentConfig) -> BaseRunner:
    if cfg.system == "dagfl":
        return DagFLRunner(cfg)
    from . import baselines  # deferred: baselines build on this module

    if cfg.system == "google":
        return baselines.GoogleFLRunner(cfg)
    if cfg.system == "async":
        return baselines.AsyncFLRunner(cfg)
    if cfg.system == "blockfl":
        return baselines.BlockFLRunner(cfg)
    raise ValueError(f"unknown system {cfg.system!r}")


def run(cfg: ExperimentConfig) -> MetricsLog:
    """Run one seeded experiment to completion and return its metrics."""
    return make_runner(cfg).run()
