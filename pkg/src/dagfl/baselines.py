"""Comparison systems on the shared engine: synchronous rounds, immediate
asynchronous averaging, and miner-buffered blocks.

All three consume the same world (profiles, shards, adversaries) and the
same arrival process as the ledger system, so per-seed comparisons are
apples to apples. A member's service time is download + training + upload:
d0 plus two model transfers (there is no candidate validation off-ledger).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ExperimentConfig
from .delays import compute_delays, transfer_delay
from .model import ModelParams, evaluate, federated_average
from .protocol import local_update
from .simulator import BaseRunner, substream


def async_fl_update(global_model: ModelParams,
                    local_model: ModelParams) -> ModelParams:
    """New global = equal-weight average of the old global and the upload."""
    return federated_average([global_model, local_model], [0.5, 0.5])


class _CentralRunner(BaseRunner):
    """Shared plumbing for server-style systems (no ledger)."""

    def __init__(self, cfg: ExperimentConfig):
        super().__init__(cfg)
        self.global_model = self.world.init_model

    def service_times(self, node: int) -> tuple[float, float]:
        """(full service, busy time when the node dies mid-iteration)."""
        d0, _d1, _h = compute_delays(self.cfg, self.world.profiles[node].cpu_freq)
        move = transfer_delay(self.cfg, self.cfg.phi)
        return d0 + 2 * move, d0 + move

    def training_snapshot(self) -> ModelParams:
        return self.global_model

    def engage_node(self, node: int) -> None:
        full, busy_on_fail = self.service_times(node)
        self.delays.append(full)
        if self.draw_failure():
            self.q.push(self.now + busy_on_fail, "complete", node, None)
            self.on_member_failure(node, full)
            return
        model, _loss = local_update(self.world.profiles[node],
                                    self.training_snapshot(), self.cfg,
                                    self.node_rngs[node])
        self.q.push(self.now + full, "complete", node, model)

    def on_member_failure(self, node: int, full_service: float) -> None:
        pass


class GoogleFLRunner(_CentralRunner):
    """Synchronous rounds: fixed member count, aggregate when all upload.

    The round's model snapshot is fixed when the round opens; a member
    that dies is replaced once the server times out waiting (a multiple
    of that member's expected service time).
    """

    system = "google"

    def __init__(self, cfg: ExperimentConfig):
        super().__init__(cfg)
        self.round_model = self.global_model
        self.uploads: list[ModelParams] = []
        self.slots_open = cfg.round_size
        self.rounds = 0
        self.member_timeouts = 0
        self.round_token = 0

    def accepts_arrivals(self) -> bool:
        return self.slots_open > 0

    def training_snapshot(self) -> ModelParams:
        return self.round_model

    def engage_node(self, node: int) -> None:
        self.slots_open -= 1
        super().engage_node(node)

    def on_member_failure(self, node: int, full_service: float) -> None:
        wait = self.cfg.member_timeout_factor * full_service
        self.q.push(self.now + wait, "member_timeout", node, self.round_token)

    def on_complete(self, node: int, model) -> None:
        if model is None:
            self.failures += 1
            return
        self.uploads.append(model)
        if len(self.uploads) >= self.cfg.round_size:
            self.global_model = federated_average(self.uploads)
            self.final_model = self.global_model
            self.round_model = self.global_model
            self.uploads = []
            self.slots_open = self.cfg.round_size
            self.rounds += 1
            self.round_token += 1
        self.count_iteration()

    def on_system_event(self, kind: str, node: int, payload) -> None:
        if kind != "member_timeout":
            raise NotImplementedError(kind)
        if payload != self.round_token:
            return  # the round already closed; stale wait
        self.slots_open += 1
        self.member_timeouts += 1

    def extend_summary(self, summary: dict) -> None:
        summary["rounds_completed"] = self.rounds
        summary["member_timeouts"] = self.member_timeouts


class AsyncFLRunner(_CentralRunner):
    """Every upload immediately halves into the global model."""

    system = "async"

    def on_complete(self, node: int, model) -> None:
        if model is None:
            self.failures += 1
            return
        self.global_model = async_fl_update(self.global_model, model)
        self.final_model = self.global_model
        self.count_iteration()


@dataclass
class MinerState:
    buffer: list = field(default_factory=list)
    opened_at: float | None = None
    mining: bool = False
    candidate: list = field(default_factory=list)
    token: int = 0  # bumps invalidate pending timeout/pow events


class BlockFLRunner(_CentralRunner):
    """Miner-buffered blocks: validate, buffer, trigger, PoW race, publish.

    Nodes are split into contiguous groups, one miner each. A miner
    accepts an upload when its full-test-set accuracy clears a floor
    relative to the current global. PoW starts when the buffer reaches
    block_txs or block_timeout seconds after the buffer opened; the
    earliest PoW completion publishes its frozen candidate and every
    miner's pending buffers and candidates are dropped.
    """

    system = "blockfl"

    def __init__(self, cfg: ExperimentConfig):
        super().__init__(cfg)
        self.global_acc = evaluate(self.global_model, self.world.test)[0]
        nodes = sorted(self.world.profiles)
        base, extra = divmod(len(nodes), cfg.miners)
        self.node_miner: dict[int, int] = {}
        start = 0
        for j in range(cfg.miners):
            size = base + (1 if j < extra else 0)
            for node in nodes[start : start + size]:
                self.node_miner[node] = j
            start += size
        self.miners = {j: MinerState() for j in range(cfg.miners)}
        self.pow_rngs = {j: substream(cfg.seed, "pow", j)
                         for j in range(cfg.miners)}
        self.blocks = 0
        self.dropped = 0
        self.rejected = 0
        self.trace: list[tuple] = []

    def on_complete(self, node: int, model) -> None:
        if model is None:
            self.failures += 1
            return
        self.count_iteration()
        accuracy = evaluate(model, self.world.test)[0]
        if accuracy < self.cfg.miner_floor * self.global_acc:
            self.rejected += 1
            return
        miner = self.node_miner[node]
        st = self.miners[miner]
        st.buffer.append(model)
        self.trace.append(("accept", self.now, miner, len(st.buffer)))
        if len(st.buffer) == 1:
            st.opened_at = self.now
            self.q.push(self.now + self.cfg.block_timeout, "buffer_timeout",
                        miner, st.token)
        if len(st.buffer) >= self.cfg.block_txs and not st.mining:
            self._start_pow(miner, "count")

    def _start_pow(self, miner: int, reason: str) -> None:
        st = self.miners[miner]
        st.mining = True
        st.candidate = st.buffer
        st.buffer = []
        opened = st.opened_at
        st.opened_at = None
        st.token += 1
        delay = float(self.pow_rngs[miner].exponential(self.cfg.pow_mean))
        self.q.push(self.now + delay, "pow_complete", miner, st.token)
        self.trace.append(("pow_start", self.now, miner, reason,
                           len(st.candidate), opened))

    def on_system_event(self, kind: str, node: int, payload) -> None:
        st = self.miners[node]
        if kind == "buffer_timeout":
            if payload != st.token or st.mining or not st.buffer:
                return
            self._start_pow(node, "timeout")
        elif kind == "pow_complete":
            if payload != st.token:
                return  # another block landed first; this work is void
            self._publish_block(node)
        else:
            raise NotImplementedError(kind)

    def _publish_block(self, winner: int) -> None:
        st = self.miners[winner]
        self.global_model = federated_average(st.candidate)
        self.final_model = self.global_model
        self.global_acc = evaluate(self.global_model, self.world.test)[0]
        self.blocks += 1
        self.last_progress = self.now
        self.trace.append(("block", self.now, winner, len(st.candidate)))
        st.candidate = []
        for j, other in self.miners.items():
            lost = len(other.buffer) + len(other.candidate)
            if lost:
                self.dropped += lost
                self.trace.append(("drop", self.now, j, lost))
            other.buffer = []
            other.candidate = []
            other.mining = False
            other.opened_at = None
            other.token += 1

    def extend_summary(self, summary: dict) -> None:
        summary["blocks_published"] = self.blocks
        summary["dropped_transactions"] = self.dropped
        summary["rejected_uploads"] = self.rejected
