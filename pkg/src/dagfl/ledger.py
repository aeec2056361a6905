"""Append-only DAG ledger of model-carrying transactions.

Each node keeps its own Dag replica. Transactions reference earlier
transactions through approval edges; a transaction with no incoming
approvals and bounded staleness is a tip, the unit other nodes validate
and build on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .auth import KeyRing, make_tag
from .model import ModelParams

TransactionId = str

ID_BYTES = 16

# the external agent publishes the genesis transaction under this identity
AGENT_ID = 0


class LedgerError(ValueError):
    """An append violated a ledger rule; the message names the rule."""


def signed_content(publisher: int, model: ModelParams, approves: tuple[TransactionId, ...]) -> bytes:
    """Canonical byte encoding bound by the auth tag."""
    return f"{publisher}|{model.digest()}|{','.join(approves)}".encode()


def transaction_id(publisher: int, published_at: float,
                   model: ModelParams, approves: tuple[TransactionId, ...]) -> TransactionId:
    material = (f"{publisher}|{published_at!r}|{model.digest()}|"
                f"{','.join(approves)}").encode()
    return hashlib.sha256(material).hexdigest()[: 2 * ID_BYTES]


@dataclass(frozen=True)
class Transaction:
    id: TransactionId
    publisher: int
    published_at: float
    model: ModelParams
    approves: tuple[TransactionId, ...]
    auth_tag: str
    content: bytes = field(repr=False, compare=False, default=b"")

    def __post_init__(self):
        object.__setattr__(self, "approves", tuple(self.approves))
        # cache the canonical content so replica appends verify with one HMAC
        object.__setattr__(
            self, "content", signed_content(self.publisher, self.model, self.approves)
        )


def make_transaction(publisher: int, published_at: float, model: ModelParams,
                     approves: list[TransactionId] | tuple[TransactionId, ...],
                     key: bytes) -> Transaction:
    approves = tuple(approves)
    tx_id = transaction_id(publisher, published_at, model, approves)
    tag = make_tag(key, signed_content(publisher, model, approves))
    return Transaction(tx_id, publisher, published_at, model, approves, tag)


class Dag:
    """One replica of the ledger, held by `owner`.

    Single writer: the simulator appends transactions in event order.
    Appends validate structure and authenticity; stored transactions are
    never mutated or removed.
    """

    def __init__(self, owner: int, k: int, keyring: KeyRing | None = None,
                 verify_on_append: bool = True):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.owner = owner
        self.k = k
        self.keyring = keyring
        self.verify_on_append = verify_on_append
        self.transactions: dict[TransactionId, Transaction] = {}
        self.approval_counts: dict[TransactionId, int] = {}
        self.genesis_id: TransactionId | None = None
        self._unapproved: set[TransactionId] = set()
        self._by_publisher: dict[int, list[TransactionId]] = {}

    def __len__(self) -> int:
        return len(self.transactions)

    def __contains__(self, tx_id: TransactionId) -> bool:
        return tx_id in self.transactions

    def append(self, tx: Transaction) -> "Dag":
        if tx.id in self.transactions:
            raise LedgerError(f"duplicate transaction id {tx.id}")
        if len(set(tx.approves)) != len(tx.approves):
            raise LedgerError("duplicate approval target")
        if not self.transactions:
            if tx.approves:
                raise LedgerError(
                    "first transaction must be the genesis (no approvals)"
                )
        else:
            if not 1 <= len(tx.approves) <= self.k:
                raise LedgerError(
                    f"approval count {len(tx.approves)} outside 1..{self.k}"
                )
        for target in tx.approves:
            if target not in self.transactions:
                raise LedgerError(f"dangling approval reference {target}")
            if not tx.published_at > self.transactions[target].published_at:
                raise LedgerError(
                    f"approval target {target} not strictly earlier than {tx.id}"
                )
        if self.verify_on_append and self.keyring is not None:
            if not self.keyring.verify(tx.publisher, tx.content, tx.auth_tag):
                raise LedgerError(
                    f"auth tag of {tx.id} does not verify for node {tx.publisher}"
                )

        self.transactions[tx.id] = tx
        self.approval_counts[tx.id] = 0
        self._unapproved.add(tx.id)
        self._by_publisher.setdefault(tx.publisher, []).append(tx.id)
        if self.genesis_id is None:
            self.genesis_id = tx.id
        for target in tx.approves:
            self.approval_counts[target] += 1
            self._unapproved.discard(target)
        return self

    def tips(self, now: float, tau_max: float) -> list[TransactionId]:
        """Unapproved transactions with staleness <= tau_max, oldest first.

        The genesis transaction is exempt from staleness while it is the
        only unapproved transaction, so early joiners always find a tip.
        """
        fresh = [
            tid for tid in self._unapproved
            if now - self.transactions[tid].published_at <= tau_max
        ]
        if not fresh and self.genesis_id in self._unapproved:
            return [self.genesis_id]
        fresh.sort(key=lambda tid: (self.transactions[tid].published_at, tid))
        return fresh

    def select_candidate_tips(self, now: float, tau_max: float, alpha: int,
                              rng: np.random.Generator,
                              exclude_publisher: int | None = None,
                              ) -> list[TransactionId]:
        """Uniform random subset of min(alpha, |tips|) tips, no replacement.

        With exclude_publisher set, that node's own transactions leave the
        pool unless they are the only eligible tips.
        """
        if alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {alpha}")
        pool = self.tips(now, tau_max)
        if exclude_publisher is not None:
            others = [
                tid for tid in pool
                if self.transactions[tid].publisher != exclude_publisher
            ]
            pool = others or pool
        if not pool:
            return []
        if len(pool) <= alpha:
            return list(pool)
        picks = rng.choice(len(pool), size=alpha, replace=False)
        return [pool[i] for i in sorted(picks)]

    def contribution_rate(self, node: int, m: int) -> float | None:
        """Fraction of the node's transactions with more than m approvals.

        None when the node never published (undefined, distinct from 0).
        """
        published = self._by_publisher.get(node)
        if not published:
            return None
        above = sum(1 for tid in published if self.approval_counts[tid] > m)
        return above / len(published)

    def published_count(self, node: int) -> int:
        return len(self._by_publisher.get(node, []))

    def copy(self, owner: int | None = None) -> "Dag":
        out = Dag(self.owner if owner is None else owner, self.k,
                  self.keyring, self.verify_on_append)
        out.transactions = dict(self.transactions)
        out.approval_counts = dict(self.approval_counts)
        out.genesis_id = self.genesis_id
        out._unapproved = set(self._unapproved)
        out._by_publisher = {n: list(v) for n, v in self._by_publisher.items()}
        return out


def dump_dag(dag: Dag, path: str) -> None:
    """Line-delimited JSON export, one transaction per line, oldest first."""
    order = sorted(dag.transactions.values(), key=lambda t: (t.published_at, t.id))
    with open(path, "w") as f:
        for tx in order:
            record = {
                "id": tx.id,
                "publisher": tx.publisher,
                "published_at": tx.published_at,
                "approves": list(tx.approves),
                "approval_count": dag.approval_counts[tx.id],
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")
