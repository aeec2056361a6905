"""Writer authentication for ledger transactions.

Every publisher owns a symmetric key; a transaction carries an HMAC-SHA256
tag over its canonical content so any holder of the key ring can check that
the claimed publisher produced exactly this payload.
"""

from __future__ import annotations

import hashlib
import hmac

TAG_BYTES = 16


def derive_key(seed: int, node_id: int) -> bytes:
    """Stable per-node key from the run seed."""
    material = f"dagfl-key:{seed}:{node_id}".encode()
    return hashlib.sha256(material).digest()


def make_tag(key: bytes, content: bytes) -> str:
    return hmac.new(key, content, hashlib.sha256).hexdigest()[: 2 * TAG_BYTES]


def verify_tag(key: bytes, content: bytes, tag: str) -> bool:
    expected = make_tag(key, content)
    return hmac.compare_digest(expected, tag)


class KeyRing:
    """Mapping of node id to signing key, shared by all honest parties."""

    def __init__(self, keys: dict[int, bytes] | None = None):
        self._keys: dict[int, bytes] = dict(keys) if keys else {}

    def add(self, node_id: int, key: bytes) -> None:
        self._keys[node_id] = key

    def key_for(self, node_id: int) -> bytes | None:
        return self._keys.get(node_id)

    def verify(self, node_id: int, content: bytes, tag: str) -> bool:
        key = self._keys.get(node_id)
        if key is None:
            return False
        return verify_tag(key, content, tag)

    @classmethod
    def for_run(cls, seed: int, node_ids: list[int]) -> "KeyRing":
        return cls({n: derive_key(seed, n) for n in node_ids})
