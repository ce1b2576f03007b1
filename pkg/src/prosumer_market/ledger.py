"""Append-only hash-chained audit log.

Stands in for the blockchain posting medium: a single-writer chain where
every block commits to its predecessor, so any payload mutation breaks
verification.  Timestamps are a logical clock (block order), which keeps
identically-seeded runs bit-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

__all__ = ["LedgerBlock", "Ledger", "ledger_append", "ledger_verify"]

GENESIS_HASH = "0" * 64


def _block_hash(index: int, timestamp: int, payload, prev_hash: str) -> str:
    doc = json.dumps(
        {"index": index, "timestamp": timestamp, "payload": payload,
         "prev_hash": prev_hash},
        sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


@dataclass(frozen=True)
class LedgerBlock:
    index: int
    timestamp: int
    payload: dict
    prev_hash: str
    hash: str


class Ledger:
    """Append-only chain of JSON payload blocks."""

    def __init__(self):
        self.blocks: list[LedgerBlock] = []

    def append(self, payload: dict) -> LedgerBlock:
        index = len(self.blocks)
        prev_hash = self.blocks[-1].hash if self.blocks else GENESIS_HASH
        timestamp = index
        block = LedgerBlock(
            index=index, timestamp=timestamp, payload=payload,
            prev_hash=prev_hash,
            hash=_block_hash(index, timestamp, payload, prev_hash))
        self.blocks.append(block)
        return block

    def verify(self) -> bool:
        prev_hash = GENESIS_HASH
        for k, block in enumerate(self.blocks):
            if block.index != k:
                return False
            if block.prev_hash != prev_hash:
                return False
            if _block_hash(block.index, block.timestamp, block.payload,
                           block.prev_hash) != block.hash:
                return False
            prev_hash = block.hash
        return True

    def payloads(self) -> list[dict]:
        return [b.payload for b in self.blocks]

    def to_jsonl(self) -> str:
        lines = []
        for b in self.blocks:
            lines.append(json.dumps(
                {"index": b.index, "timestamp": b.timestamp,
                 "payload": b.payload, "prev_hash": b.prev_hash,
                 "hash": b.hash},
                sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Ledger":
        ledger = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            ledger.blocks.append(LedgerBlock(
                index=doc["index"], timestamp=doc["timestamp"],
                payload=doc["payload"], prev_hash=doc["prev_hash"],
                hash=doc["hash"]))
        return ledger

    @classmethod
    def load(cls, path) -> "Ledger":
        return cls.from_jsonl(Path(path).read_text())


def ledger_append(ledger: Ledger, payload: dict) -> Ledger:
    """Append a payload block and return the (same, extended) ledger."""
    ledger.append(payload)
    return ledger


def ledger_verify(ledger: Ledger) -> bool:
    """Recompute every hash and link; True iff the whole chain checks out."""
    return ledger.verify()
