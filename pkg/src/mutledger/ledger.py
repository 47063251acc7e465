"""Append-only hash-chained block log, validity journal and world state.

On disk a ledger is a directory holding two JSONL files:

``blocks.jsonl``
    A header line ``{"clock":..,"digest":..,"format":"mutledger-ledger","version":1}``
    followed by one canonical-JSON block per line, genesis first.
``journal.jsonl``
    Validity transitions ``{"at","new_validity","tx_id"}`` and delay changes
    ``{"at","new_delay","tx_id"}``, in the order they were applied.

Blocks are never rewritten. Everything mutable about a transaction lives in
the journal, and the world state is the fold of blocks plus journal.
"""
from __future__ import annotations

import dataclasses
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConfigError, DuplicateTxId, IllegalTransition, NotFound
from .model import (
    LogicalClock, MutableTransaction, Transaction, Validity, WallClock,
    canonical_json, digest_hex, record_from_dict, validity_transition,
)

FORMAT = "mutledger-ledger"
FORMAT_VERSION = 1
BLOCKS_FILE = "blocks.jsonl"
JOURNAL_FILE = "journal.jsonl"


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    tx_list: tuple
    block_hash: str
    body: str  # exact canonical encoding covered by block_hash

    @classmethod
    def build(cls, height: int, prev_hash: str, tx_list: Iterable[dict], algorithm: str) -> "Block":
        tx_list = tuple(tx_list)
        body = canonical_json({"height": height, "prev_hash": prev_hash, "tx_list": list(tx_list)})
        return cls(height, prev_hash, tx_list, digest_hex(body, algorithm), body)

    def to_line(self) -> str:
        # "block_hash" sorts before "height", so this is still canonical JSON.
        return '{"block_hash":"%s",%s' % (self.block_hash, self.body[1:])

    @classmethod
    def from_line(cls, line: str) -> "Block":
        d = json.loads(line)
        block_hash = d.pop("block_hash")
        body = canonical_json(d)
        return cls(d["height"], d["prev_hash"], tuple(d["tx_list"]), block_hash, body)


class BlockLog:
    def __init__(self, algorithm: str = "sha256"):
        self.algorithm = algorithm
        zero = "00" * (len(digest_hex("", algorithm)) // 2)
        self.blocks = [Block.build(0, zero, (), algorithm)]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def next_block(self, tx_dicts: Iterable[dict]) -> Block:
        return Block.build(self.height + 1, self.tip.block_hash, tx_dicts, self.algorithm)

    def push(self, block: Block) -> None:
        if block.height != self.height + 1:
            raise ValueError(f"expected height {self.height + 1}, got {block.height}")
        self.blocks.append(block)

    def first_corrupt_height(self) -> Optional[int]:
        prev = None
        for h, block in enumerate(self.blocks):
            if block.height != h or digest_hex(block.body, self.algorithm) != block.block_hash:
                return h
            if prev is not None and block.prev_hash != prev.block_hash:
                return h
            if prev is None and set(block.prev_hash) != {"0"}:
                return h
            prev = block
        return None

    def verify(self) -> bool:
        return self.first_corrupt_height() is None


@dataclass(frozen=True)
class CommitReceipt:
    tx_id: str
    block_height: int
    submission_time: int


class WorldState:
    """Latest-value projection of the ledger.

    Two namespaces: ``tx:<id>`` holds the current record of every transaction
    and ``idx:<object_key>`` the ids of the transactions that wrote the object,
    in submission order. Each entry carries the timestamp of its last writer.
    """

    def __init__(self):
        self._tx: dict = {}
        self._idx: dict = {}

    def __contains__(self, tx_id: str) -> bool:
        return tx_id in self._tx

    def __len__(self) -> int:
        return len(self._tx)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return self._tx == other._tx and self._idx == other._idx

    def apply_commit(self, tx: Transaction) -> None:
        self._tx[tx.id] = (tx, tx.submission_time)
        if isinstance(tx, MutableTransaction):
            for key in tx.payload:
                ids, _ = self._idx.get(key, ((), 0))
                self._idx[key] = (ids + (tx.id,), tx.submission_time)

    def replace(self, tx: Transaction, version: int) -> None:
        self._tx[tx.id] = (tx, version)

    def record(self, tx_id: str) -> Transaction:
        try:
            return self._tx[tx_id][0]
        except KeyError:
            raise NotFound(tx_id) from None

    def get(self, tx_id: str) -> Optional[Transaction]:
        entry = self._tx.get(tx_id)
        return entry[0] if entry else None

    def history_ids(self, key: str) -> tuple:
        return self._idx.get(key, ((), 0))[0]

    def history(self, key: str) -> list:
        return [self._tx[i][0] for i in self.history_ids(key)]

    def keys(self) -> list:
        return sorted(self._idx)

    def records(self) -> list:
        return [entry[0] for entry in self._tx.values()]

    def snapshot(self) -> dict:
        """Canonical encoding of every entry, for byte-exact comparisons."""
        snap = {}
        for tx_id, (rec, version) in self._tx.items():
            snap["tx:" + tx_id] = (canonical_json(rec.to_dict()), version)
        for key, (ids, version) in self._idx.items():
            snap["idx:" + key] = (canonical_json(list(ids)), version)
        return snap


def _apply_journal_entry(state: WorldState, entry: dict) -> Transaction:
    rec = state.record(entry["tx_id"])
    if not isinstance(rec, MutableTransaction):
        raise IllegalTransition(f"{rec.id} is not a mutable transaction")
    if "new_validity" in entry:
        new = validity_transition(rec, Validity(entry["new_validity"]), entry["at"])
    else:
        if rec.validity is not Validity.PENDING:
            raise IllegalTransition(f"{rec.id} is {rec.validity.value}; its delay is fixed")
        new = dataclasses.replace(rec, delay=entry["new_delay"])
    state.replace(new, entry["at"])
    return new


def replay(block_lines: Iterable[str], journal_lines: Iterable[str]) -> WorldState:
    """Rebuild the world state from serialized blocks and journal entries."""
    state = WorldState()
    for line in block_lines:
        for d in Block.from_line(line).tx_list:
            state.apply_commit(record_from_dict(d))
    for line in journal_lines:
        _apply_journal_entry(state, json.loads(line))
    return state


class Ledger:
    """Single-writer commit pipeline over a block log, journal and world state.

    With ``path`` set, every commit and journal entry is appended (and fsynced)
    to disk before it is applied in memory; an existing directory is replayed
    on construction. Without ``path`` the ledger lives in memory but keeps the
    same serialized lines, so replay can be checked either way.
    """

    def __init__(self, path=None, *, digest: str = "sha256", clock: Optional[LogicalClock] = None,
                 fsync: bool = True):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._lock = threading.RLock()
        self.state = WorldState()
        self.journal_lines: list = []
        self._last_time = 0

        if self.path is not None and (self.path / BLOCKS_FILE).exists():
            self._load(clock)
            return

        self.digest = digest
        self.clock = clock if clock is not None else LogicalClock()
        self.log = BlockLog(digest)
        self.header = self._make_header()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            self._write(BLOCKS_FILE, [canonical_json(self.header), self.log.tip.to_line()], mode="w")
            self._write(JOURNAL_FILE, [], mode="w")

    def _make_header(self) -> dict:
        header = {"format": FORMAT, "version": FORMAT_VERSION, "digest": self.digest}
        if isinstance(self.clock, WallClock):
            header["clock"] = {"kind": "wall", "epoch_ms": self.clock.epoch_ms}
        else:
            header["clock"] = {"kind": "logical"}
        return header

    def _load(self, clock: Optional[LogicalClock]) -> None:
        with open(self.path / BLOCKS_FILE) as f:
            lines = f.read().splitlines()
        header = json.loads(lines[0])
        if header.get("format") != FORMAT or header.get("version") != FORMAT_VERSION:
            raise ConfigError(f"{self.path} is not a {FORMAT} v{FORMAT_VERSION} ledger")
        self.header = header
        self.digest = header["digest"]
        if clock is None:
            spec = header.get("clock", {"kind": "logical"})
            clock = WallClock(spec["epoch_ms"]) if spec["kind"] == "wall" else LogicalClock()
        self.clock = clock
        self.log = BlockLog(self.digest)
        self.log.blocks = [Block.from_line(line) for line in lines[1:]]
        journal = self.path / JOURNAL_FILE
        self.journal_lines = journal.read_text().splitlines() if journal.exists() else []
        self.state = replay(self.block_lines[1:], self.journal_lines)
        for rec in self.state.records():
            self._last_time = max(self._last_time, rec.submission_time)
        for line in self.journal_lines:
            self._last_time = max(self._last_time, json.loads(line)["at"])
        self.clock.observe(self._last_time)

    def _write(self, name: str, lines: list, mode: str = "a") -> None:
        with open(self.path / name, mode) as f:
            for line in lines:
                f.write(line + "\n")
            f.flush()
            if self.fsync:
                os.fsync(f.fileno())

    @property
    def block_lines(self) -> list:
        return [b.to_line() for b in self.log.blocks]

    @property
    def height(self) -> int:
        return self.log.height

    def commit(self, tx: Transaction) -> CommitReceipt:
        with self._lock:
            if tx.id in self.state:
                raise DuplicateTxId(tx.id)
            if tx.submission_time <= self._last_time:
                raise ValueError(f"submission_time {tx.submission_time} is not after {self._last_time}")
            block = self.log.next_block([tx.to_dict()])
            if self.path is not None:
                self._write(BLOCKS_FILE, [block.to_line()])
            self.log.push(block)
            self.state.apply_commit(tx)
            self._last_time = tx.submission_time
            self.clock.observe(tx.submission_time)
            return CommitReceipt(tx.id, block.height, tx.submission_time)

    def _journal(self, entry: dict) -> MutableTransaction:
        with self._lock:
            line = canonical_json(entry)
            # Reject before anything reaches disk.
            rec = self.state.record(entry["tx_id"])
            if not isinstance(rec, MutableTransaction):
                raise IllegalTransition(f"{rec.id} is not a mutable transaction")
            if rec.validity is not Validity.PENDING:
                raise IllegalTransition(f"{rec.id} is {rec.validity.value}, not PENDING")
            if self.path is not None:
                self._write(JOURNAL_FILE, [line])
            self.journal_lines.append(line)
            return _apply_journal_entry(self.state, entry)

    def update_validity(self, tx_id: str, new_validity: Validity, at: int) -> MutableTransaction:
        rec = self.get_record(tx_id)
        if isinstance(rec, MutableTransaction):
            validity_transition(rec, new_validity, at)  # raises before anything is written
        return self._journal({"tx_id": tx_id, "new_validity": Validity(new_validity).value, "at": at})

    def update_delay(self, tx_id: str, new_delay: int, at: int) -> MutableTransaction:
        if new_delay < 0:
            raise ValueError("delay must be non-negative")
        return self._journal({"tx_id": tx_id, "new_delay": new_delay, "at": at})

    def get_record(self, tx_id: str) -> Transaction:
        return self.state.record(tx_id)

    def get_history(self, object_key: str) -> list:
        return self.state.history(object_key)

    def verify_chain(self) -> bool:
        return self.log.verify()

    def first_corrupt_height(self) -> Optional[int]:
        return self.log.first_corrupt_height()
