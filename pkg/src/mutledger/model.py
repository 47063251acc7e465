"""Transaction model: mutable and canceling transactions, validity, clocks.

Every record has a canonical JSON encoding (sorted keys, no whitespace) and
transaction ids are SHA-256 digests of the immutable part of that encoding.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Union

from .errors import IllegalTransition


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_hex(data: str, algorithm: str = "sha256") -> str:
    return hashlib.new(algorithm, data.encode("utf-8")).hexdigest()


class Validity(str, Enum):
    PENDING = "PENDING"
    CONSOLIDATED = "CONSOLIDATED"
    CANCELED = "CANCELED"


class Role(str, Enum):
    ADMIN = "ADMIN"
    USER = "USER"
    OBSERVER = "OBSERVER"


@dataclass(frozen=True)
class Principal:
    name: str
    org: str
    role: Role = Role.USER

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))

    def to_dict(self) -> dict:
        return {"name": self.name, "org": self.org, "role": self.role.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Principal":
        return cls(d["name"], d["org"], Role(d["role"]))


@dataclass(frozen=True)
class MutableTransaction:
    """A ledger write that stays cancelable until its mutation policy is met.

    ``payload`` maps each object key the transaction writes to the full
    post-state of that object (``None`` deletes it). Payload dicts are shared,
    never mutated in place.
    """

    id: str
    submission_time: int
    issuer: Principal
    op_name: str
    payload: Mapping[str, Optional[dict]]
    reads: tuple = ()
    delay: int = 0
    validity: Validity = Validity.PENDING
    permanent_state_time: Optional[int] = None

    kind = "MT"

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        if (self.permanent_state_time is None) != (self.validity is Validity.PENDING):
            raise ValueError("permanent_state_time is set iff validity is not PENDING")
        if self.permanent_state_time is not None and self.permanent_state_time < self.submission_time:
            raise ValueError("permanent_state_time precedes submission_time")

    @classmethod
    def new(cls, submission_time: int, issuer: Principal, op_name: str,
            payload: Mapping[str, Optional[dict]], reads: Iterable = (), delay: int = 0):
        payload = dict(payload)
        tx_id = mt_id(op_name, payload, issuer, submission_time)
        return cls(tx_id, submission_time, issuer, op_name, payload,
                   tuple((k, v) for k, v in reads), delay)

    @property
    def expiry(self) -> int:
        return self.submission_time + self.delay

    def writes(self, key: str) -> bool:
        return key in self.payload

    def to_dict(self) -> dict:
        return {
            "kind": "MT",
            "id": self.id,
            "submission_time": self.submission_time,
            "issuer": self.issuer.to_dict(),
            "op_name": self.op_name,
            "payload": self.payload,
            "reads": [list(r) for r in self.reads],
            "delay": self.delay,
            "validity": self.validity.value,
            "permanent_state_time": self.permanent_state_time,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MutableTransaction":
        return cls(
            d["id"], d["submission_time"], Principal.from_dict(d["issuer"]), d["op_name"],
            d["payload"], tuple((k, v) for k, v in d["reads"]), d["delay"],
            Validity(d["validity"]), d["permanent_state_time"],
        )


@dataclass(frozen=True)
class CancelingTransaction:
    id: str
    submission_time: int
    issuer: Principal
    target: str
    cascade_set: tuple = ()

    kind = "CT"

    @classmethod
    def new(cls, submission_time: int, issuer: Principal, target: str, cascade_set: Iterable[str]):
        tx_id = digest_hex(canonical_json({
            "kind": "CT", "issuer": issuer.to_dict(), "target": target,
            "submission_time": submission_time,
        }))
        return cls(tx_id, submission_time, issuer, target, tuple(cascade_set))

    def to_dict(self) -> dict:
        return {
            "kind": "CT",
            "id": self.id,
            "submission_time": self.submission_time,
            "issuer": self.issuer.to_dict(),
            "target": self.target,
            "cascade_set": list(self.cascade_set),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CancelingTransaction":
        return cls(d["id"], d["submission_time"], Principal.from_dict(d["issuer"]),
                   d["target"], tuple(d["cascade_set"]))


Transaction = Union[MutableTransaction, CancelingTransaction]


def record_from_dict(d: Mapping) -> Transaction:
    if d["kind"] == "MT":
        return MutableTransaction.from_dict(d)
    if d["kind"] == "CT":
        return CancelingTransaction.from_dict(d)
    raise ValueError(f"unknown transaction kind {d['kind']!r}")


def mt_id(op_name: str, payload: Mapping, issuer: Principal, submission_time: int) -> str:
    # Mutable fields (validity, permanent_state_time, delay) stay out of the id.
    return digest_hex(canonical_json({
        "kind": "MT", "op_name": op_name, "payload": payload,
        "issuer": issuer.to_dict(), "submission_time": submission_time,
    }))


@dataclass(frozen=True)
class DependencyEdge:
    source: str  # the later transaction
    target: str  # the prior writer it depends on
    object_key: str


def alive_at(tx: MutableTransaction, instant: int) -> bool:
    """True unless ``tx`` had already been canceled at ``instant``."""
    return not (tx.validity is Validity.CANCELED and tx.permanent_state_time < instant)


def prior_writer(history: Iterable[MutableTransaction], before: int) -> Optional[MutableTransaction]:
    """Latest transaction in ``history`` submitted before ``before`` and not
    canceled by then."""
    found = None
    for tx in history:
        if tx.submission_time >= before:
            break
        if alive_at(tx, before):
            found = tx
    return found


def derive_dependencies(tx: MutableTransaction, state) -> list:
    """One edge per written key that already has a live writer in ``state``."""
    edges = []
    for key in sorted(tx.payload):
        prev = prior_writer(state.history(key), tx.submission_time)
        if prev is not None:
            edges.append(DependencyEdge(tx.id, prev.id, key))
    return edges


def validity_transition(tx: MutableTransaction, target: Validity, at: int) -> MutableTransaction:
    if tx.validity is not Validity.PENDING:
        raise IllegalTransition(f"{tx.id} is {tx.validity.value}, not PENDING")
    target = Validity(target)
    if target is Validity.PENDING:
        raise IllegalTransition("cannot transition back to PENDING")
    if at < tx.submission_time:
        raise IllegalTransition("transition instant precedes submission")
    return dataclasses.replace(tx, validity=target, permanent_state_time=at)



class LogicalClock:
    """Monotonic logical-millisecond clock owned by one engine.

    ``tick`` hands out strictly increasing commit timestamps; ``advance``
    lets time pass without commits (used to expire delays).
    """

    def __init__(self, start: int = 0):
        self._now = start
        self._lock = threading.Lock()

    @property
    def now(self) -> int:
        return self._now

    def tick(self) -> int:
        with self._lock:
            self._now += 1
            return self._now

    def advance(self, delta: int) -> int:
        if delta < 0:
            raise ValueError("clock cannot move backwards")
        with self._lock:
            self._now += delta
            return self._now

    def advance_to(self, instant: int) -> int:
        with self._lock:
            if instant < self._now:
                raise ValueError(f"clock is at {self._now}, cannot rewind to {instant}")
            self._now = instant
            return self._now

    def observe(self, instant: int) -> None:
        """Make sure later ticks come after ``instant`` (used on replay)."""
        with self._lock:
            self._now = max(self._now, instant)


class WallClock(LogicalClock):
    """Logical clock whose units track wall-clock milliseconds since ``epoch_ms``."""

    def __init__(self, epoch_ms: Optional[int] = None):
        super().__init__(0)
        self.epoch_ms = int(time.time() * 1000) if epoch_ms is None else epoch_ms

    def _wall(self) -> int:
        return int(time.time() * 1000) - self.epoch_ms

    @property
    def now(self) -> int:
        with self._lock:
            self._now = max(self._now, self._wall())
            return self._now

    def tick(self) -> int:
        with self._lock:
            self._now = max(self._now + 1, self._wall())
            return self._now
