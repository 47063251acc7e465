"""The mutable-transaction engine: issue, cancel, query and view generation.

Objects are never stored directly. Each object key indexes the transactions
that wrote it, and the object an application sees is generated on demand
from that history, skipping canceled transactions. Queries consolidate any
pending transaction whose policy has been met before generating the view.
"""
from __future__ import annotations

import copy
import json
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .contract import AssetContract, Contract
from .errors import (
    AlreadyCanceled, AlreadyConsolidated, DependencyExpiryViolation, IllegalTransition,
    NotAdmin, NotFound, Unauthorized, ValidationFailed,
)
from .ledger import CommitReceipt, Ledger
from .model import (
    DependencyEdge, MutableTransaction, CancelingTransaction, Principal, Role, Validity,
    canonical_json, derive_dependencies, prior_writer,
)
from .policy import (
    PolicyBook, PolicyKind, authorize_cancel, condition_satisfied, expiry_instant, is_expired,
    raise_delay as policy_raise_delay,
)


@dataclass(frozen=True)
class ViewObject:
    object_key: str
    body: dict
    derived_from: str
    as_of: int


@dataclass(frozen=True)
class CancelReceipt(CommitReceipt):
    target: str = ""
    cascade_set: tuple = ()


def apply_changes(body: Optional[dict], tx: MutableTransaction, object_key: str) -> Optional[dict]:
    # Payloads carry the full post-state, so applying a write replaces the object.
    return tx.payload[object_key]


def generate_view(transactions: Iterable[MutableTransaction], object_key: str,
                  as_of: int = 0) -> Optional[ViewObject]:
    """Build the object ``object_key`` from its transaction history.

    The starting point is the most recent consolidated transaction submitted
    after every cancellation in the history took effect; nothing before it
    can still change. Absent such an anchor the replay starts from nothing.
    Every non-canceled transaction after the anchor is then applied in
    submission order.

    The published pseudocode breaks out of its inner loop on the first
    canceled transaction it compares against; the anchor test here is the
    quantified one (later than *all* cancellations), which the surrounding
    description states and which agrees with a full replay.
    """
    ordered = sorted(transactions, key=lambda t: t.submission_time)
    consolidated = [t for t in ordered if t.validity is Validity.CONSOLIDATED]
    canceled = sorted((t for t in ordered if t.validity is Validity.CANCELED),
                      key=lambda t: t.permanent_state_time, reverse=True)

    anchor = None
    for candidate in reversed(consolidated):
        if all(candidate.submission_time > c.permanent_state_time for c in canceled):
            anchor = candidate
            break

    live = [t for t in ordered if t.validity is not Validity.CANCELED]
    if anchor is not None:
        body = anchor.payload[object_key]
        last = anchor
        live = [t for t in live if t.submission_time > anchor.submission_time]
    else:
        body, last = None, None
    for tx in live:
        body = apply_changes(body, tx, object_key)
        last = tx
    if body is None:
        return None
    return ViewObject(object_key, copy.deepcopy(body), last.id, as_of)


@dataclass
class DependencyGraph:
    nodes: set = field(default_factory=set)
    edges: set = field(default_factory=set)

    def dependencies_of(self, tx_id: str) -> set:
        return {e.target for e in self.edges if e.source == tx_id}

    def dependents_of(self, tx_id: str) -> set:
        return {e.source for e in self.edges if e.target == tx_id}

    def reachable_dependents(self, tx_id: str) -> set:
        """Every transaction that transitively depends on ``tx_id``."""
        reverse = defaultdict(set)
        for e in self.edges:
            reverse[e.target].add(e.source)
        seen, stack = set(), [tx_id]
        while stack:
            for nxt in reverse[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen


def build_graph(transactions: Iterable) -> DependencyGraph:
    mts = sorted((t for t in transactions if isinstance(t, MutableTransaction)),
                 key=lambda t: t.submission_time)
    graph = DependencyGraph(nodes={t.id for t in mts})
    by_key = defaultdict(list)
    for tx in mts:
        for key in sorted(tx.payload):
            prev = prior_writer(by_key[key], tx.submission_time)
            if prev is not None:
                graph.edges.add(DependencyEdge(tx.id, prev.id, key))
            by_key[key].append(tx)
    return graph


class _ViewReader:
    def __init__(self, engine: "Engine", now: int):
        self._engine = engine
        self._now = now
        self.reads: dict = {}

    def get(self, key: str) -> Optional[dict]:
        view = self._engine._view(key, self._now)
        if view is None:
            self.reads[key] = 0
            return None
        self.reads[key] = self._engine.ledger.get_record(view.derived_from).submission_time
        return view.body


class Engine:
    """Serialized pipeline for mutable transactions over one :class:`Ledger`.

    Every public operation holds the engine lock, so commits, validity
    changes and query-time consolidation never interleave.
    """

    def __init__(self, contract: Optional[Contract] = None, policies: Optional[PolicyBook] = None,
                 ledger: Optional[Ledger] = None):
        self.contract = contract if contract is not None else AssetContract()
        self.policies = policies if policies is not None else PolicyBook()
        self.ledger = ledger if ledger is not None else Ledger()
        self._lock = threading.RLock()
        self._revoked: set = set()
        self._by_op = defaultdict(list)
        self._watchers = defaultdict(set)
        mts = [r for r in self.ledger.state.records() if isinstance(r, MutableTransaction)]
        for rec in sorted(mts, key=lambda r: r.submission_time):
            self._index(rec)

    @property
    def clock(self):
        return self.ledger.clock

    @property
    def state(self):
        return self.ledger.state

    def _advance(self, now: Optional[int]) -> int:
        if now is None:
            return self.clock.now
        if now > self.clock.now:
            self.clock.advance_to(now)
        elif now < self.clock.now:
            raise ValueError(f"clock is already at {self.clock.now}")
        return now

    def _index(self, rec: MutableTransaction) -> None:
        self._by_op[rec.op_name].append(rec.id)
        policy = self.policies.for_op(rec.op_name)
        if rec.validity is Validity.PENDING and policy.kind is PolicyKind.CONDITION:
            self._watchers[policy.condition.trigger_op].add(rec.id)

    def _check_principal(self, p: Principal) -> None:
        if p.role is Role.OBSERVER:
            raise Unauthorized(f"{p.name} is an observer")
        if p.name in self._revoked:
            raise Unauthorized(f"{p.name} has been revoked")

    # -- authorization of principals ------------------------------------

    def revoke(self, name: str) -> None:
        """Withdraw a principal's right to issue or cancel anything."""
        with self._lock:
            self._revoked.add(name)

    def reinstate(self, name: str) -> None:
        with self._lock:
            self._revoked.discard(name)

    # -- dependency helpers ---------------------------------------------

    def _dependencies(self, rec: MutableTransaction) -> list:
        deps = {}
        for key in rec.payload:
            prev = prior_writer(self.state.history(key), rec.submission_time)
            if prev is not None:
                deps[prev.id] = prev
        return list(deps.values())

    def _dependents(self, rec: MutableTransaction) -> list:
        found = {}
        for key in rec.payload:
            history = self.state.history(key)
            later = [t for t in history if t.submission_time > rec.submission_time]
            for tx in later:
                prev = prior_writer(history, tx.submission_time)
                if prev is not None and prev.id == rec.id:
                    found[tx.id] = tx
        return sorted(found.values(), key=lambda t: t.submission_time)

    def dependencies(self, tx_id: str) -> list:
        rec = self._mt(tx_id)
        return derive_dependencies(rec, self.state)

    def graph(self) -> DependencyGraph:
        with self._lock:
            return build_graph(self.state.records())

    def _mt(self, tx_id: str) -> MutableTransaction:
        rec = self.ledger.get_record(tx_id)
        if not isinstance(rec, MutableTransaction):
            raise NotFound(f"{tx_id} is not a mutable transaction")
        return rec

    # -- consolidation --------------------------------------------------

    def _expiry(self, rec: MutableTransaction) -> float:
        return expiry_instant(rec, self.policies.for_op(rec.op_name))

    def _consolidate(self, rec: MutableTransaction, at: int) -> None:
        """Consolidate ``rec`` at ``at`` along with every pending transaction it
        depends on, so a consolidated transaction never rests on a pending one.
        A forced dependency keeps its own expiry instant when that comes first."""
        when = {rec.id: at}
        closure = {rec.id: rec}
        stack = [rec]
        while stack:
            node = stack.pop()
            for dep in self._dependencies(node):
                if dep.validity is not Validity.PENDING:
                    continue
                bound = min(self._expiry(dep), when[node.id])
                if dep.id not in when or bound < when[dep.id]:
                    when[dep.id] = bound
                    closure[dep.id] = dep
                    stack.append(dep)
        for node in sorted(closure.values(), key=lambda t: t.submission_time):
            self.ledger.update_validity(node.id, Validity.CONSOLIDATED, int(when[node.id]))

    def _find_trigger(self, rec: MutableTransaction, spec) -> Optional[MutableTransaction]:
        for tid in self._by_op.get(spec.trigger_op, ()):
            cand = self.state.record(tid)
            if cand.validity is not Validity.CANCELED and condition_satisfied(rec, cand, spec):
                return cand
        return None

    def consolidate_lazily(self, history: Iterable[MutableTransaction], now: int) -> list:
        """Consolidate every transaction in ``history`` whose policy is met at
        ``now`` and return the refreshed records. Running it twice is a no-op."""
        with self._lock:
            ids = [t.id for t in history]
            for tx_id in ids:
                rec = self.state.record(tx_id)
                if rec.validity is not Validity.PENDING:
                    continue
                policy = self.policies.for_op(rec.op_name)
                if policy.kind is PolicyKind.EXPIRATION:
                    if is_expired(rec, now):
                        self._consolidate(rec, rec.expiry)
                else:
                    trigger = self._find_trigger(rec, policy.condition)
                    if trigger is not None:
                        self._consolidate(rec, trigger.submission_time)
            return [self.state.record(i) for i in ids]

    def _consolidate_keys(self, keys: Iterable[str], now: int) -> None:
        for key in keys:
            self.consolidate_lazily(self.state.history(key), now)

    def _view(self, key: str, now: int) -> Optional[ViewObject]:
        history = self.consolidate_lazily(self.state.history(key), now)
        return generate_view(history, key, now)

    # -- the four operations ----------------------------------------------

    def issue_transaction(self, p: Principal, op_name: str, args: Mapping,
                          now: Optional[int] = None) -> CommitReceipt:
        with self._lock:
            now = self._advance(now)
            self._check_principal(p)
            if not self.contract.authorize(p, op_name):
                raise Unauthorized(f"{p.name} may not issue {op_name}")
            handler = self.contract.handler(op_name)
            reader = _ViewReader(self, now)
            writes = handler(reader, p, args)
            if not writes:
                raise ValidationFailed(f"{op_name} wrote nothing")
            self._consolidate_keys([k for k in writes if k not in reader.reads], now)
            payload = json.loads(canonical_json(writes))

            policy = self.policies.for_op(op_name)
            delay = policy.delay if policy.kind is PolicyKind.EXPIRATION else 0
            t = self.clock.tick()
            tx = MutableTransaction.new(t, p, op_name, payload, sorted(reader.reads.items()), delay)
            self._check_dependency_expiry(tx)

            receipt = self.ledger.commit(tx)
            self._fire_triggers(tx)
            self._index(tx)
            return receipt

    def _check_dependency_expiry(self, tx: MutableTransaction) -> None:
        own = self._expiry(tx)
        for edge in derive_dependencies(tx, self.state):
            dep = self.state.record(edge.target)
            if dep.validity is Validity.CONSOLIDATED:
                continue
            dep_policy = self.policies.for_op(dep.op_name)
            if (dep_policy.kind is PolicyKind.CONDITION
                    and condition_satisfied(dep, tx, dep_policy.condition)):
                continue  # committing tx consolidates it
            if self._expiry(dep) > own:
                raise DependencyExpiryViolation(
                    f"{dep.id} ({dep.op_name}) expires at {self._expiry(dep)}, after {own}")

    def _fire_triggers(self, tx: MutableTransaction) -> None:
        watchers = self._watchers.get(tx.op_name)
        if not watchers:
            return
        for pid in sorted(watchers, key=lambda i: self.state.record(i).submission_time):
            pending = self.state.record(pid)
            if pending.validity is not Validity.PENDING:
                watchers.discard(pid)
                continue
            spec = self.policies.for_op(pending.op_name).condition
            if condition_satisfied(pending, tx, spec):
                self._consolidate(pending, tx.submission_time)
                watchers.discard(pid)

    def cancel_transaction(self, p: Principal, target: str, now: Optional[int] = None) -> CancelReceipt:
        with self._lock:
            now = self._advance(now)
            rec = self._mt(target)
            self._check_principal(p)
            rule = self.policies.for_op(rec.op_name).cancel_rule
            if not authorize_cancel(p, rec, rule):
                raise Unauthorized(f"{p.name} may not cancel {target}")

            self._consolidate_keys(rec.payload, now)
            rec = self.state.record(target)
            if rec.validity is Validity.CONSOLIDATED:
                raise AlreadyConsolidated(target)
            if rec.validity is Validity.CANCELED:
                raise AlreadyCanceled(target)

            cascade = {rec.id: rec}
            stack = [rec]
            while stack:
                for dep in self._dependents(stack.pop()):
                    if dep.id in cascade or dep.validity is Validity.CANCELED:
                        continue
                    if dep.validity is Validity.CONSOLIDATED:
                        raise AlreadyConsolidated(dep.id, f"dependent {dep.id} "
                                                          f"of {target} is consolidated")
                    cascade[dep.id] = dep
                    stack.append(dep)
            ordered = sorted(cascade.values(), key=lambda t: t.submission_time)

            t = self.clock.tick()
            ct = CancelingTransaction.new(t, p, target, [x.id for x in ordered])
            receipt = self.ledger.commit(ct)
            for x in ordered:
                self.ledger.update_validity(x.id, Validity.CANCELED, t)
            return CancelReceipt(receipt.tx_id, receipt.block_height, receipt.submission_time,
                                 target, ct.cascade_set)

    def get_asset(self, object_key: str, now: Optional[int] = None) -> Optional[ViewObject]:
        with self._lock:
            return self._view(object_key, self._advance(now))

    def get_transactions(self, object_key: str, now: Optional[int] = None) -> list:
        with self._lock:
            return self.consolidate_lazily(self.state.history(object_key), self._advance(now))

    def get_transaction(self, tx_id: str, now: Optional[int] = None):
        """Current record of one transaction, consolidating it first if due.

        Only this transaction (and whatever it depends on) is consolidated;
        other pending writers of the same objects are left for their own query.
        """
        with self._lock:
            now = self._advance(now)
            rec = self.ledger.get_record(tx_id)
            if isinstance(rec, MutableTransaction):
                self.consolidate_lazily([rec], now)
            return self.ledger.get_record(tx_id)

    # -- administration -----------------------------------------------------

    def raise_delay(self, p: Principal, tx_id: str, new_delay: int,
                    now: Optional[int] = None) -> MutableTransaction:
        with self._lock:
            now = self._advance(now)
            if p.role is not Role.ADMIN:
                raise NotAdmin(f"{p.name} is not an administrator")
            rec = self._mt(tx_id)
            self._consolidate_keys(rec.payload, now)
            rec = self.state.record(tx_id)
            if self.policies.for_op(rec.op_name).kind is PolicyKind.CONDITION:
                raise IllegalTransition(f"{tx_id} consolidates by condition and has no delay")
            if rec.validity is Validity.PENDING and rec.submission_time + new_delay < now:
                raise IllegalTransition(f"new expiry {rec.submission_time + new_delay} is in the past")
            deps = [self._expiry(d) for d in self._dependencies(rec) if d.validity is Validity.PENDING]
            dependents = [self._expiry(d) for d in self._dependents(rec) if d.validity is Validity.PENDING]
            updated = policy_raise_delay(p, rec, new_delay, deps, dependents)
            return self.ledger.update_delay(tx_id, updated.delay, now)

    def pending_issued_by(self, issuer: str, now: Optional[int] = None) -> list:
        with self._lock:
            now = self._advance(now)
            mine = sorted((r for r in self.state.records()
                           if isinstance(r, MutableTransaction) and r.issuer.name == issuer),
                          key=lambda r: r.submission_time)
            for rec in mine:
                self._consolidate_keys(rec.payload, now)
            return [self.state.record(r.id) for r in mine
                    if self.state.record(r.id).validity is Validity.PENDING]

    def cancel_issued_by(self, p: Principal, issuer: str, now: Optional[int] = None) -> list:
        """Cancel every pending transaction ``issuer`` authored, oldest first.

        Transactions already swept up by an earlier cascade are skipped.
        """
        with self._lock:
            receipts = []
            for rec in self.pending_issued_by(issuer, now):
                if self.state.record(rec.id).validity is Validity.PENDING:
                    receipts.append(self.cancel_transaction(p, rec.id))
            return receipts

