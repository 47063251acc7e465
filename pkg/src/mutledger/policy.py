"""Mutation policies: when a pending transaction consolidates and who may cancel it.

Policy configuration is a JSON object mapping operation names to policies::

    {
      "createGrapes": {"kind": "EXPIRATION", "delay": 300000,
                       "cancel_rule": {"admin_any": true, "self_cancel": true}},
      "receivePackage": {"kind": "CONDITION",
                         "condition": {"trigger_op": "confirmShipment",
                                       "trigger_field": "shipment",
                                       "pending_field": "shipment"}}
    }

Operations without an entry fall back to an EXPIRATION policy with the
book's default delay.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

from .errors import ConfigError, DependencyViolation, IllegalTransition, NotAdmin
from .model import MutableTransaction, Principal, Role, Validity


class PolicyKind(str, Enum):
    EXPIRATION = "EXPIRATION"
    CONDITION = "CONDITION"


@dataclass(frozen=True)
class ConditionSpec:
    """A later ``trigger_op`` transaction whose ``trigger_field`` value equals
    the pending transaction's ``pending_field`` value consolidates it."""

    trigger_op: str
    trigger_field: str
    pending_field: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class CancelRule:
    admin_any: bool = True
    self_cancel: bool = True

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class MutationPolicy:
    kind: PolicyKind = PolicyKind.EXPIRATION
    delay: Optional[int] = None
    condition: Optional[ConditionSpec] = None
    cancel_rule: CancelRule = field(default_factory=CancelRule)

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.EXPIRATION:
            if self.delay is None or self.condition is not None:
                raise ConfigError("EXPIRATION policies carry a delay and no condition")
            if self.delay < 0:
                raise ConfigError("delay must be non-negative")
        elif self.condition is None or self.delay is not None:
            raise ConfigError("CONDITION policies carry a condition and no delay")

    @classmethod
    def expiration(cls, delay: int, cancel_rule: CancelRule = CancelRule()) -> "MutationPolicy":
        return cls(PolicyKind.EXPIRATION, delay=delay, cancel_rule=cancel_rule)

    @classmethod
    def on_condition(cls, condition: ConditionSpec, cancel_rule: CancelRule = CancelRule()) -> "MutationPolicy":
        return cls(PolicyKind.CONDITION, condition=condition, cancel_rule=cancel_rule)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "cancel_rule": self.cancel_rule.to_dict()}
        if self.kind is PolicyKind.EXPIRATION:
            d["delay"] = self.delay
        else:
            d["condition"] = self.condition.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MutationPolicy":
        try:
            rule = CancelRule(**d.get("cancel_rule", {}))
            cond = d.get("condition")
            return cls(
                PolicyKind(d.get("kind", "EXPIRATION")),
                delay=d.get("delay"),
                condition=ConditionSpec(**cond) if cond is not None else None,
                cancel_rule=rule,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad policy {dict(d)!r}: {exc}") from exc


class PolicyBook:
    """Per-operation policies with an EXPIRATION fallback."""

    def __init__(self, policies: Optional[Mapping[str, MutationPolicy]] = None, default_delay: int = 0,
                 default_cancel_rule: CancelRule = CancelRule()):
        self.policies = dict(policies or {})
        self.default = MutationPolicy.expiration(default_delay, default_cancel_rule)

    def for_op(self, op_name: str) -> MutationPolicy:
        return self.policies.get(op_name, self.default)

    def watching(self, trigger_op: str) -> list:
        """Operation names whose CONDITION policy fires on ``trigger_op``."""
        return [op for op, pol in self.policies.items()
                if pol.kind is PolicyKind.CONDITION and pol.condition.trigger_op == trigger_op]

    @classmethod
    def from_mapping(cls, policies: Mapping[str, Mapping], default_delay: int = 0,
                     default_cancel_rule: Optional[Mapping] = None) -> "PolicyBook":
        rule = CancelRule(**(default_cancel_rule or {}))
        return cls({op: MutationPolicy.from_dict(p) for op, p in policies.items()},
                   default_delay, rule)

    def to_mapping(self) -> dict:
        return {op: p.to_dict() for op, p in sorted(self.policies.items())}


def is_expired(tx: MutableTransaction, now: int) -> bool:
    return now >= tx.submission_time + tx.delay


def expiry_instant(tx: MutableTransaction, policy: MutationPolicy) -> float:
    """When ``tx`` consolidates by the passage of time; infinite under CONDITION."""
    if policy.kind is PolicyKind.CONDITION:
        return math.inf
    return tx.submission_time + tx.delay


def field_values(tx: MutableTransaction, name: str) -> set:
    values = set()
    for obj in tx.payload.values():
        if isinstance(obj, Mapping) and name in obj:
            v = obj[name]
            if isinstance(v, (str, int, float, bool)) or v is None:
                values.add(v)
    return values


def condition_satisfied(tx: MutableTransaction, candidate: MutableTransaction, spec: ConditionSpec) -> bool:
    if candidate.op_name != spec.trigger_op:
        return False
    if candidate.submission_time <= tx.submission_time:
        return False
    return bool(field_values(candidate, spec.trigger_field) & field_values(tx, spec.pending_field))


def authorize_cancel(p: Principal, target: MutableTransaction, rule: CancelRule) -> bool:
    if p.role is Role.OBSERVER:
        return False
    if rule.admin_any and p.role is Role.ADMIN and p.org == target.issuer.org:
        return True
    return rule.self_cancel and p == target.issuer


def raise_delay(p: Principal, tx: MutableTransaction, new_delay: int,
                dependency_expiries: Iterable[float] = (),
                dependent_expiries: Iterable[float] = ()) -> MutableTransaction:
    """Return ``tx`` with ``new_delay`` if the dependency ordering survives.

    Every pending transaction ``tx`` depends on must expire no later than the
    new expiry, and every pending dependent no earlier.
    """
    if p.role is not Role.ADMIN:
        raise NotAdmin(f"{p.name} is not an administrator")
    if tx.validity is not Validity.PENDING:
        raise IllegalTransition(f"{tx.id} is {tx.validity.value}, not PENDING")
    if new_delay < 0:
        raise ValueError("delay must be non-negative")
    new_expiry = tx.submission_time + new_delay
    for dep in dependency_expiries:
        if dep > new_expiry:
            raise DependencyViolation(f"a dependency expires at {dep}, after the new expiry {new_expiry}")
    for dep in dependent_expiries:
        if dep < new_expiry:
            raise DependencyViolation(f"a dependent expires at {dep}, before the new expiry {new_expiry}")
    return dataclasses.replace(tx, delay=new_delay)
