"""Permissioned ledger with cancelable (mutable) transactions and generated views."""
from .engine import CancelReceipt, DependencyGraph, Engine, ViewObject, build_graph, generate_view
from .ledger import Block, CommitReceipt, Ledger, WorldState, replay
from .model import (
    CancelingTransaction, DependencyEdge, LogicalClock, MutableTransaction, Principal, Role,
    Validity, WallClock, canonical_json, derive_dependencies, validity_transition,
)
from .policy import CancelRule, ConditionSpec, MutationPolicy, PolicyBook, PolicyKind

__version__ = "0.1.0"
