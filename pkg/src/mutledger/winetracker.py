"""Wine supply-chain application in two variants.

Growers create ``Grapes`` batches and sell them to producers, producers turn
a batch into ``BulkWine`` and sell it to fillers, and fillers fill uniquely
numbered ``Bottle`` objects. The same contract runs either on the mutable
engine (``evochain``) or on :class:`VanillaLedger`, which stores objects
directly and makes every write final at once (``vanilla``).

Object keys are ``grapes:<batch_id>``, ``bulk:<bulk_id>`` and
``bottle:<bottle_id>``; bodies are the JSON objects below.
"""
from __future__ import annotations

import copy
import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional

from .contract import Contract, Reader
from .engine import Engine
from .errors import (
    AlreadyExists, AssetNotFound, ConfigError, DuplicateBottleId, InsufficientQuantity, NotFound,
    NotOwner, Unauthorized, UnsupportedOperation, ValidationFailed,
)
from .ledger import Block, BlockLog, CommitReceipt, Ledger
from .model import LogicalClock, Principal, Role, canonical_json, digest_hex
from .policy import PolicyBook

DEFAULT_DELAY = 300_000  # logical ms


class SupplyRole(str, Enum):
    GROWER = "GROWER"
    PRODUCER = "PRODUCER"
    FILLER = "FILLER"
    DISTRIBUTOR = "DISTRIBUTOR"


OP_ROLES = {
    "createGrapes": SupplyRole.GROWER,
    "sellGrapes": SupplyRole.GROWER,
    "transformGrapes": SupplyRole.PRODUCER,
    "sellBulk": SupplyRole.PRODUCER,
    "fillBottles": SupplyRole.FILLER,
}


def grapes_key(batch_id: str) -> str:
    return f"grapes:{batch_id}"


def bulk_key(bulk_id: str) -> str:
    return f"bulk:{bulk_id}"


def bottle_key(bottle_id: str) -> str:
    return f"bottle:{bottle_id}"


def _positive(value, what: str):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
        raise ValidationFailed(f"{what} must be a positive number, got {value!r}")
    return value


class WineTrackerContract(Contract):
    def __init__(self, org_roles: Mapping[str, SupplyRole]):
        super().__init__()
        self.org_roles = {org: SupplyRole(r) for org, r in org_roles.items()}
        self.register("createGrapes", self.create_grapes)
        self.register("sellGrapes", self.sell_grapes)
        self.register("transformGrapes", self.transform_grapes)
        self.register("sellBulk", self.sell_bulk)
        self.register("fillBottles", self.fill_bottles)

    def authorize(self, p: Principal, op_name: str) -> bool:
        if p.role is Role.OBSERVER:
            return False
        needed = OP_ROLES.get(op_name)
        return needed is not None and self.org_roles.get(p.org) is needed

    def _buyer(self, org: str, role: SupplyRole) -> str:
        if self.org_roles.get(org) is not role:
            raise ValidationFailed(f"{org} is not a {role.value.lower()}")
        return org

    @staticmethod
    def _owned(reader: Reader, key: str, p: Principal) -> dict:
        obj = reader.get(key)
        if obj is None:
            raise AssetNotFound(key)
        if obj["owner"] != p.org:
            raise NotOwner(f"{key} belongs to {obj['owner']}, not {p.org}")
        return obj

    def create_grapes(self, reader: Reader, p: Principal, args: Mapping) -> dict:
        batch_id = str(args["batch_id"])
        key = grapes_key(batch_id)
        if reader.get(key) is not None:
            raise AlreadyExists(key)
        return {key: {
            "batch_id": batch_id,
            "owner": p.org,
            "quantity": _positive(args["quantity"], "quantity"),
            "attributes": dict(args.get("attributes") or {}),
            "status": "harvested",
            "sales": 0,
            "parent": None,
        }}

    def sell_grapes(self, reader: Reader, p: Principal, args: Mapping) -> dict:
        """Sell a whole batch, or split ``quantity`` off into batch ``<id>.<n>``."""
        key = grapes_key(args["batch_id"])
        batch = self._owned(reader, key, p)
        if batch["status"] != "harvested":
            raise ValidationFailed(f"{key} is {batch['status']}")
        buyer = self._buyer(args["buyer_org"], SupplyRole.PRODUCER)
        qty = _positive(args.get("quantity", batch["quantity"]), "quantity")
        if qty > batch["quantity"]:
            raise InsufficientQuantity(f"{key} holds {batch['quantity']}, asked for {qty}")
        batch["sales"] += 1
        if qty == batch["quantity"]:
            batch["owner"] = buyer
            return {key: batch}
        child_id = f"{batch['batch_id']}.{batch['sales']}"
        child_key = grapes_key(child_id)
        if reader.get(child_key) is not None:
            raise AlreadyExists(child_key)
        batch["quantity"] -= qty
        child = dict(batch, batch_id=child_id, owner=buyer, quantity=qty, sales=0,
                     parent=batch["batch_id"])
        return {key: batch, child_key: child}

    def transform_grapes(self, reader: Reader, p: Principal, args: Mapping) -> dict:
        key = grapes_key(args["batch_id"])
        batch = self._owned(reader, key, p)
        if batch["status"] != "harvested":
            raise ValidationFailed(f"{key} is {batch['status']}")
        bulk_id = str(args["bulk_id"])
        bkey = bulk_key(bulk_id)
        if reader.get(bkey) is not None:
            raise AlreadyExists(bkey)
        batch["status"] = "transformed"
        return {key: batch, bkey: {
            "bulk_id": bulk_id,
            "source_batch": batch["batch_id"],
            "owner": p.org,
            "volume": _positive(args["volume"], "volume"),
            "bottled": 0,
        }}

    def sell_bulk(self, reader: Reader, p: Principal, args: Mapping) -> dict:
        key = bulk_key(args["bulk_id"])
        bulk = self._owned(reader, key, p)
        bulk["owner"] = self._buyer(args["buyer_org"], SupplyRole.FILLER)
        return {key: bulk}

    def fill_bottles(self, reader: Reader, p: Principal, args: Mapping) -> dict:
        key = bulk_key(args["bulk_id"])
        bulk = self._owned(reader, key, p)
        ids = [str(b) for b in args["bottle_ids"]]
        if not ids:
            raise ValidationFailed("no bottle ids given")
        if len(set(ids)) != len(ids):
            raise DuplicateBottleId("bottle ids repeat within the request")
        writes = {}
        for bottle_id in ids:
            bkey = bottle_key(bottle_id)
            if reader.get(bkey) is not None:
                raise DuplicateBottleId(bottle_id)
            writes[bkey] = {"bottle_id": bottle_id, "source_bulk": bulk["bulk_id"], "owner": p.org}
        bulk["bottled"] += len(ids)
        writes[key] = bulk
        return writes


@dataclass
class AppConfig:
    """Organizations, principals and mutation policies for one deployment.

    JSON form::

        {"app": "winetracker",
         "orgs": {"Org1": "GROWER", ...},
         "principals": {"grower": {"org": "Org1", "role": "USER"}, ...},
         "default_delay": 300000,
         "default_cancel_rule": {"admin_any": true, "self_cancel": true},
         "policies": {"<op_name>": {...}}}
    """

    org_roles: dict
    principals: dict
    policies: PolicyBook
    app: str = "winetracker"
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def default(cls, delay: int = DEFAULT_DELAY) -> "AppConfig":
        return cls.from_dict({
            "app": "winetracker",
            "orgs": {"Org1": "GROWER", "Org2": "PRODUCER", "Org3": "FILLER", "Org4": "DISTRIBUTOR"},
            "principals": {
                "grower": {"org": "Org1", "role": "USER"},
                "producer": {"org": "Org2", "role": "USER"},
                "filler": {"org": "Org3", "role": "USER"},
                "distributor": {"org": "Org4", "role": "USER"},
                "org1-admin": {"org": "Org1", "role": "ADMIN"},
                "org2-admin": {"org": "Org2", "role": "ADMIN"},
                "org3-admin": {"org": "Org3", "role": "ADMIN"},
                "org4-admin": {"org": "Org4", "role": "ADMIN"},
                "auditor": {"org": "Org4", "role": "OBSERVER"},
            },
            "default_delay": delay,
            "policies": {},
        })

    @classmethod
    def from_dict(cls, d: Mapping) -> "AppConfig":
        try:
            orgs = {org: SupplyRole(r) for org, r in d.get("orgs", {}).items()}
            principals = {name: Principal(name, p["org"], Role(p["role"]))
                          for name, p in d.get("principals", {}).items()}
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad application config: {exc}") from exc
        policies = PolicyBook.from_mapping(d.get("policies", {}), d.get("default_delay", DEFAULT_DELAY),
                                           d.get("default_cancel_rule"))
        return cls(orgs, principals, policies, d.get("app", "winetracker"), dict(d))

    @classmethod
    def load(cls, path) -> "AppConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "app": self.app,
            "orgs": {org: r.value for org, r in sorted(self.org_roles.items())},
            "principals": {n: {"org": p.org, "role": p.role.value} for n, p in sorted(self.principals.items())},
            "default_delay": self.policies.default.delay,
            "default_cancel_rule": self.policies.default.cancel_rule.to_dict(),
            "policies": self.policies.to_mapping(),
        }

    def principal(self, name: str) -> Principal:
        try:
            return self.principals[name]
        except KeyError:
            raise NotFound(f"unknown principal {name!r}") from None


class _DictReader:
    def __init__(self, objects: dict):
        self._objects = objects

    def get(self, key: str) -> Optional[dict]:
        obj = self._objects.get(key)
        return copy.deepcopy(obj) if obj is not None else None


class VanillaLedger:
    """Direct object storage: each write replaces the object and is final.

    Writes are still appended to a hash-chained block log (and to
    ``<path>/blocks.jsonl`` when a path is given).
    """

    def __init__(self, contract: Contract, path=None, digest: str = "sha256", fsync: bool = True):
        self.contract = contract
        self.objects: dict = {}
        self.log = BlockLog(digest)
        self.clock = LogicalClock()
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._lock = threading.RLock()
        if self.path is not None:
            if (self.path / "blocks.jsonl").exists():
                self._load()
            else:
                self.path.mkdir(parents=True, exist_ok=True)
                header = {"format": "mutledger-vanilla", "version": 1, "digest": digest}
                self._append([canonical_json(header), self.log.tip.to_line()], mode="w")

    def _load(self) -> None:
        with open(self.path / "blocks.jsonl") as f:
            lines = [line for line in f.read().splitlines() if line]
        header = json.loads(lines[0])
        if header.get("format") != "mutledger-vanilla":
            raise ConfigError(f"{self.path} is not a vanilla ledger")
        self.log = BlockLog(header["digest"])
        self.log.blocks[0] = Block.from_line(lines[1])
        for line in lines[2:]:
            block = Block.from_line(line)
            self.log.push(block)
            for record in block.tx_list:
                self._apply(record["writes"])
                self.clock.observe(record["submission_time"])

    def _apply(self, writes: Mapping) -> None:
        for key, body in writes.items():
            if body is None:
                self.objects.pop(key, None)
            else:
                self.objects[key] = body

    def _append(self, lines: list, mode: str = "a") -> None:
        with open(self.path / "blocks.jsonl", mode) as f:
            for line in lines:
                f.write(line + "\n")
            f.flush()
            if self.fsync:
                os.fsync(f.fileno())

    def issue(self, p: Principal, op_name: str, args: Mapping) -> CommitReceipt:
        with self._lock:
            if not self.contract.authorize(p, op_name):
                raise Unauthorized(f"{p.name} may not issue {op_name}")
            writes = self.contract.handler(op_name)(_DictReader(self.objects), p, args)
            if not writes:
                raise ValidationFailed(f"{op_name} wrote nothing")
            writes = json.loads(canonical_json(writes))
            t = self.clock.tick()
            record = {"kind": "WRITE", "op_name": op_name, "issuer": p.to_dict(),
                      "writes": writes, "submission_time": t}
            record["id"] = digest_hex(canonical_json(record))
            block = self.log.next_block([record])
            if self.path is not None:
                self._append([block.to_line()])
            self.log.push(block)
            self._apply(writes)
            return CommitReceipt(record["id"], block.height, t)

    def get_asset(self, key: str) -> Optional[dict]:
        with self._lock:
            return _DictReader(self.objects).get(key)

    def keys(self) -> list:
        return sorted(self.objects)

    def verify_chain(self) -> bool:
        return self.log.verify()


class WineTracker:
    """Application facade; ``variant`` is ``"evochain"`` or ``"vanilla"``."""

    def __init__(self, variant: str = "evochain", config: Optional[AppConfig] = None,
                 ledger: Optional[Ledger] = None, path=None, fsync: bool = True):
        self.variant = variant
        self.config = config if config is not None else AppConfig.default()
        self.contract = WineTrackerContract(self.config.org_roles)
        if variant == "evochain":
            if ledger is None:
                ledger = Ledger(path, fsync=fsync)
            self.engine = Engine(self.contract, self.config.policies, ledger)
            self.vanilla = None
        elif variant == "vanilla":
            self.engine = None
            self.vanilla = VanillaLedger(self.contract, path, fsync=fsync)
        else:
            raise ValueError(f"unknown variant {variant!r}")

    def principal(self, name: str) -> Principal:
        return self.config.principal(name)

    def submit(self, p: Principal, op_name: str, args: Mapping) -> CommitReceipt:
        if self.engine is not None:
            return self.engine.issue_transaction(p, op_name, args)
        return self.vanilla.issue(p, op_name, args)

    def create_grapes(self, p: Principal, batch_id: str, quantity, attributes: Optional[Mapping] = None):
        return self.submit(p, "createGrapes",
                           {"batch_id": batch_id, "quantity": quantity, "attributes": dict(attributes or {})})

    def sell_grapes(self, p: Principal, batch_id: str, buyer_org: str, quantity=None):
        args = {"batch_id": batch_id, "buyer_org": buyer_org}
        if quantity is not None:
            args["quantity"] = quantity
        return self.submit(p, "sellGrapes", args)

    def transform_grapes(self, p: Principal, batch_id: str, bulk_id: str, volume):
        return self.submit(p, "transformGrapes", {"batch_id": batch_id, "bulk_id": bulk_id, "volume": volume})

    def sell_bulk(self, p: Principal, bulk_id: str, buyer_org: str):
        return self.submit(p, "sellBulk", {"bulk_id": bulk_id, "buyer_org": buyer_org})

    def fill_bottles(self, p: Principal, bulk_id: str, bottle_ids):
        return self.submit(p, "fillBottles", {"bulk_id": bulk_id, "bottle_ids": list(bottle_ids)})

    def cancel(self, p: Principal, tx_id: str):
        if self.engine is None:
            raise UnsupportedOperation("the vanilla variant cannot cancel transactions")
        return self.engine.cancel_transaction(p, tx_id)

    def get_asset(self, key: str) -> Optional[dict]:
        if self.engine is not None:
            view = self.engine.get_asset(key)
            return view.body if view is not None else None
        return self.vanilla.get_asset(key)

    def grapes(self, batch_id: str) -> Optional[dict]:
        return self.get_asset(grapes_key(batch_id))

    def bulk(self, bulk_id: str) -> Optional[dict]:
        return self.get_asset(bulk_key(bulk_id))

    def bottle(self, bottle_id: str) -> Optional[dict]:
        return self.get_asset(bottle_key(bottle_id))

    def keys(self) -> list:
        if self.engine is not None:
            return self.engine.state.keys()
        return self.vanilla.keys()

    def views(self) -> dict:
        """Every live object, keyed by object key."""
        out = {}
        for key in self.keys():
            body = self.get_asset(key)
            if body is not None:
                out[key] = body
        return out

    def verify_chain(self) -> bool:
        if self.engine is not None:
            return self.engine.ledger.verify_chain()
        return self.vanilla.verify_chain()
