"""Scripted end-to-end scenarios: the three-client recovery walkthrough and
the application-level attack cases (mistakes, tricked users, stolen
credentials, contract exploits)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .contract import AssetContract, asset_key
from .engine import Engine
from .errors import AlreadyConsolidated, ScenarioAssertionFailed, Unauthorized
from .model import Principal, Role, Validity
from .policy import PolicyBook
from .winetracker import AppConfig, WineTracker, WineTrackerContract, grapes_key


@dataclass
class Step:
    number: int
    actor: str
    action: str
    observed: object


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise ScenarioAssertionFailed(message)


def recovery_walkthrough(delay: int = 1_000) -> list:
    """Create, query, cancel, re-create and query asset 1 with three clients.

    Client 1 may issue and cancel, client 2 only observes, client 3 may issue.
    Returns the five steps with what each observed; raises
    :class:`ScenarioAssertionFailed` on the first divergence.
    """
    engine = Engine(AssetContract(), PolicyBook(default_delay=delay))
    client1 = Principal("client1", "org1", Role.ADMIN)
    client2 = Principal("client2", "org1", Role.OBSERVER)
    client3 = Principal("client3", "org1", Role.USER)
    key = asset_key(1)
    steps = []

    first = engine.issue_transaction(client3, "create", {"id": 1, "value": "a"})
    created = engine.get_asset(key)
    _expect(created is not None and created.body["value"] == "a", f"step 1 returned {created}")
    steps.append(Step(1, "client3", "create id=1 value=a", created.body))

    seen = engine.get_asset(key)
    _expect(seen is not None and seen.body == {"id": 1, "value": "a"}, f"step 2 query returned {seen}")
    steps.append(Step(2, "client2", "query id=1", seen.body))

    receipt = engine.cancel_transaction(client1, first.tx_id)
    _expect(receipt.cascade_set == (first.tx_id,), f"cancel swept {receipt.cascade_set}")
    _expect(engine.ledger.get_record(first.tx_id).validity is Validity.CANCELED, "create not canceled")
    after_cancel = engine.get_asset(key)
    _expect(after_cancel is None, f"step 3 query returned {after_cancel}")
    steps.append(Step(3, "client1", "cancel client3's create", None))

    engine.issue_transaction(client1, "create", {"id": 1, "value": "b"})
    steps.append(Step(4, "client1", "create id=1 value=b", engine.get_asset(key).body))

    history = engine.get_transactions(key)
    final = engine.get_asset(key)
    _expect(final is not None and final.body == {"id": 1, "value": "b"}, f"step 5 query returned {final}")
    _expect([t.validity for t in history] == [Validity.CANCELED, Validity.PENDING],
            f"history validity {[t.validity for t in history]}")
    steps.append(Step(5, "client2", "query transactions of id=1", final.body))

    _expect(engine.ledger.verify_chain(), "chain does not verify")
    return steps


@dataclass
class ThreatResult:
    name: str
    description: str
    restored: bool
    rejected: Optional[str] = None
    detail: dict = field(default_factory=dict)


class _ExploitableContract(WineTrackerContract):
    """WineTracker plus a buggy ``adjustQuantity`` that skips the ownership
    check, so any producer can rewrite anyone's batch."""

    def __init__(self, org_roles):
        super().__init__(org_roles)
        self.register("adjustQuantity", self.adjust_quantity)

    def authorize(self, p, op_name):
        if op_name == "adjustQuantity":
            return p.role is not Role.OBSERVER
        return super().authorize(p, op_name)

    @staticmethod
    def adjust_quantity(reader, p, args):
        key = grapes_key(args["batch_id"])
        batch = reader.get(key)
        batch["quantity"] = args["quantity"]
        batch["owner"] = p.org
        return {key: batch}


def _tracker(delay: int, exploitable: bool = False) -> WineTracker:
    config = AppConfig.default(delay)
    config.principals["grower2"] = Principal("grower2", "Org1", Role.USER)
    app = WineTracker("evochain", config)
    if exploitable:
        app.contract = _ExploitableContract(config.org_roles)
        app.engine.contract = app.contract
    return app


def _seed_chain(app: WineTracker) -> None:
    grower = app.principal("grower")
    app.create_grapes(grower, "g1", 100, {"region": "Douro"})
    app.create_grapes(grower, "g2", 50, {"region": "Dao"})


def threat_scenarios(delay: int = 1_000) -> list:
    """Run every attack case and check the outcome each is expected to have."""
    results = [
        _mistaken_transaction(delay),
        _tricked_user(delay),
        _stolen_credentials(delay),
        _stolen_credentials_too_late(delay),
        _contract_exploit(delay),
    ]
    for r in results:
        expected_restore = r.name != "A3-late"
        _expect(r.restored == expected_restore, f"{r.name}: restored={r.restored} ({r.detail})")
    return results


def _mistaken_transaction(delay: int) -> ThreatResult:
    app = _tracker(delay)
    _seed_chain(app)
    before = app.views()
    grower = app.principal("grower")
    # Meant to sell 8 kg, typed 80.
    wrong = app.sell_grapes(grower, "g1", "Org2", 80)
    _expect(app.grapes("g1")["quantity"] == 20, "mistaken sale not visible")
    app.cancel(grower, wrong.tx_id)
    return ThreatResult("A1", "user cancels a mistaken transaction of their own",
                        app.views() == before, detail={"views": len(before)})


def _tricked_user(delay: int) -> ThreatResult:
    app = _tracker(delay)
    _seed_chain(app)
    before = app.views()
    grower, admin = app.principal("grower"), app.principal("org1-admin")
    unwanted = app.sell_grapes(grower, "g2", "Org2")
    app.transform_grapes(app.principal("producer"), "g2", "b-scam", 35)
    receipt = app.cancel(admin, unwanted.tx_id)
    return ThreatResult("A2", "administrator cancels a transaction a user was tricked into",
                        app.views() == before, detail={"cascade": len(receipt.cascade_set)})


def _stolen_credentials(delay: int) -> ThreatResult:
    app = _tracker(delay)
    _seed_chain(app)
    before = app.views()
    thief, admin = app.principal("grower2"), app.principal("org1-admin")
    app.sell_grapes(thief, "g1", "Org2", 60)
    app.create_grapes(thief, "fake-1", 999, {"region": "counterfeit"})
    app.engine.revoke("grower2")
    try:
        app.create_grapes(thief, "fake-2", 1)
        return ThreatResult("A3", "revoked principal still issued", False)
    except Unauthorized:
        pass
    receipts = app.engine.cancel_issued_by(admin, "grower2")
    return ThreatResult("A3", "credentials revoked, administrator cancels everything the thief issued",
                        app.views() == before, detail={"cancels": len(receipts)})


def _stolen_credentials_too_late(delay: int) -> ThreatResult:
    app = _tracker(delay)
    _seed_chain(app)
    before = app.views()
    thief, admin = app.principal("grower2"), app.principal("org1-admin")
    stolen = app.sell_grapes(thief, "g1", "Org2")
    app.engine.clock.advance(delay + 1)
    app.engine.revoke("grower2")
    try:
        app.cancel(admin, stolen.tx_id)
    except AlreadyConsolidated as exc:
        return ThreatResult("A3-late", "attack consolidated before anyone reacted; cancel is refused",
                            app.views() == before, rejected=type(exc).__name__)
    return ThreatResult("A3-late", "consolidated attack was canceled", True)


def _contract_exploit(delay: int) -> ThreatResult:
    app = _tracker(delay, exploitable=True)
    _seed_chain(app)
    before = app.views()
    attacker = app.principal("producer")
    admin = app.principal("org2-admin")
    exploit = app.submit(attacker, "adjustQuantity", {"batch_id": "g1", "quantity": 10_000})
    _expect(app.grapes("g1")["owner"] == "Org2", "exploit had no effect")
    app.cancel(admin, exploit.tx_id)
    return ThreatResult("A4", "administrator cancels a transaction that abused a contract bug",
                        app.views() == before)


SCENARIO_MAP: Mapping[str, tuple] = {
    "S1 account theft": ("A2", "A3", "A3-late"),
    "S2 user fault": ("A1",),
    "S3 incorrect authorization": ("A4",),
    "S4 contract exploitation": ("A4",),
}
