import json

import pytest

from mutledger import Validity
from mutledger.errors import (
    AlreadyExists, AssetNotFound, ConfigError, DuplicateBottleId, InsufficientQuantity, NotFound, NotOwner,
    Unauthorized, UnsupportedOperation, ValidationFailed,
)
from mutledger.winetracker import AppConfig, WineTracker, bottle_key, bulk_key, grapes_key

from oracles import random_wine_workload, run_wine_workload


@pytest.fixture(params=["evochain", "vanilla"])
def app(request):
    return WineTracker(request.param, AppConfig.default(1_000))


def actors(app):
    return app.principal("grower"), app.principal("producer"), app.principal("filler")


def test_full_supply_chain_provenance(app):
    grower, producer, filler = actors(app)
    app.create_grapes(grower, "g1", 100, {"region": "Douro"})
    app.sell_grapes(grower, "g1", "Org2")
    app.transform_grapes(producer, "g1", "w1", 75)
    app.sell_bulk(producer, "w1", "Org3")
    app.fill_bottles(filler, "w1", ["b1", "b2"])

    bottle = app.bottle("b1")
    bulk = app.bulk(bottle["source_bulk"])
    batch = app.grapes(bulk["source_batch"])
    assert bottle["owner"] == "Org3"
    assert bulk == {"bulk_id": "w1", "source_batch": "g1", "owner": "Org3", "volume": 75, "bottled": 2}
    assert batch["status"] == "transformed" and batch["attributes"] == {"region": "Douro"}
    assert sorted(app.keys()) == [bottle_key("b1"), bottle_key("b2"), bulk_key("w1"), grapes_key("g1")]
    assert app.verify_chain()


def test_partial_sale_splits_the_batch(app):
    grower, producer, _ = actors(app)
    app.create_grapes(grower, "g1", 100)
    app.sell_grapes(grower, "g1", "Org2", 30)
    app.sell_grapes(grower, "g1", "Org2", 20)
    assert app.grapes("g1")["quantity"] == 50 and app.grapes("g1")["owner"] == "Org1"
    assert app.grapes("g1.1") == {"batch_id": "g1.1", "owner": "Org2", "quantity": 30, "attributes": {},
                                  "status": "harvested", "sales": 0, "parent": "g1"}
    assert app.grapes("g1.2")["quantity"] == 20
    with pytest.raises(InsufficientQuantity):
        app.sell_grapes(grower, "g1", "Org2", 51)
    app.transform_grapes(producer, "g1.1", "w1", 20)


@pytest.mark.parametrize("step, error", [
    ("create-dup", AlreadyExists),
    ("sell-unknown", AssetNotFound),
    ("sell-wrong-role", Unauthorized),
    ("sell-wrong-buyer", ValidationFailed),
    ("sell-zero", ValidationFailed),
    ("transform-not-owner", NotOwner),
    ("transform-twice", ValidationFailed),
    ("bulk-dup", AlreadyExists),
    ("fill-dup", DuplicateBottleId),
    ("fill-repeat", DuplicateBottleId),
    ("observer", Unauthorized),
])
def test_contract_rejections(app, step, error):
    grower, producer, filler = actors(app)
    app.create_grapes(grower, "g1", 10)
    app.create_grapes(grower, "g2", 10)
    app.sell_grapes(grower, "g2", "Org2")
    app.transform_grapes(producer, "g2", "w2", 5)
    app.sell_bulk(producer, "w2", "Org3")
    app.fill_bottles(filler, "w2", ["b1"])
    height_before = len(app.keys())
    calls = {
        "create-dup": lambda: app.create_grapes(grower, "g1", 1),
        "sell-unknown": lambda: app.sell_grapes(grower, "zz", "Org2"),
        "sell-wrong-role": lambda: app.sell_grapes(producer, "g1", "Org2"),
        "sell-wrong-buyer": lambda: app.sell_grapes(grower, "g1", "Org3"),
        "sell-zero": lambda: app.sell_grapes(grower, "g1", "Org2", 0),
        "transform-not-owner": lambda: app.transform_grapes(producer, "g1", "w9", 1),
        "transform-twice": lambda: app.transform_grapes(producer, "g2", "w9", 1),
        "bulk-dup": lambda: (app.sell_grapes(grower, "g1", "Org2"),
                             app.transform_grapes(producer, "g1", "w2", 1)),
        "fill-dup": lambda: app.fill_bottles(filler, "w2", ["b1"]),
        "fill-repeat": lambda: app.fill_bottles(filler, "w2", ["b7", "b7"]),
        "observer": lambda: app.create_grapes(app.principal("auditor"), "g9", 1),
    }
    with pytest.raises(error):
        calls[step]()
    assert len(app.keys()) == height_before


def test_cancel_restores_previous_owner():
    app = WineTracker("evochain", AppConfig.default(1_000))
    grower, producer, _ = actors(app)
    app.create_grapes(grower, "g1", 10)
    sale = app.sell_grapes(grower, "g1", "Org2")
    app.transform_grapes(producer, "g1", "w1", 5)
    receipt = app.cancel(app.principal("org1-admin"), sale.tx_id)
    assert len(receipt.cascade_set) == 2
    assert app.grapes("g1")["owner"] == "Org1" and app.bulk("w1") is None


def test_vanilla_cannot_cancel():
    app = WineTracker("vanilla")
    r = app.create_grapes(app.principal("grower"), "g1", 1)
    with pytest.raises(UnsupportedOperation):
        app.cancel(app.principal("org1-admin"), r.tx_id)


def test_unknown_variant_and_principal():
    with pytest.raises(ValueError):
        WineTracker("hybrid")
    with pytest.raises(NotFound):
        WineTracker().principal("mallory")


def test_variants_agree_when_delays_are_zero():
    seen = set()
    for seed in range(20):
        requests = random_wine_workload(seed)
        apps = [WineTracker(v, AppConfig.default(0)) for v in ("vanilla", "evochain")]
        outcomes = [run_wine_workload(a, requests) for a in apps]
        assert outcomes[0] == outcomes[1], seed
        assert apps[0].views() == apps[1].views(), seed
        seen.update(outcomes[0])
    assert "ok" in seen and len(seen) >= 5


def test_ledgers_persist_and_reload(tmp_path):
    for variant in ("evochain", "vanilla"):
        path = tmp_path / variant
        first = WineTracker(variant, AppConfig.default(0), path=path, fsync=False)
        run_wine_workload(first, random_wine_workload(3))
        again = WineTracker(variant, AppConfig.default(0), path=path)
        assert again.views() == first.views() and again.verify_chain()


def test_config_round_trip_and_errors(tmp_path):
    cfg = AppConfig.default(42)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    loaded = AppConfig.load(path)
    assert loaded.to_dict() == cfg.to_dict()
    assert loaded.policies.for_op("createGrapes").delay == 42
    with pytest.raises(ConfigError):
        AppConfig.from_dict({"orgs": {"Org1": "BREWER"}})
    with pytest.raises(ConfigError):
        AppConfig.from_dict({"principals": {"x": {"org": "Org1"}}})


def test_condition_policy_from_config():
    raw = AppConfig.default(1_000).to_dict()
    raw["policies"] = {"sellBulk": {"kind": "CONDITION", "condition": {
        "trigger_op": "fillBottles", "trigger_field": "bulk_id", "pending_field": "bulk_id"}}}
    app = WineTracker("evochain", AppConfig.from_dict(raw))
    grower, producer, filler = actors(app)
    app.create_grapes(grower, "g1", 10)
    app.sell_grapes(grower, "g1", "Org2")
    app.transform_grapes(producer, "g1", "w1", 5)
    sale = app.sell_bulk(producer, "w1", "Org3")
    assert app.engine.get_transaction(sale.tx_id).validity is Validity.PENDING
    fill = app.fill_bottles(filler, "w1", ["b1"])
    assert app.engine.ledger.get_record(sale.tx_id).validity is Validity.CONSOLIDATED
    # the sale could not consolidate before the grapes and transform it rests on
    for rec in app.engine.get_transactions(grapes_key("g1")):
        assert rec.validity is Validity.CONSOLIDATED
    assert app.engine.ledger.get_record(fill.tx_id).validity is Validity.PENDING
