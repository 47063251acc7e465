import hashlib
import json

import pytest

from mutledger import (
    CancelingTransaction, LogicalClock, MutableTransaction, Principal, Role, Validity, WallClock,
    canonical_json, validity_transition,
)
from mutledger.errors import IllegalTransition
from mutledger.model import alive_at, prior_writer, record_from_dict

ALICE = Principal("alice", "Org1", Role.USER)


def mt(t=1, payload=None, delay=10, **kw):
    return MutableTransaction.new(t, ALICE, "put", payload or {"k": {"v": 1}}, delay=delay, **kw)


def test_canonical_json_is_sorted_and_compact():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})


def test_mt_id_is_sha256_of_identity_fields():
    tx = mt(7, {"k": {"v": 2}})
    expected = hashlib.sha256(canonical_json({
        "kind": "MT", "op_name": "put", "payload": {"k": {"v": 2}},
        "issuer": ALICE.to_dict(), "submission_time": 7,
    }).encode()).hexdigest()
    assert tx.id == expected
    assert mt(7, {"k": {"v": 2}}).id == tx.id
    assert mt(8, {"k": {"v": 2}}).id != tx.id


def test_new_mt_is_pending_without_permanent_time():
    tx = mt()
    assert tx.validity is Validity.PENDING
    assert tx.permanent_state_time is None
    assert tx.expiry == 11


def test_invariants_checked_on_construction():
    tx = mt()
    with pytest.raises(ValueError):
        MutableTransaction(tx.id, 1, ALICE, "put", tx.payload, (), -1, Validity.PENDING, None)
    with pytest.raises(ValueError):
        MutableTransaction(tx.id, 5, ALICE, "put", tx.payload, (), 0, Validity.CONSOLIDATED, 4)
    with pytest.raises(ValueError):
        MutableTransaction(tx.id, 5, ALICE, "put", tx.payload, (), 0, Validity.CANCELED, None)


@pytest.mark.parametrize("target", [Validity.CANCELED, Validity.CONSOLIDATED])
def test_pending_moves_once_to_a_terminal_state(target):
    done = validity_transition(mt(3), target, 9)
    assert done.validity is target and done.permanent_state_time == 9
    for again in Validity:
        with pytest.raises(IllegalTransition):
            validity_transition(done, again, 10)


def test_transition_rejects_pending_target_and_time_before_submission():
    with pytest.raises(IllegalTransition):
        validity_transition(mt(3), Validity.PENDING, 5)
    with pytest.raises(IllegalTransition):
        validity_transition(mt(3), Validity.CANCELED, 2)


def test_round_trip_through_dict():
    tx = validity_transition(mt(4, reads=[("k", 2)]), Validity.CONSOLIDATED, 14)
    assert record_from_dict(json.loads(canonical_json(tx.to_dict()))) == tx
    ct = CancelingTransaction.new(5, ALICE, tx.id, [tx.id])
    assert record_from_dict(ct.to_dict()) == ct


def test_prior_writer_skips_transactions_canceled_earlier():
    a = mt(1)
    b = validity_transition(mt(2, {"k": {"v": 2}}), Validity.CANCELED, 3)
    # b was canceled at 3: visible to something submitted at 3, not at 4.
    assert alive_at(b, 3) and not alive_at(b, 4)
    assert prior_writer([a, b], 3) is b
    assert prior_writer([a, b], 4) is a
    assert prior_writer([a, b], 1) is None


def test_logical_clock_ticks_strictly_and_never_rewinds():
    clock = LogicalClock()
    assert [clock.tick(), clock.tick()] == [1, 2]
    clock.advance(10)
    assert clock.tick() == 13
    with pytest.raises(ValueError):
        clock.advance_to(5)
    with pytest.raises(ValueError):
        clock.advance(-1)
    clock.observe(40)
    assert clock.tick() == 41


def test_wall_clock_tracks_elapsed_milliseconds():
    clock = WallClock()
    first = clock.tick()
    assert clock.tick() > first
    assert 0 <= clock.now < 60_000
