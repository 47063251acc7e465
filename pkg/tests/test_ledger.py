import json

import pytest

from mutledger import Ledger, LogicalClock, MutableTransaction, Principal, Role, Validity, WallClock, replay
from mutledger.errors import ConfigError, DuplicateTxId, IllegalTransition, NotFound
from mutledger.ledger import BlockLog

from oracles import fold

BOB = Principal("bob", "Org1", Role.USER)


def commit(ledger, payload, delay=5):
    tx = MutableTransaction.new(ledger.clock.tick(), BOB, "put", payload, delay=delay)
    return tx, ledger.commit(tx)


def test_first_commit_lands_in_block_one_at_time_one():
    ledger = Ledger()
    tx, receipt = commit(ledger, {"k": {"v": 1}})
    assert (receipt.block_height, receipt.submission_time) == (1, 1)
    assert receipt.tx_id == tx.id
    assert ledger.height == 1 and ledger.verify_chain()


def test_genesis_has_zero_prev_hash():
    log = BlockLog()
    assert log.tip.height == 0 and set(log.tip.prev_hash) == {"0"} and len(log.tip.prev_hash) == 64


def test_duplicate_and_out_of_order_commits_rejected():
    ledger = Ledger()
    tx, _ = commit(ledger, {"k": {"v": 1}})
    with pytest.raises(DuplicateTxId):
        ledger.commit(tx)
    stale = MutableTransaction.new(tx.submission_time, BOB, "put", {"k": {"v": 9}})
    with pytest.raises(ValueError):
        ledger.commit(stale)
    assert ledger.height == 1


def test_history_lists_writers_in_commit_order():
    ledger = Ledger()
    a, _ = commit(ledger, {"k": {"v": 1}})
    commit(ledger, {"j": {"v": 1}})
    c, _ = commit(ledger, {"k": None, "j": {"v": 2}})
    assert [t.id for t in ledger.get_history("k")] == [a.id, c.id]
    assert ledger.get_history("missing") == []
    with pytest.raises(NotFound):
        ledger.get_record("nope")


def test_validity_updates_go_to_the_journal_not_the_blocks():
    ledger = Ledger()
    tx, _ = commit(ledger, {"k": {"v": 1}})
    blocks_before = list(ledger.block_lines)
    ledger.update_validity(tx.id, Validity.CANCELED, 3)
    assert ledger.block_lines == blocks_before
    assert json.loads(ledger.journal_lines[-1]) == {"tx_id": tx.id, "new_validity": "CANCELED", "at": 3}
    assert ledger.get_record(tx.id).validity is Validity.CANCELED
    with pytest.raises(IllegalTransition):
        ledger.update_validity(tx.id, Validity.CONSOLIDATED, 4)
    assert len(ledger.journal_lines) == 1


def test_replay_reproduces_world_state_exactly():
    ledger = Ledger()
    a, _ = commit(ledger, {"k": {"v": 1}})
    b, _ = commit(ledger, {"k": {"v": 2}, "j": {"v": 0}})
    ledger.update_delay(b.id, 40, 3)
    ledger.update_validity(a.id, Validity.CONSOLIDATED, 6)
    rebuilt = replay(ledger.block_lines[1:], ledger.journal_lines)
    assert rebuilt.snapshot() == ledger.state.snapshot()
    folded = fold(ledger.block_lines, ledger.journal_lines)
    assert folded[b.id]["delay"] == 40 and folded[a.id]["validity"] == "CONSOLIDATED"


def test_reopening_a_directory_replays_it(tmp_path):
    ledger = Ledger(tmp_path / "l", fsync=False)
    a, _ = commit(ledger, {"k": {"v": 1}})
    ledger.update_validity(a.id, Validity.CANCELED, 2)
    b, _ = commit(ledger, {"k": {"v": 2}})
    again = Ledger(tmp_path / "l")
    assert again.state.snapshot() == ledger.state.snapshot()
    assert again.block_lines == ledger.block_lines
    assert again.clock.tick() > b.submission_time
    assert again.verify_chain()


def test_header_records_clock_kind(tmp_path):
    Ledger(tmp_path / "w", clock=WallClock(1_000))
    reopened = Ledger(tmp_path / "w")
    assert isinstance(reopened.clock, WallClock) and reopened.clock.epoch_ms == 1_000
    Ledger(tmp_path / "g")
    assert type(Ledger(tmp_path / "g").clock) is LogicalClock


def test_foreign_file_rejected(tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "x" / "blocks.jsonl").write_text('{"format":"other"}\n')
    with pytest.raises(ConfigError):
        Ledger(tmp_path / "x")


def test_tamper_at_height_three_is_located(tmp_path):
    ledger = Ledger(tmp_path / "l", fsync=False)
    for i in range(5):
        commit(ledger, {"k": {"v": i}})
    path = tmp_path / "l" / "blocks.jsonl"
    lines = path.read_text().splitlines()
    # line 0 is the header, so block h sits on line h + 1
    target = lines[4]
    pos = target.index('"v":2') + 4
    lines[4] = target[:pos] + "7" + target[pos + 1:]
    path.write_text("\n".join(lines) + "\n")
    tampered = Ledger(tmp_path / "l")
    assert not tampered.verify_chain()
    assert tampered.first_corrupt_height() == 3


def test_relinked_block_still_detected():
    ledger = Ledger()
    for i in range(4):
        commit(ledger, {"k": {"v": i}})
    log = ledger.log
    forged = log.blocks[2].build(2, log.blocks[1].block_hash, [{"forged": True}], "sha256")
    log.blocks[2] = forged
    assert ledger.first_corrupt_height() == 3


def test_alternate_digest():
    ledger = Ledger(digest="sha512")
    commit(ledger, {"k": {"v": 1}})
    assert len(ledger.log.tip.block_hash) == 128 and ledger.verify_chain()
