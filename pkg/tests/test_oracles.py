"""The oracles must catch deliberately planted faults, or their agreement with
the engine proves nothing."""
import dataclasses

import pytest

from mutledger import Engine, Validity, engine as engine_mod

from oracles import InvariantChecker, fold, random_history, view_bytes, view_oracle


def seeds_failing(check, n=150):
    return [s for s in range(n) if check(s)]


def test_view_oracle_catches_a_view_that_ignores_cancellation(monkeypatch):
    real = engine_mod.generate_view

    def careless(transactions, key, as_of=0):
        live = [dataclasses.replace(t, validity=Validity.PENDING, permanent_state_time=None)
                if t.validity is Validity.CANCELED else t for t in transactions]
        return real(live, key, as_of)

    monkeypatch.setattr(engine_mod, "generate_view", careless)

    def mismatch(seed):
        hist = random_history(seed)
        records = fold(hist.ledger.block_lines, hist.ledger.journal_lines)
        return any(view_bytes(hist.engine.get_asset(k)) != view_oracle(records, k)
                   for k in hist.engine.state.keys())

    assert seeds_failing(mismatch)


def test_checker_catches_consolidation_without_dependencies(monkeypatch):
    def lone(self, rec, at):
        self.ledger.update_validity(rec.id, Validity.CONSOLIDATED, int(at))

    monkeypatch.setattr(Engine, "_consolidate", lone)

    def broken(seed):
        checker = InvariantChecker()
        random_history(seed, checker)
        return any(f[0] == "b" for f in checker.failures)

    assert seeds_failing(broken)


def test_checker_catches_state_changes_missing_from_the_journal(monkeypatch):
    from mutledger import ledger as ledger_mod

    def silent(self, tx_id, new_validity, at):
        rec = self.get_record(tx_id)
        new = ledger_mod.validity_transition(rec, new_validity, at)
        self.state.replace(new, at)
        return new

    monkeypatch.setattr(ledger_mod.Ledger, "update_validity", silent)

    def broken(seed):
        checker = InvariantChecker()
        random_history(seed, checker)
        return any(f[0].startswith("d") for f in checker.failures)

    assert seeds_failing(broken)


def test_checker_catches_a_terminal_state_moving():
    checker = InvariantChecker()

    def flip(hist):
        checker(hist)
        for rec in hist.ledger.state.records():
            if rec.kind == "MT" and rec.validity is Validity.CANCELED:
                hist.ledger.state.replace(dataclasses.replace(rec, validity=Validity.CONSOLIDATED), 0)
                return

    for seed in range(100):
        random_history(seed, flip)
        if any(f[0] == "a" for f in checker.failures):
            return
    pytest.fail("terminal-state change went unnoticed")


def test_checker_catches_a_broken_chain():
    checker = InvariantChecker()

    def tamper(hist):
        log = hist.ledger.log
        if log.height >= 2:
            log.blocks[1] = dataclasses.replace(log.blocks[1], body=log.blocks[1].body.replace("obj", "OBJ"))
        checker(hist)

    random_history(5, tamper)
    assert any(f[0] == "c" for f in checker.failures)
