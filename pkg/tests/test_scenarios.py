from mutledger.scenarios import SCENARIO_MAP, recovery_walkthrough, threat_scenarios


def test_recovery_walkthrough_steps():
    steps = recovery_walkthrough()
    assert [s.number for s in steps] == [1, 2, 3, 4, 5]
    assert [s.observed for s in steps] == [
        {"id": 1, "value": "a"}, {"id": 1, "value": "a"}, None,
        {"id": 1, "value": "b"}, {"id": 1, "value": "b"},
    ]
    assert [s.actor for s in steps] == ["client3", "client2", "client1", "client1", "client2"]


def test_threat_outcomes():
    results = {r.name: r for r in threat_scenarios()}
    assert set(results) == {"A1", "A2", "A3", "A3-late", "A4"}
    for name in ("A1", "A2", "A3", "A4"):
        assert results[name].restored, results[name]
    late = results["A3-late"]
    assert not late.restored and late.rejected == "AlreadyConsolidated"
    assert results["A2"].detail["cascade"] == 2
    assert results["A3"].detail["cancels"] == 2


def test_every_usage_scenario_is_covered_by_a_threat():
    names = {r.name for r in threat_scenarios()}
    assert set(SCENARIO_MAP) == {"S1 account theft", "S2 user fault", "S3 incorrect authorization",
                                 "S4 contract exploitation"}
    for attacks in SCENARIO_MAP.values():
        assert attacks and set(attacks) <= names
