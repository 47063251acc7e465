import csv
import io
import json

import pytest

from mutledger.bench import (
    CSV_COLUMNS, REPORT_SCHEMA, MetricsReport, WorkloadConfig, ramp_schedule, report_emit, report_to_csv,
    run_workload,
)

FAST = dict(send_rate=4000, send_rate_max=4000, on_disk=False)


def small(scenario, seed=1, scale=1000, **kw):
    return WorkloadConfig.for_scenario(scenario, scale=scale, seed=seed, **{**FAST, **kw})


def test_config_validation():
    with pytest.raises(ValueError):
        WorkloadConfig(scenario="TC9")
    with pytest.raises(ValueError):
        WorkloadConfig(send_rate=0)
    with pytest.raises(ValueError):
        WorkloadConfig.for_scenario("TC1", scale=0)
    assert WorkloadConfig.for_scenario("TC1").tx_per_round == 100
    assert WorkloadConfig.for_scenario("TC3").tx_per_round == 50
    assert WorkloadConfig.for_scenario("TC1", scale=1).tx_per_round == 10_000


def test_ramp_schedule_spans_the_configured_rates():
    flat = ramp_schedule(5, 10.0, None)
    assert flat == pytest.approx([0, 0.1, 0.2, 0.3, 0.4])
    ramp = ramp_schedule(101, 100.0, 300.0)
    gaps = [b - a for a, b in zip(ramp, ramp[1:])]
    assert gaps[0] == pytest.approx(1 / 100) and gaps[-1] < gaps[0]
    assert ramp_schedule(1, 5.0, 9.0) == [0.0]


def test_tc1_accepts_everything_on_both_variants():
    for variant in ("vanilla", "evochain"):
        report = run_workload(small("TC1"), variant)
        assert [r.op for r in report.rounds] == ["createGrapes", "sellGrapes", "transformGrapes", "sellBulk"]
        for r in report.rounds:
            assert (r.tx, r.succeeded, r.failed) == (10, 10, 0)
            assert r.avg_latency_ms >= 0 and r.throughput <= r.send_rate


def test_tc2_cancels_sweep_three_each_repetition():
    report = run_workload(small("TC2"), "evochain")
    cancels = [r for r in report.rounds if r.op == "cancelCreateGrapes"]
    assert len(cancels) == 5 and all(r.succeeded == r.tx for r in cancels)
    assert len(report.rounds) == 20


def test_tc2_refuses_the_vanilla_variant():
    with pytest.raises(ValueError):
        run_workload(small("TC2"), "vanilla")


def test_tc3_has_both_query_phases():
    report = run_workload(small("TC3", scale=500), "evochain")
    phases = [(r.op, r.phase) for r in report.rounds if r.op.startswith("get")]
    assert phases == [(op, "no-consolidation") for op in ("getCreate", "getSell", "getTransform", "getSellBulk")] \
        + [(op, "consolidation") for op in ("getCreate", "getSell", "getTransform", "getSellBulk")]


def test_same_seed_gives_identical_functional_columns():
    a = run_workload(small("TC1", seed=7), "evochain")
    b = run_workload(small("TC1", seed=7), "evochain")
    c = run_workload(small("TC1", seed=8), "evochain")
    assert a.functional() == b.functional()
    assert a.views_digest != c.views_digest


def test_pacing_hits_the_target_rate_when_unsaturated():
    cfg = WorkloadConfig.for_scenario("TC1", scale=200, seed=0, send_rate=500, send_rate_max=None,
                                      on_disk=False)
    report = run_workload(cfg, "vanilla")
    for r in report.rounds:
        assert r.send_rate == pytest.approx(500, rel=0.10)


def test_csv_schema_and_empty_report(tmp_path):
    empty = MetricsReport("TC1", "vanilla", 0, 100, 10)
    path = report_emit(empty, "csv", tmp_path / "e.csv")
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"

    report = run_workload(small("TC1"), "vanilla")
    rows = list(csv.DictReader(io.StringIO(report_to_csv(report))))
    assert list(rows[0]) == CSV_COLUMNS
    core = ["round", "op", "send_rate", "throughput", "avg_latency_ms", "mem_mb"]
    assert [c for c in CSV_COLUMNS if c in core] == core
    assert [r["op"] for r in rows] == ["createGrapes", "sellGrapes", "transformGrapes", "sellBulk"]
    assert all(len(r["avg_latency_ms"].split(".")[1]) == 3 for r in rows)


def test_emit_is_bit_stable_for_the_same_report(tmp_path):
    report = run_workload(small("TC1"), "evochain")
    for fmt in ("csv", "json"):
        one = report_emit(report, fmt, tmp_path / f"a.{fmt}").read_bytes()
        two = report_emit(report, fmt, tmp_path / f"b.{fmt}").read_bytes()
        assert one == two
    doc = json.loads((tmp_path / "a.json").read_text())
    assert doc["schema"] == REPORT_SCHEMA
    assert doc["run"] == {"scenario": "TC1", "variant": "evochain", "seed": 1, "scale": 1000, "workers": 10}
    assert len(doc["rounds"]) == 4


def test_plots_are_written(tmp_path):
    from mutledger import plotting
    van = run_workload(small("TC1"), "vanilla")
    evo = run_workload(small("TC1"), "evochain")
    tc3 = run_workload(small("TC3", scale=500), "evochain")
    for path in (plotting.plot_report(evo, tmp_path / "r.png"),
                 plotting.plot_comparison(van, evo, tmp_path / "c.png"),
                 plotting.plot_consolidation(tc3, tmp_path / "t.png")):
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
