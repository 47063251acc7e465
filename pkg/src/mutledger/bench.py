"""Open-loop workload harness for the WineTracker variants.

Three scenarios, scaled down by ``scale`` from 10,000 (TC1, TC2) or 5,000
(TC3) transactions per round:

TC1
    createGrapes, sellGrapes, transformGrapes, sellBulk over fresh batches.
TC2
    Five repetitions of createGrapes, sellGrapes, transformGrapes and
    cancelCreateGrapes on the same batch ids; every cancel must sweep
    exactly three transactions.
TC3
    The TC1 chain, then getCreate/getSell/getTransform/getSellBulk queries on
    each transaction before its delay expires and again after.

Each round's requests are paced by a linear send-rate ramp and executed by
``workers`` threads against the single commit pipeline. Latency is measured
from the moment a worker sends a request to its completion.

Report schema (CSV columns, in order)::

    round, op, phase, send_rate, throughput, avg_latency_ms, mem_mb, tx, succeeded, failed

``round``, ``op``, ``phase``, ``tx``, ``succeeded`` and ``failed`` are
functional and identical for identical (scenario, variant, seed, scale).
"""
from __future__ import annotations

import csv
import io
import json
import random
import resource
import statistics
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .errors import LedgerError, ScenarioAssertionFailed
from .model import canonical_json, digest_hex
from .winetracker import AppConfig, WineTracker, bulk_key, grapes_key

REPORT_SCHEMA = "mutledger.report/1"
CSV_COLUMNS = ["round", "op", "phase", "send_rate", "throughput", "avg_latency_ms", "mem_mb",
               "tx", "succeeded", "failed"]
SCENARIOS = ("TC1", "TC2", "TC3", "CUSTOM")
FULL_ROUND = {"TC1": 10_000, "TC2": 10_000, "TC3": 5_000, "CUSTOM": 10_000}


@dataclass
class WorkloadConfig:
    scenario: str = "TC1"
    workers: int = 10
    tx_per_round: int = 100
    send_rate: float = 400.0
    send_rate_max: Optional[float] = 1200.0
    rounds: list = field(default_factory=list)  # (op_name, seed) pairs
    seed: int = 0
    scale: int = 100
    delay: int = 300_000
    repetitions: int = 1
    on_disk: bool = True

    def __post_init__(self):
        self.scenario = self.scenario.upper()
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.send_rate <= 0 or (self.send_rate_max is not None and self.send_rate_max <= 0):
            raise ValueError("send rates must be positive")
        if self.workers < 1 or self.tx_per_round < 1:
            raise ValueError("workers and tx_per_round must be at least 1")

    @classmethod
    def for_scenario(cls, scenario: str, scale: int = 100, seed: int = 0, **kw) -> "WorkloadConfig":
        scenario = scenario.upper()
        if scale < 1:
            raise ValueError("scale must be a positive divisor")
        n = max(1, FULL_ROUND[scenario] // scale)
        ops = {
            "TC1": ["createGrapes", "sellGrapes", "transformGrapes", "sellBulk"],
            "TC2": ["createGrapes", "sellGrapes", "transformGrapes", "cancelCreateGrapes"],
            "TC3": ["createGrapes", "sellGrapes", "transformGrapes", "sellBulk",
                    "getCreate", "getSell", "getTransform", "getSellBulk"],
            "CUSTOM": kw.pop("ops", ["createGrapes"]),
        }[scenario]
        kw.setdefault("repetitions", 5 if scenario == "TC2" else 1)
        rounds = [(op, seed * 1000 + i) for i, op in enumerate(ops)]
        return cls(scenario=scenario, tx_per_round=n, rounds=rounds, seed=seed, scale=scale, **kw)


@dataclass
class RoundMetrics:
    round: int
    op: str
    phase: str
    send_rate: float
    throughput: float
    avg_latency_ms: float
    mem_mb: float
    tx: int
    succeeded: int
    failed: int
    target_rate: float = 0.0


@dataclass
class MetricsReport:
    scenario: str
    variant: str
    seed: int
    scale: int
    workers: int
    rounds: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)  # (round, op, index, outcome) per request
    views_digest: str = ""

    def functional(self) -> dict:
        """Everything that must not depend on timing."""
        return {
            "rounds": [(r.round, r.op, r.phase, r.tx, r.succeeded, r.failed) for r in self.rounds],
            "outcomes": self.outcomes,
            "views_digest": self.views_digest,
        }

    def mean_latency(self, phase: Optional[str] = None, ops: Optional[set] = None) -> float:
        picked = [r.avg_latency_ms for r in self.rounds
                  if (phase is None or r.phase == phase) and (ops is None or r.op in ops)]
        return statistics.fmean(picked) if picked else 0.0


@dataclass
class _Request:
    op: str
    call: Callable[[], object]
    expect_ok: bool = True
    check: Optional[Callable[[object], bool]] = None


def ramp_schedule(n: int, rate: float, rate_max: Optional[float]) -> list:
    """Send offsets (seconds) for ``n`` requests whose rate ramps linearly."""
    offsets, t = [], 0.0
    for i in range(n):
        offsets.append(t)
        frac = i / (n - 1) if n > 1 else 0.0
        r = rate if rate_max is None else rate + (rate_max - rate) * frac
        t += 1.0 / r
    return offsets


def _peak_rss_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def _execute_round(requests: list, schedule: list, workers: int) -> list:
    n = len(requests)
    records = [None] * n
    cursor = iter(range(n))
    lock = threading.Lock()
    start_at = time.perf_counter() + 0.002

    def work():
        while True:
            with lock:
                i = next(cursor, None)
            if i is None:
                return
            wait = start_at + schedule[i] - time.perf_counter()
            if wait > 0:
                time.sleep(wait)
            req = requests[i]
            sent = time.perf_counter()
            try:
                result, error = req.call(), None
            except LedgerError as exc:
                result, error = None, exc
            done = time.perf_counter()
            records[i] = (start_at + schedule[i], sent, done, result, error)

    threads = [threading.Thread(target=work, daemon=True) for _ in range(min(workers, n))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return records


def _round_metrics(number: int, op: str, phase: str, records: list) -> RoundMetrics:
    n = len(records)
    scheduled = [r[0] for r in records]
    sent = [r[1] for r in records]
    done = [r[2] for r in records]
    ok = sum(1 for r in records if r[4] is None)
    first = min(sent)
    send_span = max(sent) - first
    total_span = max(done) - first
    send_rate = n / send_span if send_span > 0 else n / total_span
    sched_span = max(scheduled) - min(scheduled)
    return RoundMetrics(
        round=number, op=op, phase=phase,
        send_rate=send_rate,
        throughput=ok / total_span if total_span > 0 else 0.0,
        avg_latency_ms=statistics.fmean((d - s) * 1000.0 for s, d in zip(sent, done)),
        mem_mb=_peak_rss_mb(),
        tx=n, succeeded=ok, failed=n - ok,
        target_rate=n / sched_span if sched_span > 0 else send_rate,
    )


class _Workload:
    def __init__(self, cfg: WorkloadConfig, variant: str, workdir: Optional[Path]):
        self.cfg = cfg
        self.variant = variant
        config = AppConfig.default(cfg.delay)
        self.app = WineTracker(variant, config, path=workdir, fsync=False)
        self.grower = config.principal("grower")
        self.producer = config.principal("producer")
        self.admin = config.principal("org1-admin")
        self.n = cfg.tx_per_round
        self.receipts: dict = {}

    def batch(self, i: int) -> str:
        return f"b{i:06d}"

    def requests(self, op: str, seed: int, repetition: int) -> list:
        rng = random.Random(seed)
        app, n = self.app, self.n
        reqs = []
        for i in range(n):
            batch, bulk = self.batch(i), f"w{i:06d}"
            if op == "createGrapes":
                qty = rng.randint(100, 5_000)
                call = (lambda b=batch, q=qty, i=i: self._keep("createGrapes", i, app.create_grapes(
                    self.grower, b, q, {"region": "Douro", "varietal": "Touriga"})))
                reqs.append(_Request(op, call))
            elif op == "sellGrapes":
                call = lambda b=batch, i=i: self._keep("sellGrapes", i, app.sell_grapes(self.grower, b, "Org2"))
                reqs.append(_Request(op, call))
            elif op == "transformGrapes":
                vol = rng.randint(50, 3_000)
                call = (lambda b=batch, w=bulk, v=vol, i=i: self._keep(
                    "transformGrapes", i, app.transform_grapes(self.producer, b, w, v)))
                reqs.append(_Request(op, call))
            elif op == "sellBulk":
                call = lambda w=bulk, i=i: self._keep("sellBulk", i, app.sell_bulk(self.producer, w, "Org3"))
                reqs.append(_Request(op, call))
            elif op == "cancelCreateGrapes":
                call = lambda i=i: app.cancel(self.admin, self.receipts[("createGrapes", i)].tx_id)
                reqs.append(_Request(op, call, check=lambda r: len(r.cascade_set) == 3))
            elif op.startswith("get"):
                source = {"getCreate": "createGrapes", "getSell": "sellGrapes",
                          "getTransform": "transformGrapes", "getSellBulk": "sellBulk"}[op]
                reqs.append(_Request(op, lambda s=source, i=i: self._query(s, i)))
            else:
                raise ValueError(f"unknown operation {op!r}")
        return reqs

    def _keep(self, op: str, i: int, receipt):
        self.receipts[(op, i)] = receipt
        return receipt

    def _query(self, source: str, i: int):
        if self.app.engine is not None:
            return self.app.engine.get_transaction(self.receipts[(source, i)].tx_id)
        key = grapes_key(self.batch(i)) if source in ("createGrapes", "sellGrapes") else bulk_key(f"w{i:06d}")
        return self.app.get_asset(key)


def run_workload(cfg: WorkloadConfig, variant: str = "evochain") -> MetricsReport:
    """Run ``cfg`` against a fresh ledger of the given variant.

    Raises :class:`ScenarioAssertionFailed` at the first request whose
    accept/reject outcome differs from what the scenario expects.
    """
    if variant not in ("evochain", "vanilla"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "vanilla" and any(op.startswith("cancel") for op, _ in cfg.rounds):
        raise ValueError("the vanilla variant has no cancel operation; run this scenario on evochain")

    with tempfile.TemporaryDirectory(prefix="mutledger-bench-") as tmp:
        workdir = Path(tmp) / "ledger" if cfg.on_disk else None
        work = _Workload(cfg, variant, workdir)
        report = MetricsReport(cfg.scenario, variant, cfg.seed, cfg.scale, cfg.workers)
        schedule = ramp_schedule(cfg.tx_per_round, cfg.send_rate, cfg.send_rate_max)
        number = 0
        for rep in range(cfg.repetitions):
            queried = set()
            for op, seed in cfg.rounds:
                phase = ""
                if op.startswith("get"):
                    if op in queried:
                        continue
                    phase = "no-consolidation"
                number += 1
                _run_one(work, report, number, op, phase, seed + rep, schedule, cfg.workers)
            if cfg.scenario == "TC3":
                # Let every delay lapse, then query again: now each query consolidates.
                if work.app.engine is not None:
                    work.app.engine.clock.advance(cfg.delay + 1)
                for op, seed in cfg.rounds:
                    if op.startswith("get"):
                        number += 1
                        _run_one(work, report, number, op, "consolidation", seed + rep, schedule, cfg.workers)
        report.views_digest = digest_hex(canonical_json(work.app.views()))
        if not work.app.verify_chain():
            raise ScenarioAssertionFailed("chain failed verification after the run")
    return report


def _run_one(work: _Workload, report: MetricsReport, number: int, op: str, phase: str,
             seed: int, schedule: list, workers: int) -> None:
    requests = work.requests(op, seed, number)
    records = _execute_round(requests, schedule, workers)
    for i, (req, rec) in enumerate(zip(requests, records)):
        result, error = rec[3], rec[4]
        outcome = "ok" if error is None else type(error).__name__
        report.outcomes.append((number, op, i, outcome))
        good = (error is None) == req.expect_ok and (error is not None or req.check is None or req.check(result))
        if not good:
            raise ScenarioAssertionFailed(f"round {number} {op} request {i}: {outcome} {result!r} {error!r}")
    report.rounds.append(_round_metrics(number, op, phase, records))


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def report_rows(report: MetricsReport) -> list:
    return [[r.round, r.op, r.phase, _fmt(r.send_rate), _fmt(r.throughput), _fmt(r.avg_latency_ms),
             _fmt(r.mem_mb), r.tx, r.succeeded, r.failed] for r in report.rounds]


def report_to_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(report_rows(report))
    return buf.getvalue()


def report_to_json(report: MetricsReport) -> str:
    doc = {
        "schema": REPORT_SCHEMA,
        "run": {"scenario": report.scenario, "variant": report.variant, "seed": report.seed,
                "scale": report.scale, "workers": report.workers},
        "views_digest": report.views_digest,
        "rounds": [{k: (round(v, 3) if isinstance(v, float) else v) for k, v in asdict(r).items()}
                   for r in report.rounds],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_emit(report: MetricsReport, fmt: str, path) -> Path:
    """Write ``report`` as ``csv`` or ``json`` to ``path``."""
    text = {"csv": report_to_csv, "json": report_to_json}[fmt](report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
