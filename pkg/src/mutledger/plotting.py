"""Figures for benchmark reports, rendered headless to PNG."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import MetricsReport  # noqa: E402


def _labels(report: MetricsReport) -> list:
    return [f"{r.round}:{r.op}" + (f"\n({r.phase})" if r.phase else "") for r in report.rounds]


def plot_report(report: MetricsReport, path) -> Path:
    """Per-round latency and throughput of one run."""
    path = Path(path)
    fig, (ax_lat, ax_tps) = plt.subplots(2, 1, figsize=(max(6, 0.6 * len(report.rounds) + 2), 6), sharex=True)
    xs = range(len(report.rounds))
    ax_lat.bar(xs, [r.avg_latency_ms for r in report.rounds], color="tab:blue")
    ax_lat.set_ylabel("avg latency (ms)")
    ax_tps.plot(xs, [r.throughput for r in report.rounds], marker="o", label="throughput")
    ax_tps.plot(xs, [r.send_rate for r in report.rounds], marker="x", linestyle="--", label="send rate")
    ax_tps.set_ylabel("TPS")
    ax_tps.legend(loc="best")
    ax_tps.set_xticks(list(xs))
    ax_tps.set_xticklabels(_labels(report), rotation=45, ha="right", fontsize=7)
    fig.suptitle(f"{report.scenario} {report.variant} seed={report.seed} scale=1/{report.scale}")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_comparison(vanilla: MetricsReport, evochain: MetricsReport, path) -> Path:
    """Side-by-side latency per operation for the two variants."""
    path = Path(path)
    ops = [r.op for r in vanilla.rounds]
    width = 0.4
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = range(len(ops))
    ax.bar([x - width / 2 for x in xs], [r.avg_latency_ms for r in vanilla.rounds], width, label="vanilla")
    ax.bar([x + width / 2 for x in xs], [r.avg_latency_ms for r in evochain.rounds], width, label="evochain")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(ops)
    ax.set_ylabel("avg latency (ms)")
    ax.set_title(f"{evochain.scenario}: vanilla vs evochain")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_consolidation(report: MetricsReport, path) -> Path:
    """Query latency before and after delays lapse."""
    path = Path(path)
    before = {r.op: r.avg_latency_ms for r in report.rounds if r.phase == "no-consolidation"}
    after = {r.op: r.avg_latency_ms for r in report.rounds if r.phase == "consolidation"}
    ops = [op for op in before if op in after]
    width = 0.4
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = range(len(ops))
    ax.bar([x - width / 2 for x in xs], [before[o] for o in ops], width, label="pending")
    ax.bar([x + width / 2 for x in xs], [after[o] for o in ops], width, label="consolidating")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(ops)
    ax.set_ylabel("avg latency (ms)")
    ax.set_title(f"{report.scenario} {report.variant}: query cost of lazy consolidation")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
