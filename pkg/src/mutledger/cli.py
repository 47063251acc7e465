"""Command-line front end.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .bench import WorkloadConfig, report_emit, run_workload
from .errors import LedgerError
from .ledger import BLOCKS_FILE, Ledger
from .model import WallClock
from .scenarios import SCENARIO_MAP, recovery_walkthrough, threat_scenarios
from .winetracker import AppConfig, WineTracker

CONFIG_FILE = "config.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the same flag appear before or after the subcommand.
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--ledger", default=argparse.SUPPRESS, help="ledger directory (default ./ledger)")
    p.add_argument("--config", default=argparse.SUPPRESS, help="application config JSON")
    p.add_argument("--variant", choices=["vanilla", "evochain"], default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--scale", type=int, default=argparse.SUPPRESS, help="divisor for tx per round")
    p.add_argument("--format", choices=["csv", "json"], default=argparse.SUPPRESS)
    return p


DEFAULTS = {"ledger": "ledger", "config": None, "variant": "evochain", "seed": 0, "scale": 100, "format": "csv"}


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="mutledger", parents=[common],
                     description="Ledger with cancelable transactions, WineTracker app and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("init", parents=[common], help="create ledger files")

    p = sub.add_parser("issue", parents=[common], help="issue a transaction")
    p.add_argument("--as", dest="principal", required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--args", default="{}", help="operation arguments as JSON")

    p = sub.add_parser("cancel", parents=[common], help="cancel a pending transaction")
    p.add_argument("--as", dest="principal", required=True)
    p.add_argument("--tx", required=True)

    p = sub.add_parser("raise-delay", parents=[common], help="extend a pending transaction's delay")
    p.add_argument("--as", dest="principal", required=True)
    p.add_argument("--tx", required=True)
    p.add_argument("--delay", type=int, required=True)

    p = sub.add_parser("get-asset", parents=[common], help="current view of one object")
    p.add_argument("key")

    p = sub.add_parser("get-transactions", parents=[common], help="history of one object")
    p.add_argument("key")

    sub.add_parser("verify", parents=[common], help="check the hash chain")

    p = sub.add_parser("bench", parents=[common], help="run a benchmark scenario")
    p.add_argument("scenario", choices=["tc1", "tc2", "tc3"])
    p.add_argument("--out", default="reports", help="output directory")
    p.add_argument("--workers", type=int, default=10)
    p.add_argument("--compare", action="store_true", help="run both variants and plot them together")
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("scenario", parents=[common], help="run a scripted scenario")
    p.add_argument("name", choices=["recovery", "threats"])
    return parser


def _config(args, ledger_dir: Optional[Path]) -> AppConfig:
    if args.config:
        return AppConfig.load(args.config)
    if ledger_dir is not None and (ledger_dir / CONFIG_FILE).exists():
        return AppConfig.load(ledger_dir / CONFIG_FILE)
    return AppConfig.default()


def _detect_variant(ledger_dir: Path) -> str:
    with open(ledger_dir / BLOCKS_FILE) as f:
        header = json.loads(f.readline())
    return "vanilla" if header.get("format") == "mutledger-vanilla" else "evochain"


def _open(args) -> WineTracker:
    ledger_dir = Path(args.ledger)
    if not (ledger_dir / BLOCKS_FILE).exists():
        raise LedgerError(f"no ledger at {ledger_dir}; run `mutledger init --ledger {ledger_dir}` first")
    variant = _detect_variant(ledger_dir)
    config = _config(args, ledger_dir)
    if variant == "vanilla":
        return WineTracker("vanilla", config, path=ledger_dir)
    return WineTracker("evochain", config, ledger=Ledger(ledger_dir))


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_init(args) -> int:
    ledger_dir = Path(args.ledger)
    if (ledger_dir / BLOCKS_FILE).exists():
        raise LedgerError(f"{ledger_dir} already holds a ledger")
    config = _config(args, None)
    if args.variant == "vanilla":
        WineTracker("vanilla", config, path=ledger_dir)
    else:
        Ledger(ledger_dir, clock=WallClock())
    (ledger_dir / CONFIG_FILE).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"initialized {args.variant} ledger at {ledger_dir}")
    return 0


def cmd_issue(args) -> int:
    app = _open(args)
    try:
        op_args = json.loads(args.args)
    except json.JSONDecodeError as exc:
        raise LedgerError(f"--args is not valid JSON: {exc}") from None
    receipt = app.submit(app.principal(args.principal), args.op, op_args)
    _print({"tx_id": receipt.tx_id, "block_height": receipt.block_height,
            "submission_time": receipt.submission_time})
    return 0


def cmd_cancel(args) -> int:
    app = _open(args)
    receipt = app.cancel(app.principal(args.principal), args.tx)
    _print({"tx_id": receipt.tx_id, "target": receipt.target, "cascade_set": list(receipt.cascade_set),
            "block_height": receipt.block_height})
    return 0


def cmd_raise_delay(args) -> int:
    app = _open(args)
    if app.engine is None:
        raise LedgerError("the vanilla variant has no delays")
    rec = app.engine.raise_delay(app.principal(args.principal), args.tx, args.delay)
    _print(rec.to_dict())
    return 0


def cmd_get_asset(args) -> int:
    _print(_open(args).get_asset(args.key))
    return 0


def cmd_get_transactions(args) -> int:
    app = _open(args)
    if app.engine is None:
        raise LedgerError("the vanilla variant keeps no per-object transaction history")
    _print([t.to_dict() for t in app.engine.get_transactions(args.key)])
    return 0


def cmd_verify(args) -> int:
    app = _open(args)
    if app.engine is not None:
        bad = app.engine.ledger.first_corrupt_height()
    else:
        bad = app.vanilla.log.first_corrupt_height()
    if bad is None:
        print("chain ok")
        return 0
    print(f"chain corrupt at height {bad}", file=sys.stderr)
    return 1


def cmd_bench(args) -> int:
    scenario = args.scenario.upper()
    out = Path(args.out)
    variants = ["vanilla", "evochain"] if args.compare else [args.variant]
    if scenario == "TC2" and args.compare:
        raise LedgerError("TC2 cancels transactions and runs on evochain only")
    reports = {}
    for variant in variants:
        cfg = WorkloadConfig.for_scenario(scenario, scale=args.scale, seed=args.seed, workers=args.workers)
        try:
            report = run_workload(cfg, variant)
        except ValueError as exc:
            raise LedgerError(str(exc)) from None
        stem = f"{args.scenario}-{variant}-seed{args.seed}-scale{args.scale}"
        path = report_emit(report, args.format, out / f"{stem}.{args.format}")
        print(path)
        if not args.no_plot:
            from . import plotting
            print(plotting.plot_report(report, out / f"{stem}.png"))
            if scenario == "TC3" and variant == "evochain":
                print(plotting.plot_consolidation(report, out / f"{stem}-consolidation.png"))
        reports[variant] = report
    if args.compare and not args.no_plot:
        from . import plotting
        print(plotting.plot_comparison(reports["vanilla"], reports["evochain"],
                                       out / f"{args.scenario}-compare-seed{args.seed}-scale{args.scale}.png"))
    return 0


def cmd_scenario(args) -> int:
    if args.name == "recovery":
        for step in recovery_walkthrough():
            print(f"step {step.number}: {step.actor} {step.action} -> {json.dumps(step.observed, sort_keys=True)}")
        return 0
    covers = {}
    for scenario, attacks in SCENARIO_MAP.items():
        for a in attacks:
            covers.setdefault(a, []).append(scenario.split()[0])
    for r in threat_scenarios():
        outcome = "restored" if r.restored else f"not restored ({r.rejected})"
        print(f"{r.name} [{','.join(covers.get(r.name, []))}] {r.description}: {outcome}")
    return 0


COMMANDS = {
    "init": cmd_init, "issue": cmd_issue, "cancel": cmd_cancel, "raise-delay": cmd_raise_delay,
    "get-asset": cmd_get_asset, "get-transactions": cmd_get_transactions, "verify": cmd_verify,
    "bench": cmd_bench, "scenario": cmd_scenario,
}


def cli_main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, value in DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, value)
    if args.scale < 1:
        parser.print_usage(sys.stderr)
        print("mutledger: error: --scale must be at least 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except LedgerError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
