"""Command-line front-end.

Subcommands: run (execute a campaign), partition-stats (inspect the split and
the sharing quota), attack-eval (re-run the eavesdropper offline against
stored checkpoints), report (rebuild the comparison table from persisted
traces). Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    evaluate_stored_attack,
    load_config,
    partition_stats,
    recompute_report,
    run_campaign,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="campaign JSON file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override a configuration leaf (value parsed as JSON when possible)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedshare",
        description="Federated averaging with raw-data exchange: campaigns, "
        "partition inspection, and offline attack evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run all configured cases x repetitions")
    _add_config_args(run)
    run.add_argument("--output-dir", help="override the configured output directory")

    stats = sub.add_parser("partition-stats", help="per-participant class counts, p, and x")
    _add_config_args(stats)
    stats.add_argument("--output", help="write CSV here instead of stdout")

    atk = sub.add_parser("attack-eval", help="re-run the attack on stored checkpoints")
    atk.add_argument("--run-dir", required=True, help="a runs/<case>/rep<k> directory")
    atk.add_argument("--probe-size", type=int, default=None, help="override probe size")
    atk.add_argument("--output", help="write the verdict CSV here")

    rep = sub.add_parser("report", help="rebuild the comparison report from artifacts")
    rep.add_argument("--output-dir", required=True, help="campaign output directory")
    rep.add_argument("--write", action="store_true", help="also write report.recomputed.*")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.overrides)
            report = run_campaign(cfg, args.output_dir)
            sys.stdout.write(report.to_csv())
            return EXIT_OK

        if args.command == "partition-stats":
            cfg = load_config(args.config, args.overrides)
            text = partition_stats(cfg)
            if args.output:
                Path(args.output).write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK

        if args.command == "attack-eval":
            csv_text, summary = evaluate_stored_attack(args.run_dir, args.probe_size)
            if args.output:
                Path(args.output).write_text(csv_text)
            else:
                sys.stdout.write(csv_text)
            sys.stderr.write(
                f"rounds={summary.rounds} mean_tail_R={summary.mean_tail_R:.3f} "
                f"max_R={summary.max_R:.0f}\n"
            )
            return EXIT_OK

        if args.command == "report":
            report = recompute_report(args.output_dir)
            sys.stdout.write(report.to_csv())
            if args.write:
                out = Path(args.output_dir)
                (out / "report.recomputed.json").write_text(report.to_json())
                (out / "report.recomputed.csv").write_text(
                    f"# config_digest={report.config_digest}\n" + report.to_csv()
                )
            return EXIT_OK
    except ConfigError as e:
        sys.stderr.write(f"configuration error: {e}\n")
        return EXIT_CONFIG
    except (OSError, ValueError, ArithmeticError, RuntimeError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_RUNTIME
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
