"""Experiment runner CLI.

One ``--config`` runs that experiment's sweep and persists ``sweep.csv``
plus ``metadata.json``; several ``--config`` flags run a paired rule
comparison (the configs must differ only in their aggregator). Exit codes:
0 success, 2 config error, 3 contamination-assumption violation, 4
divergence without ``--allow-divergence``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import (
    ConfigError,
    compare_rules,
    format_comparison,
    format_summary,
    load_config,
    run_config,
    write_comparison_csv,
    write_metadata,
    write_trace_csv,
)
from .network import AssumptionViolationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_DIVERGENCE = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="robust-diffusion",
        description=(
            "Run contamination experiments for robust decentralized diffusion "
            "learning from a declarative YAML config."
        ),
    )
    p.add_argument(
        "--config",
        action="append",
        required=True,
        metavar="PATH",
        help="experiment config; repeat to compare aggregation rules on one setup",
    )
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--runs", type=int, default=None, help="override the Monte-Carlo run count")
    p.add_argument("--out", type=Path, default=None, help="override the output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (results are schedule-independent)")
    p.add_argument(
        "--allow-divergence",
        action="store_true",
        help="exit 0 even when a run diverges (expected for the mean rule under strong attack)",
    )
    p.add_argument(
        "--override-assumption1",
        action="store_true",
        help="run sweep cells that violate the contamination assumption, recording the verdict",
    )
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfgs = [load_config(p) for p in args.config]
        if args.seed is not None:
            cfgs = [replace(c, seed=args.seed) for c in cfgs]
        if args.runs is not None:
            if args.runs < 1:
                raise ConfigError("--runs: must be >= 1")
            cfgs = [replace(c, runs=args.runs) for c in cfgs]

        out_dir = args.out if args.out is not None else Path(cfgs[0].output_dir)

        if len(cfgs) == 1:
            cfg = cfgs[0]
            result = run_config(
                cfg, jobs=args.jobs, override_assumption1=args.override_assumption1
            )
            write_trace_csv(result, out_dir / "sweep.csv")
            write_metadata(cfg, result, out_dir / "metadata.json")
            print(format_summary(result))
            print(f"wrote {out_dir / 'sweep.csv'}")
            if result.any_diverged and not args.allow_divergence:
                print(
                    "error: divergence event recorded (rerun with --allow-divergence "
                    "to treat it as a finding)",
                    file=sys.stderr,
                )
                return EXIT_DIVERGENCE
            return EXIT_OK

        comparison = compare_rules(
            cfgs, jobs=args.jobs, override_assumption1=args.override_assumption1
        )
        write_comparison_csv(comparison, out_dir / "comparison.csv")
        print(format_comparison(comparison))
        print(f"wrote {out_dir / 'comparison.csv'}")
        return EXIT_OK
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionViolationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
