"""Command line entry point: ``casseg <experiment> --config FILE --out DIR [--seed N]``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .errors import CassegError
from .experiments import KINDS, load_config, make_config, run_experiment

log = logging.getLogger("casseg")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casseg", description="Run a class-agnostic segmentation experiment.")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="experiment")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config; omitted keys take their defaults")
        p.add_argument("--out", help="existing directory for report.json, metrics.csv and images")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _headline(report: dict) -> str:
    if "status" in report:
        return f"status: {report['status']}"
    parts = []
    for name, arm in report.get("arms", {}).items():
        if "f_beta" in arm:
            parts.append(f"{name} F={arm['f_beta']:.4f} MAE={arm['mae']:.4f}")
        elif "rand_index" in arm:
            parts.append(
                f"{name} RI={arm['rand_index']:.4f} VI={arm['variation_of_information']:.4f} "
                f"cov={arm['covering']:.4f}"
            )
        elif "minority_recall" in arm:
            parts.append(f"{name} minority recall={arm['minority_recall']:.2f}")
    return "\n".join(parts)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config:
            cfg = load_config(args.config, args.kind, args.seed)
        else:
            cfg = make_config(None, args.kind, args.seed)
        start = time.perf_counter()
        report = run_experiment(cfg, args.out)
    except (CassegError, OSError) as exc:
        print(f"casseg: error: {exc}", file=sys.stderr)
        return 2
    log.info("finished in %.1f s", time.perf_counter() - start)
    print(_headline(report))
    if report.get("status") == "fail" or report.get("bounds_ok") is False:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
