"""Command line entry point.

Exit codes: 0 success, 2 config error, 3 solver non-convergence (including
sweeps with failed points, after all outputs are written), 4 truncation
contract violation, 5 dimension cap, 1 anything else from the package.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, ConvergenceError, NumberSqueezeError
from .experiments import FORMATS, MODES, WORKERS_ENV, load_config, resolve_workers, run, write_outputs

log = logging.getLogger("numbersqueeze")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="numbersqueeze",
        description="Photon number statistics of a mode with number-dependent reservoir rates.",
    )
    ap.add_argument("command", choices=MODES)
    ap.add_argument("--config", required=True, help="YAML run description")
    ap.add_argument("--out", default=".", help="output directory (default: current directory)")
    ap.add_argument("--format", choices=FORMATS, default=None, help="overrides output.format in the config")
    ap.add_argument(
        "--workers",
        type=int,
        default=None,
        help=f"parallel sweep points (default: ${WORKERS_ENV}, then solver.workers, then 1)",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.mode != args.command:
            raise ConfigError(f"config mode is {cfg.mode!r} but command is {args.command!r}")
        workers = resolve_workers(args.workers, cfg)
        fmt = args.format or cfg.output.get("format", "csv")
        table = run(cfg, workers=workers)
        paths = write_outputs(table, args.out, fmt=fmt, basename=cfg.output.get("basename"))
        for p in paths:
            log.info("wrote %s", p)
        failed = table.metadata.get("failed_points", 0)
        if failed:
            log.error("%d sweep point(s) failed; see the status column", failed)
            return ConvergenceError.exit_code
        return 0
    except NumberSqueezeError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
