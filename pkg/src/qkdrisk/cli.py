"""Command-line entry point: ``qkdrisk <stage> [--config F] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import ConfigError, CsvRowError, DataError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

log = logging.getLogger("qkdrisk")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file layered over the packaged defaults")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides [run] seed)")
    common.add_argument("--out", default="run", help="run directory (default: ./run)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qkdrisk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a synthetic QBER series (and attacked copy)")
    sub.add_parser("train", parents=[common], help="form GMM categories over training folds")
    sub.add_parser("test", parents=[common], help="k-fold cross-validation per cluster range")
    sub.add_parser("risk", parents=[common], help="window the evaluation series and score risk")
    rep = sub.add_parser("report", parents=[common], help="summarise a run, optionally against others")
    rep.add_argument("--compare", nargs="*", default=[], metavar="DIR", help="other run directories")
    return p


def _run(args) -> list[Path]:
    out = Path(args.out)
    if args.command == "report":
        text, outputs = pipeline.cmd_report(out, args.compare)
        sys.stdout.write(text)
        return outputs
    cfg = load_config(args.config, args.seed)
    stage = {
        "simulate": pipeline.cmd_simulate,
        "train": pipeline.cmd_train,
        "test": pipeline.cmd_test,
        "risk": pipeline.cmd_risk,
    }[args.command]
    return stage(cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        outputs = _run(args)
    except ConfigError as exc:
        print(f"qkdrisk: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CsvRowError as exc:
        print(f"qkdrisk: data error: {len(exc.rows)} rejected CSV row(s)", file=sys.stderr)
        for line, msg in exc.rows:
            print(f"  line {line}: {msg}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"qkdrisk: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for path in outputs:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
