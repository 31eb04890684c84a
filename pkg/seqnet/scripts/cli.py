# File: seqnet/scripts/cli.py
# Command-line entry point: analyze | train | eval | gradcheck | export-heatmap | schema

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import structlog

from seqnet.scripts import analyze, evaluate, export_heatmap, gradcheck, train
from seqnet.services.log import configure_logging
from seqnet.services.run_config import schema_document
from seqnet.src import runtime
from seqnet.src.errors import EXIT_DATA, EXIT_OK, SeqNetError
from seqnet.src.gradcheck import DEFAULT_TOL

logger = structlog.get_logger(__name__)


def _schema(args: argparse.Namespace) -> int:
    text = json.dumps(schema_document(), indent=2)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(path)
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--data", help="CIFAR binary directory/file or synthetic:<classes>:<n>[:<size>]")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override train.seed")
    common.add_argument("--precision", choices=sorted(runtime.PRECISIONS), help="override train.precision")
    common.add_argument(
        "--deterministic", action=argparse.BooleanOptionalAction, default=None, help="override train.deterministic"
    )
    common.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--log-json", action="store_true", help="render log events as JSON lines")

    parser = argparse.ArgumentParser(prog="seqnet", description="SeqConv networks: analyze, train and inspect")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("analyze", parents=[common], help="parameter and MAC counts of a network")
    p.add_argument("--graph", action="store_true", help="also print the layer listing")
    p.set_defaults(handler=analyze.run)

    p = commands.add_parser("train", parents=[common], help="train and checkpoint every epoch")
    p.add_argument("--epochs", type=int, help="override train.epochs; 0 writes the initialization only")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.set_defaults(handler=train.run)

    p = commands.add_parser("eval", parents=[common], help="top-1/top-5 error of a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.sqcv)")
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(handler=evaluate.run)

    p = commands.add_parser("gradcheck", parents=[common], help="finite-difference check of a small network")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--size", type=int, default=8, help="spatial size of the random input batch")
    p.add_argument("--max-coords", type=int, default=16, help="coordinates sampled per parameter tensor; 0 checks all")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(handler=gradcheck.run)

    p = commands.add_parser("export-heatmap", parents=[common], help="heat-map CSVs of selected SeqConv layers")
    p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.sqcv)")
    p.add_argument("--layers", default=export_heatmap.DEFAULT_SELECTOR, help="glob over layer paths")
    p.set_defaults(handler=export_heatmap.run)

    p = commands.add_parser("schema", parents=[common], help="JSON schema of run configs and network specs")
    p.set_defaults(handler=_schema)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.log_level, json=args.log_json)
    if args.deterministic is not None:
        runtime.set_deterministic(args.deterministic)

    try:
        return args.handler(args)
    except SeqNetError as exc:
        logger.error("cli.main: command failed", command=args.command, error=str(exc), kind=type(exc).__name__)
        print(f"seqnet {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        logger.error("cli.main: I/O failure", command=args.command, error=str(exc))
        print(f"seqnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
