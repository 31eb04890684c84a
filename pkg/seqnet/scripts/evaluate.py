# File: seqnet/scripts/evaluate.py
# Evaluates a checkpoint on the test split of a dataset

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import structlog

from seqnet.services.checkpoint import CHECKPOINT_NAME, restore_training_state
from seqnet.services.data import load_dataset, normalize
from seqnet.services.trainer import evaluate
from seqnet.src import runtime
from seqnet.src.errors import EXIT_OK, ConfigError, CorruptFileError

logger = structlog.get_logger(__name__)

RESULT_NAME = "eval.json"


def run(args: argparse.Namespace) -> int:
    if args.checkpoint:
        checkpoint = Path(args.checkpoint)
    elif args.out:
        checkpoint = Path(args.out) / CHECKPOINT_NAME
    else:
        raise ConfigError("pass --checkpoint or an --out directory holding one")
    network, _, meta = restore_training_state(checkpoint)
    if args.deterministic is not None:
        runtime.set_deterministic(args.deterministic)

    source = args.data or meta.get("data")
    if not source:
        raise ConfigError("no evaluation data: pass --data", "data")
    train, test = load_dataset(source)
    data = test if test is not None else train
    stats = meta.get("normalization")
    if stats is None:
        raise CorruptFileError("evaluate.run: checkpoint has no normalization statistics", str(checkpoint))
    data = normalize(data, (np.asarray(stats["mean"]), np.asarray(stats["std"])))

    result = evaluate(network, data, args.batch_size)
    document = {
        "checkpoint": str(checkpoint),
        "data": source,
        "samples": len(data),
        "epoch": meta.get("epoch"),
        "top1_err": result.top1_err,
        "top5_err": result.top5_err,
        "mean_loss": result.mean_loss,
    }
    print(json.dumps(document, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / RESULT_NAME).write_text(json.dumps(document, indent=2), encoding="utf-8")
    logger.info("evaluate.run: done", top1_err=result.top1_err, samples=len(data))
    return EXIT_OK


def main() -> int:
    from seqnet.scripts.cli import main as cli_main

    return cli_main(["eval", *sys.argv[1:]])


if __name__ == "__main__":
    sys.exit(main())
