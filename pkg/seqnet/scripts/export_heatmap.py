# File: seqnet/scripts/export_heatmap.py
# Writes one heat-map CSV per SeqConv layer of a checkpoint matching a glob selector

import argparse
import sys
from pathlib import Path
from typing import List

import structlog

from seqnet.services.checkpoint import CHECKPOINT_NAME, restore_training_state
from seqnet.services.heatmap import compute_heatmap, heatmap_filename, select_layers, write_heatmap_csv
from seqnet.src.errors import EXIT_OK, ConfigError

logger = structlog.get_logger(__name__)

DEFAULT_SELECTOR = "stage*/block0/layer2"


def export_heatmaps(checkpoint: Path, selector: str, out: Path) -> List[Path]:
    network, _, _ = restore_training_state(checkpoint)
    written = []
    for path, layer in select_layers(network.seqconv_layers(), selector).items():
        written.append(write_heatmap_csv(compute_heatmap(layer, path), out / heatmap_filename(path)))
    return written


def run(args: argparse.Namespace) -> int:
    if args.checkpoint:
        checkpoint = Path(args.checkpoint)
    elif args.out:
        checkpoint = Path(args.out) / CHECKPOINT_NAME
    else:
        raise ConfigError("pass --checkpoint or an --out directory holding one")
    out = Path(args.out) if args.out else checkpoint.parent
    written = export_heatmaps(checkpoint, args.layers, out)
    for path in written:
        print(path)
    logger.info("export_heatmap.run: done", files=len(written), selector=args.layers)
    return EXIT_OK


def main() -> int:
    from seqnet.scripts.cli import main as cli_main

    return cli_main(["export-heatmap", *sys.argv[1:]])


if __name__ == "__main__":
    sys.exit(main())
