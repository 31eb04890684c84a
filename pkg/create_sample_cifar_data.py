# File: create_sample_cifar_data.py
# Creates CIFAR-format binary batches of synthetic images to exercise the CIFAR loader locally

import argparse
import os
from typing import List, Optional, Sequence

import structlog

from seqnet.services.data import (
    CIFAR10_TEST,
    CIFAR10_TRAIN,
    CIFAR100_TEST,
    CIFAR100_TRAIN,
    synthetic_classification,
    write_cifar_binary,
)
from seqnet.services.log import configure_logging

logger = structlog.get_logger(__name__)


def create_sample_cifar_dir(output_dir: str, per_batch: int = 1000, test: int = 1000, classes: int = 10,
                            seed: int = 42) -> List[str]:
    """Write a CIFAR-10 layout (five training batches plus a test batch), or the CIFAR-100 layout when classes > 10."""
    os.makedirs(output_dir, exist_ok=True)
    files = []
    if classes > 10:
        label_bytes = 2
        layout = [(CIFAR100_TRAIN, 5 * per_batch, seed), (CIFAR100_TEST, test, seed + 1)]
    else:
        label_bytes = 1
        layout = [(name, per_batch, seed + i) for i, name in enumerate(CIFAR10_TRAIN)]
        layout.append((CIFAR10_TEST, test, seed + len(CIFAR10_TRAIN)))

    for name, count, batch_seed in layout:
        dataset = synthetic_classification(classes, count, (3, 32, 32), seed=batch_seed)
        path = write_cifar_binary(dataset, os.path.join(output_dir, name), label_bytes)
        files.append(str(path))
        logger.info("create_sample_cifar_data.create_sample_cifar_dir: batch written", path=str(path), images=count)
    return files


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = argparse.ArgumentParser(description="write synthetic CIFAR binary batches")
    parser.add_argument("--out", default=os.path.join("data", "sample-cifar-10-batches-bin"))
    parser.add_argument("--per-batch", type=int, default=1000)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args(argv)
    configure_logging()

    project_root = os.path.abspath(os.path.dirname(__file__))
    output_dir = args.out if os.path.isabs(args.out) else os.path.join(project_root, args.out)
    files = create_sample_cifar_dir(output_dir, args.per_batch, args.test, args.classes, args.seed)
    print(f"Created {len(files)} batch files in {output_dir}:")
    for path in files:
        print(f"  - {os.path.basename(path)}")


if __name__ == "__main__":
    main()
