# File: seqnet/scripts/common.py
# Helpers shared by the command modules: config loading with overrides, runtime settings, data preparation

import argparse
from typing import Optional, Tuple

import structlog

from seqnet.services.data import Dataset, load_dataset, normalize, split_validation
from seqnet.services.run_config import RunConfig, load_run_config, with_overrides
from seqnet.services.trainer import TrainConfig
from seqnet.src import runtime
from seqnet.src.builder import NetworkSpec
from seqnet.src.errors import ConfigError, DataError

logger = structlog.get_logger(__name__)

HISTORY_NAME = "history.csv"


def load_config(args: argparse.Namespace, epochs: Optional[int] = None) -> RunConfig:
    if not getattr(args, "config", None):
        raise ConfigError("--config is required for this command")
    config = load_run_config(args.config)
    return with_overrides(
        config,
        seed=getattr(args, "seed", None),
        precision=getattr(args, "precision", None),
        deterministic=getattr(args, "deterministic", None),
        epochs=epochs,
    )


def apply_runtime(cfg: TrainConfig) -> None:
    runtime.set_precision(cfg.precision)
    runtime.set_deterministic(cfg.deterministic)


def prepare_data(source: str, validation: int = 0, seed: int = 0) -> Tuple[Dataset, Optional[Dataset]]:
    """(normalized train, normalized held-out); held-out is the validation split when one is requested."""
    train, test = load_dataset(source)
    held_out = test
    if validation:
        train, held_out = split_validation(train, validation, seed)
    train = normalize(train)
    if held_out is not None:
        held_out = normalize(held_out, (train.channel_mean, train.channel_std))
    logger.info(
        "common.prepare_data: data ready",
        source=source,
        train=len(train),
        held_out=0 if held_out is None else len(held_out),
        geometry=train.geometry,
    )
    return train, held_out


def check_compatible(spec: NetworkSpec, data: Dataset) -> None:
    channels, height, width = data.geometry
    if channels != spec.input.channels:
        raise DataError(f"common.check_compatible: data has {channels} channels, network expects {spec.input.channels}")
    if spec.head is not None and data.classes != spec.head.classes:
        raise ConfigError(
            f"network classifies {spec.head.classes} classes but the data has {data.classes}", "network"
        )
    if (height, width) != (spec.input.height, spec.input.width):
        logger.warning(
            "common.check_compatible: image size differs from the network's nominal input",
            data=(height, width),
            nominal=(spec.input.height, spec.input.width),
        )
