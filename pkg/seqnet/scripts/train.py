# File: seqnet/scripts/train.py
# Trains the configured network, checkpointing and writing the history CSV after every epoch

import argparse
import sys
from pathlib import Path

import pandas as pd
import structlog

from seqnet.scripts.common import HISTORY_NAME, apply_runtime, check_compatible, load_config, prepare_data
from seqnet.services.checkpoint import CHECKPOINT_NAME, restore_training_state, save_training_state
from seqnet.services.run_config import resolve_network
from seqnet.services.trainer import HISTORY_COLUMNS, OptimizerState, init_weights, train_loop
from seqnet.src.errors import EXIT_OK, ConfigError

logger = structlog.get_logger(__name__)


def run(args: argparse.Namespace) -> int:
    if not args.out:
        raise ConfigError("train needs an output directory for the checkpoint and history", "--out")
    config = load_config(args, epochs=args.epochs or None)
    cfg = config.train
    apply_runtime(cfg)
    spec = resolve_network(config)

    source = args.data or config.data.train
    if source is None:
        raise ConfigError("no training data: pass --data or set it in the config", "data.train")
    train, held_out = prepare_data(source, config.data.validation, cfg.seed)
    check_compatible(spec, train)

    out = Path(args.out)
    checkpoint_path = out / CHECKPOINT_NAME
    history_path = out / HISTORY_NAME
    meta = {
        "name": config.name,
        "data": source,
        "train": cfg.model_dump(mode="json"),
        "normalization": {"mean": train.channel_mean.tolist(), "std": train.channel_std.tolist()},
    }

    if args.resume:
        network, state, stored = restore_training_state(checkpoint_path)
        if network.spec != spec:
            raise ConfigError(f"network in {checkpoint_path} differs from the configured one", "network")
        start = int(stored.get("epoch", 0))
        history = pd.DataFrame(stored.get("history", []), columns=HISTORY_COLUMNS)
        logger.info("train.run: resuming", checkpoint=str(checkpoint_path), epoch=start)
    else:
        network = init_weights(spec, cfg.seed)
        state, start = OptimizerState(), 0
        history = pd.DataFrame(columns=HISTORY_COLUMNS)

    def save(epoch: int, net, opt_state, frame: pd.DataFrame) -> None:
        save_training_state(
            checkpoint_path, net, opt_state, {**meta, "epoch": epoch, "history": frame.to_dict("records")}
        )
        frame.to_csv(history_path, index=False)

    if args.epochs == 0:
        save(start, network, state, history)
        print(f"train: wrote initial checkpoint {checkpoint_path} (no epochs run)")
        return EXIT_OK

    result = train_loop(
        network,
        train,
        cfg,
        eval_data=held_out,
        start_epoch=start,
        state=state,
        history=history,
        on_epoch_end=lambda epoch, net, opt_state, frame: save(epoch + 1, net, opt_state, frame),
    )
    if start >= cfg.epochs:
        save(start, result.network, result.state, result.history)

    if len(result.history):
        last = result.history.iloc[-1]
        print(
            f"train: {len(result.history)} epochs, train_loss={last['train_loss']:.4f}, "
            f"train_acc={last['train_acc']:.4f}, eval_err={last['eval_err']:.4f}"
        )
    print(f"train: checkpoint {checkpoint_path}, history {history_path}")
    return EXIT_OK


def main() -> int:
    from seqnet.scripts.cli import main as cli_main

    return cli_main(["train", *sys.argv[1:]])


if __name__ == "__main__":
    sys.exit(main())
