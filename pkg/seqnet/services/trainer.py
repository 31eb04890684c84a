# File: seqnet/services/trainer.py
# SGD with Nesterov momentum, step learning-rate schedules, weight initialization, training and evaluation

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from seqnet.services.data import BatchLoader, Dataset
from seqnet.src import ops
from seqnet.src.blocks import zero_init_block
from seqnet.src.builder import NetworkSpec
from seqnet.src.errors import InvalidArgumentError, NumericError
from seqnet.src.layers import BatchNorm2d, Conv2d, Linear
from seqnet.src.model import SeqNetwork
from seqnet.src.tensor import Tape, Tensor

logger = structlog.get_logger(__name__)

# --- Configuration ---
HISTORY_COLUMNS = ["epoch", "lr", "train_loss", "train_acc", "eval_err"]
EVAL_BATCH = 256


class ScheduleStep(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epoch: int = Field(ge=1)
    divisor: float = Field(default=10.0, gt=0)


def cifar_schedule() -> List[ScheduleStep]:
    return [ScheduleStep(epoch=150), ScheduleStep(epoch=225)]


def step_schedule(period: int, epochs: int, divisor: float = 10.0) -> List[ScheduleStep]:
    """Divide the rate by ``divisor`` every ``period`` epochs."""
    return [ScheduleStep(epoch=e, divisor=divisor) for e in range(period, epochs, period)]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr0: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    nesterov: bool = True
    weight_decay: float = Field(default=1e-4, ge=0)
    weight_decay_bn: bool = True
    schedule: List[ScheduleStep] = Field(default_factory=cifar_schedule)
    epochs: int = Field(default=300, ge=1)
    batch_size: int = Field(default=64, ge=1)
    dropout_rate: Optional[float] = Field(default=None, ge=0, lt=1)
    seed: int = 0
    precision: Literal["single", "double"] = "single"
    augment: bool = True
    eval_every: int = Field(default=1, ge=1)
    prefetch: int = Field(default=0, ge=0)
    deterministic: bool = True

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        epochs = [step.epoch for step in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"schedule epochs must be strictly increasing, got {epochs}")
        return self


@dataclass
class OptimizerState:
    """Momentum buffers keyed by parameter name; created as zeros on first use."""

    velocities: Dict[str, np.ndarray] = field(default_factory=dict)

    def velocity(self, name: str, like: np.ndarray) -> np.ndarray:
        buffer = self.velocities.get(name)
        if buffer is None:
            buffer = self.velocities[name] = np.zeros_like(like)
        elif buffer.shape != like.shape:
            raise InvalidArgumentError(
                f"trainer.OptimizerState.velocity: '{name}' velocity {buffer.shape} != parameter {like.shape}"
            )
        return buffer


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    momentum: float,
    weight_decay: float,
    decay: Optional[Dict[str, bool]] = None,
    nesterov: bool = True,
) -> OptimizerState:
    """In-place update: g = grad + wd*p; v = m*v + g; p -= lr*(g + m*v) (Nesterov) or lr*v."""
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise InvalidArgumentError(f"trainer.sgd_step: '{name}' gradient {grad.shape} != parameter {param.shape}")
        wd = weight_decay if decay is None or decay.get(name, True) else 0.0
        g = grad + wd * param if wd else grad
        v = state.velocity(name, param)
        v *= momentum
        v += g
        param -= lr * (g + momentum * v) if nesterov else lr * v
    return state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant rate: lr0 divided at every schedule point already reached."""
    lr = cfg.lr0
    for step in cfg.schedule:
        if epoch >= step.epoch:
            lr /= step.divisor
    return lr


def decay_mask(network: SeqNetwork, cfg: TrainConfig) -> Dict[str, bool]:
    """Which parameters receive weight decay: conv/linear weights always, BN affine and fc bias by flag."""
    return {name: name.endswith("weight") or cfg.weight_decay_bn for name, _ in network.named_parameters()}


# --- Initialization ---


def init_weights(network: Union[SeqNetwork, NetworkSpec], seed: int = 0, zero_init_residual: bool = True) -> SeqNetwork:
    """He-normal convs, Glorot-uniform classifier, BN gamma=1/beta=0, zeroed second block layers."""
    if isinstance(network, NetworkSpec):
        network = SeqNetwork(network)
    rng = np.random.default_rng(seed)
    for _, module in network.named_modules():
        if isinstance(module, Conv2d):
            std = math.sqrt(2.0 / module.fan_in)
            module.weight.data[...] = rng.normal(0.0, std, size=module.weight.shape)
        elif isinstance(module, Linear):
            bound = math.sqrt(6.0 / (module.in_features + module.out_features))
            module.weight.data[...] = rng.uniform(-bound, bound, size=module.weight.shape)
            module.bias.data[...] = 0
        elif isinstance(module, BatchNorm2d):
            module.reset()
    if zero_init_residual:
        for _, block in network.residual_blocks():
            zero_init_block(block.spec, block)
    logger.info("trainer.init_weights: parameters initialized", seed=seed, parameters=network.parameter_count())
    return network


# --- Training ---


@dataclass
class TrainResult:
    network: SeqNetwork
    history: pd.DataFrame
    state: OptimizerState


@dataclass
class EvalResult:
    top1_err: float
    top5_err: float
    mean_loss: float


def _as_input(images: np.ndarray, network: SeqNetwork) -> Tensor:
    dtype = next(iter(network.parameters())).dtype
    return Tensor.wrap(images.astype(dtype, copy=False))


def check_batching(size: int, batch_size: int) -> None:
    if batch_size > size:
        raise InvalidArgumentError(f"trainer: batch size {batch_size} exceeds dataset size {size}")
    if size % batch_size == 1:
        raise InvalidArgumentError(
            f"trainer: {size} samples with batch size {batch_size} leave a final batch of one, "
            f"which batch norm cannot normalize"
        )


def train_loop(
    network: Union[SeqNetwork, NetworkSpec],
    data: Dataset,
    cfg: TrainConfig,
    eval_data: Optional[Dataset] = None,
    start_epoch: int = 0,
    state: Optional[OptimizerState] = None,
    history: Optional[pd.DataFrame] = None,
    on_epoch_end: Optional[Callable[[int, SeqNetwork, OptimizerState, pd.DataFrame], None]] = None,
) -> TrainResult:
    """Seeded mini-batch SGD over ``cfg.epochs`` epochs, resuming at ``start_epoch`` when given."""
    if isinstance(network, NetworkSpec):
        network = init_weights(network, cfg.seed)
    if len(data) == 0:
        raise InvalidArgumentError("trainer.train_loop: training data is empty")
    check_batching(len(data), cfg.batch_size)
    if cfg.dropout_rate is not None:
        for _, module in network.named_modules():
            if hasattr(module, "dropout_rate") and module.dropout_rate > 0:
                module.dropout_rate = cfg.dropout_rate

    state = state or OptimizerState()
    rows = [] if history is None else history.to_dict("records")
    loader = BatchLoader(
        data,
        cfg.batch_size,
        seed=cfg.seed,
        augment=cfg.augment,
        prefetch=0 if cfg.deterministic else cfg.prefetch,
    )
    params = dict(network.named_parameters())
    mask = decay_mask(network, cfg)

    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        started = time.time()
        loss_sum, correct = 0.0, 0
        for index, (images, labels) in enumerate(loader.epoch(epoch)):
            network.zero_grad()
            rng = np.random.default_rng([cfg.seed, epoch, index, 1])
            with Tape() as tape:
                logits = network(_as_input(images, network), "train", rng)
                loss = ops.softmax_cross_entropy(logits, labels)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"trainer.train_loop: non-finite loss {value} at epoch {epoch}, batch {index}")
            tape.backward(loss)
            sgd_step(
                {name: t.data for name, t in params.items()},
                {name: t.grad for name, t in params.items()},
                state,
                lr,
                cfg.momentum,
                cfg.weight_decay,
                mask,
                cfg.nesterov,
            )
            loss_sum += value * len(labels)
            correct += int((logits.data.argmax(axis=1) == labels).sum())

        eval_err = float("nan")
        if eval_data is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            eval_err = evaluate(network, eval_data).top1_err
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / len(data),
            "train_acc": correct / len(data),
            "eval_err": eval_err,
        }
        rows.append(row)
        logger.info(
            "trainer.train_loop: epoch finished",
            seconds=round(time.time() - started, 2),
            **{key: (round(val, 6) if isinstance(val, float) else val) for key, val in row.items()},
        )
        if on_epoch_end is not None:
            on_epoch_end(epoch, network, state, pd.DataFrame(rows, columns=HISTORY_COLUMNS))

    return TrainResult(network, pd.DataFrame(rows, columns=HISTORY_COLUMNS), state)


def evaluate(network: SeqNetwork, data: Dataset, batch_size: int = EVAL_BATCH) -> EvalResult:
    """Eval-mode forward over ``data``; top-k errors as fractions of misclassified samples."""
    if len(data) == 0:
        raise InvalidArgumentError("trainer.evaluate: evaluation data is empty")
    loader = BatchLoader(data, batch_size, shuffle=False)
    top1 = top5 = 0
    loss_sum = 0.0
    for images, labels in loader.epoch(0):
        logits = network(_as_input(images, network), "eval").data
        loss_sum += ops.softmax_cross_entropy(Tensor.wrap(logits), labels).item() * len(labels)
        top1 += int((logits.argmax(axis=1) != labels).sum())
        k = min(5, logits.shape[1])
        best = np.argpartition(-logits, k - 1, axis=1)[:, :k]
        top5 += int((best != labels[:, None]).all(axis=1).sum())
    result = EvalResult(top1 / len(data), top5 / len(data), loss_sum / len(data))
    logger.debug("trainer.evaluate: done", samples=len(data), top1_err=result.top1_err, top5_err=result.top5_err)
    return result
