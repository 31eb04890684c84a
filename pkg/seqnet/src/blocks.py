# File: seqnet/src/blocks.py
# Residual blocks of two SeqConv layers and down-sampling blocks (extension + grouped stride-2 conv)

from __future__ import annotations

from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from seqnet.src import ops
from seqnet.src.errors import InvalidArgumentError
from seqnet.src.layers import BatchNorm2d, Conv2d, ConvBN, Module
from seqnet.src.ops import Mode
from seqnet.src.seqconv import SeqConvConfig, SeqConvLayer
from seqnet.src.tensor import Tensor

logger = structlog.get_logger(__name__)


class ResidualBlockSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    width: int = Field(ge=1)
    layer1: SeqConvConfig
    layer2: SeqConvConfig
    zero_init: bool = True

    @model_validator(mode="after")
    def _check(self) -> "ResidualBlockSpec":
        if self.layer1.width != self.width or self.layer2.width != self.width:
            raise ValueError(
                f"residual block width {self.width} must equal both layer widths "
                f"({self.layer1.width}, {self.layer2.width})"
            )
        return self

    @classmethod
    def uniform(cls, width: int, k: int, c: int = 1, transform: str = "basic", windowed: bool = True):
        """Block whose two layers share (k, c, transform); the second ends each transform with BN."""
        if width % k:
            raise InvalidArgumentError(f"blocks.ResidualBlockSpec.uniform: width {width} not divisible by k={k}")
        layer = dict(groups=width // k, k=k, c=c, transform=transform, windowed=windowed)
        return cls(
            width=width,
            layer1=SeqConvConfig(**layer),
            layer2=SeqConvConfig(**layer, activate_output=False),
        )


class DownsampleBlockSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    in_width: int = Field(ge=1)
    extension: Optional[SeqConvConfig] = None
    downsize_groups: int = Field(ge=1)

    @property
    def added_width(self) -> int:
        return self.extension.width if self.extension is not None else 0

    @property
    def out_width(self) -> int:
        return self.in_width + self.added_width

    @model_validator(mode="after")
    def _check(self) -> "DownsampleBlockSpec":
        if self.out_width % self.downsize_groups:
            raise ValueError(
                f"downsize groups {self.downsize_groups} do not divide block output width {self.out_width}"
            )
        return self


# --- Parameter holders ---


class ResidualBlock(Module):
    def __init__(self, spec: ResidualBlockSpec, dropout_rate: float = 0.0):
        self.spec = spec
        self.layer1 = SeqConvLayer(spec.layer1, spec.width)
        self.layer2 = SeqConvLayer(spec.layer2, spec.width)
        self.dropout_rate = dropout_rate
        self.leading_dropout = True

    def children(self):
        return (("layer1", self.layer1), ("layer2", self.layer2))

    def __call__(self, x: Tensor, mode: Mode = "train", rng: Optional[np.random.Generator] = None) -> Tensor:
        return residual_block_forward(x, self.spec, self, mode, rng)


class DownsampleBlock(Module):
    def __init__(self, spec: DownsampleBlockSpec, dropout_rate: float = 0.0):
        self.spec = spec
        self.extension = SeqConvLayer(spec.extension, spec.in_width) if spec.extension is not None else None
        self.downsize = ConvBN(Conv2d(spec.out_width, spec.out_width, 3, stride=2, groups=spec.downsize_groups))
        self.dropout_rate = dropout_rate

    def children(self):
        items = [("extension", self.extension)] if self.extension is not None else []
        return items + [("downsize", self.downsize)]

    def __call__(self, x: Tensor, mode: Mode = "train", rng: Optional[np.random.Generator] = None) -> Tensor:
        return downsample_block_forward(x, self.spec, self, mode, rng)


def _maybe_dropout(x: Tensor, rate: float, mode: Mode, rng) -> Tensor:
    return ops.dropout(x, rate, mode, rng) if rate > 0 else x


def residual_block_forward(x: Tensor, spec: ResidualBlockSpec, params: ResidualBlock, mode: Mode = "train",
                           rng: Optional[np.random.Generator] = None) -> Tensor:
    """y = x + layer2(layer1(x))."""
    if x.shape[1] != spec.width:
        raise InvalidArgumentError(
            f"blocks.residual_block_forward: input width {x.shape[1]} != block width {spec.width}"
        )
    leading = params.dropout_rate if params.leading_dropout else 0.0
    hidden = params.layer1(_maybe_dropout(x, leading, mode, rng), mode)
    body = params.layer2(_maybe_dropout(hidden, params.dropout_rate, mode, rng), mode)
    return ops.add(x, body)


def downsample_block_forward(x: Tensor, spec: DownsampleBlockSpec, params: DownsampleBlock, mode: Mode = "train",
                             rng: Optional[np.random.Generator] = None) -> Tensor:
    """Concatenate the extension's new groups after x, then grouped 3x3 stride-2 Conv-BN-ReLU."""
    if x.shape[1] != spec.in_width:
        raise InvalidArgumentError(
            f"blocks.downsample_block_forward: input width {x.shape[1]} != block input width {spec.in_width}"
        )
    merged = x
    if params.extension is not None:
        added = params.extension(_maybe_dropout(x, params.dropout_rate, mode, rng), mode)
        merged = ops.concat_channels([x, added])
    return params.downsize(merged, mode)


def zero_init_block(spec: ResidualBlockSpec, params: ResidualBlock) -> ResidualBlock:
    """Zero the last kernel of every layer2 transform and reset gamma/beta so the block is the identity map.

    Bottleneck transforms keep their 1x1 kernel, so the zeroed 3x3 still sees a nonzero input.
    """
    for _, module in params.named_modules():
        if isinstance(module, BatchNorm2d):
            module.gamma.data[...] = 1
            module.beta.data[...] = 0
    if spec.zero_init:
        for transform in params.layer2.transforms:
            transform.units[-1][1].conv.weight.data[...] = 0
    logger.debug("blocks.zero_init_block: residual body zeroed", width=spec.width)
    return params
