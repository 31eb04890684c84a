# File: seqnet/src/seqconv.py
# Sequentially aggregated convolution layers: dense SeqConv, windowed WSeqConv and their transforms
#
# A layer holds g transforms F_1..F_g, each emitting k channels. Source positions
# 1-g_in..0 name the k-wide groups of the layer input (g_in = C_in / k) and
# positions 1..g name the group outputs. Dense F_i reads [x_0, x_1, ..., x_{i-1}];
# windowed F_i reads positions max(1-g_in, i-g')..i-1. The layer output is
# [x_1, ..., x_g]; the input itself is never part of it.

from __future__ import annotations

from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from seqnet.src import ops
from seqnet.src.errors import InvalidArgumentError
from seqnet.src.layers import ConvBN, Conv2d, Module
from seqnet.src.ops import Mode
from seqnet.src.tensor import Tensor

logger = structlog.get_logger(__name__)

Transform = Literal["basic", "bottleneck"]
ParamShape = Tuple[str, Tuple[int, ...]]


class SeqConvConfig(BaseModel):
    """One SeqConv layer: g groups of k channels, dense or windowed aggregation."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    groups: int = Field(ge=1, description="g, number of transforms in the layer")
    k: int = Field(ge=1, description="channels emitted per group")
    windowed: bool = True
    window: Optional[int] = Field(default=None, ge=1, description="g'; defaults to the input group count")
    transform: Transform = "basic"
    c: int = Field(default=1, ge=1, description="subgroups of the bottleneck 3x3 conv")
    stride: Literal[1] = 1
    activate_output: bool = True

    @model_validator(mode="after")
    def _check(self) -> "SeqConvConfig":
        if self.k % self.c:
            raise ValueError(f"k={self.k} not divisible by subgroup count c={self.c}")
        if self.window is not None and not self.windowed:
            raise ValueError("window length given for a dense layer")
        return self

    @property
    def width(self) -> int:
        return self.groups * self.k


# --- Window arithmetic ---


def input_groups(cfg: SeqConvConfig, in_channels: int) -> int:
    """Number of k-wide groups the layer input decomposes into."""
    if in_channels % cfg.k:
        raise InvalidArgumentError(
            f"seqconv.input_groups: input width {in_channels} cannot be read as groups of k={cfg.k} channels; "
            f"windowed aggregation treats the input as x_(1-g')..x_0, each k wide"
        )
    return in_channels // cfg.k


def window_length(cfg: SeqConvConfig, in_channels: int) -> int:
    return cfg.window if cfg.window is not None else input_groups(cfg, in_channels)


def window_positions(i: int, window: int, in_groups: int) -> Tuple[int, int]:
    """First and last source position visible to F_i."""
    return max(1 - in_groups, i - window), i - 1


def window_mask(i: int, window: int, total_groups_before: Optional[int] = None) -> np.ndarray:
    """0/1 vector over source positions 1-total..i-1 selecting the window of F_i."""
    if i < 1:
        raise InvalidArgumentError(f"seqconv.window_mask: group index must be >= 1, got {i}")
    if window < 1:
        raise InvalidArgumentError(f"seqconv.window_mask: window must be >= 1, got {window}")
    total = window if total_groups_before is None else total_groups_before
    positions = np.arange(1 - total, i)
    return ((positions >= i - window) & (positions <= i - 1)).astype(np.int8)


def group_input_width(cfg: SeqConvConfig, in_channels: int, i: int) -> int:
    if not cfg.windowed:
        return in_channels + (i - 1) * cfg.k
    lo, hi = window_positions(i, window_length(cfg, in_channels), input_groups(cfg, in_channels))
    return (hi - lo + 1) * cfg.k


def param_shapes(cfg: SeqConvConfig, in_channels: int) -> List[ParamShape]:
    """Kernel and BN shapes of every transform, group-major, named as the layer names them."""
    shapes: List[ParamShape] = []
    for i in range(1, cfg.groups + 1):
        width = group_input_width(cfg, in_channels, i)
        prefix = f"group{i}/"
        if cfg.transform == "basic":
            shapes.append((prefix + "conv3x3/conv/weight", (cfg.k, width, 3, 3)))
            shapes += [(prefix + "conv3x3/bn/gamma", (cfg.k,)), (prefix + "conv3x3/bn/beta", (cfg.k,))]
        else:
            shapes.append((prefix + "conv1x1/conv/weight", (cfg.k, width, 1, 1)))
            shapes += [(prefix + "conv1x1/bn/gamma", (cfg.k,)), (prefix + "conv1x1/bn/beta", (cfg.k,))]
            shapes.append((prefix + "conv3x3/conv/weight", (cfg.k, cfg.k // cfg.c, 3, 3)))
            shapes += [(prefix + "conv3x3/bn/gamma", (cfg.k,)), (prefix + "conv3x3/bn/beta", (cfg.k,))]
    return shapes


def parameter_count(cfg: SeqConvConfig, in_channels: int) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(cfg, in_channels))


def subgrouped_3x3(x: Tensor, weight: Tensor, k: int, c: int) -> Tensor:
    """3x3 conv, k -> k channels, split into c independent subgroups."""
    if c < 1 or k % c:
        raise InvalidArgumentError(f"seqconv.subgrouped_3x3: k={k} not divisible by c={c}")
    if x.shape[1] != k or weight.shape != (k, k // c, 3, 3):
        raise InvalidArgumentError(
            f"seqconv.subgrouped_3x3: expected {k} input channels and kernel {(k, k // c, 3, 3)}, "
            f"got {x.shape[1]} and {weight.shape}"
        )
    return ops.conv2d(x, weight, stride=1, padding=1, groups=c)


# --- Transforms and layers ---


class GroupTransform(Module):
    """F_i: Conv-BN-ReLU (basic) or 1x1 Conv-BN-ReLU then subgrouped 3x3 Conv-BN-ReLU (bottleneck)."""

    def __init__(self, in_width: int, k: int, transform: Transform = "basic", c: int = 1,
                 activate_output: bool = True):
        self.in_width = in_width
        self.k = k
        self.c = c
        self.transform = transform
        self.activate_output = activate_output
        if transform == "basic":
            self.units = [("conv3x3", ConvBN(Conv2d(in_width, k, 3), activate=activate_output))]
        else:
            self.units = [
                ("conv1x1", ConvBN(Conv2d(in_width, k, 1, padding=0))),
                ("conv3x3", ConvBN(Conv2d(k, k, 3, groups=c), activate=activate_output)),
            ]

    def children(self):
        return self.units

    @property
    def reading_conv(self) -> Conv2d:
        """The conv that reads the aggregated input."""
        return self.units[0][1].conv

    def __call__(self, x: Tensor, mode: Mode, reading_weight: Optional[Tensor] = None) -> Tensor:
        if reading_weight is None and x.shape[1] != self.in_width:
            raise InvalidArgumentError(
                f"seqconv.GroupTransform: expected {self.in_width} input channels, got {x.shape[1]}"
            )
        out = x
        for index, (_, unit) in enumerate(self.units):
            if index == 0 and reading_weight is not None:
                conv = unit.conv
                out = unit.bn(ops.conv2d(out, reading_weight, conv.stride, conv.padding, conv.groups), mode)
                out = ops.relu(out) if unit.activate else out
            elif unit.conv.groups > 1:
                out = unit.bn(subgrouped_3x3(out, unit.conv.weight, self.k, self.c), mode)
                out = ops.relu(out) if unit.activate else out
            else:
                out = unit(out, mode)
        return out


class SeqConvLayer(Module):
    """Parameters of one SeqConv layer plus dispatch to the dense or windowed forward."""

    def __init__(self, cfg: SeqConvConfig, in_channels: int):
        self.cfg = cfg
        self.in_channels = in_channels
        if cfg.windowed:
            input_groups(cfg, in_channels)
        self.transforms = [
            GroupTransform(group_input_width(cfg, in_channels, i), cfg.k, cfg.transform, cfg.c, cfg.activate_output)
            for i in range(1, cfg.groups + 1)
        ]
        logger.debug(
            "seqconv.SeqConvLayer.__init__: layer created",
            in_channels=in_channels,
            groups=cfg.groups,
            k=cfg.k,
            windowed=cfg.windowed,
            transform=cfg.transform,
        )

    @property
    def out_channels(self) -> int:
        return self.cfg.width

    def children(self):
        return [(f"group{i}", t) for i, t in enumerate(self.transforms, start=1)]

    def __call__(self, x: Tensor, mode: Mode = "train") -> Tensor:
        if self.cfg.windowed:
            return wseqconv_forward(x, self.cfg, self, mode)
        return seqconv_forward(x, self.cfg, self, mode)


def _transforms(cfg: SeqConvConfig, params) -> Sequence[GroupTransform]:
    transforms = params.transforms if isinstance(params, SeqConvLayer) else list(params)
    if len(transforms) != cfg.groups:
        raise InvalidArgumentError(f"seqconv: config has {cfg.groups} groups but {len(transforms)} transforms given")
    return transforms


def _check_widths(cfg: SeqConvConfig, in_channels: int, transforms: Sequence[GroupTransform], where: str) -> None:
    for i, transform in enumerate(transforms, start=1):
        expected = group_input_width(cfg, in_channels, i)
        if transform.in_width != expected or transform.k != cfg.k:
            raise InvalidArgumentError(
                f"seqconv.{where}: F_{i} expects {transform.in_width} -> {transform.k} channels, "
                f"config needs {expected} -> {cfg.k}"
            )


def seqconv_forward(x0: Tensor, cfg: SeqConvConfig, params, mode: Mode = "train") -> Tensor:
    """Dense aggregation: x_i = F_i([x_0, x_1, ..., x_{i-1}]); returns [x_1, ..., x_g]."""
    if cfg.windowed:
        raise InvalidArgumentError("seqconv.seqconv_forward: config is windowed, use wseqconv_forward")
    transforms = _transforms(cfg, params)
    _check_widths(cfg, x0.shape[1], transforms, "seqconv_forward")
    outputs: List[Tensor] = []
    for transform in transforms:
        aggregate = ops.concat_channels([x0] + outputs) if outputs else x0
        outputs.append(transform(aggregate, mode))
    return ops.concat_channels(outputs)


def wseqconv_forward(x0: Tensor, cfg: SeqConvConfig, params, mode: Mode = "train") -> Tensor:
    """Windowed aggregation: x_i = F_i([x_(i-g'), ..., x_(i-1)]) with input groups at positions <= 0."""
    if not cfg.windowed:
        raise InvalidArgumentError("seqconv.wseqconv_forward: config is dense, use seqconv_forward")
    transforms = _transforms(cfg, params)
    in_groups = input_groups(cfg, x0.shape[1])
    window = window_length(cfg, x0.shape[1])
    _check_widths(cfg, x0.shape[1], transforms, "wseqconv_forward")

    outputs: List[Tensor] = []
    for i, transform in enumerate(transforms, start=1):
        lo, hi = window_positions(i, window, in_groups)
        parts: List[Tensor] = []
        if lo <= 0:
            start = (lo - (1 - in_groups)) * cfg.k
            parts.append(x0 if start == 0 else ops.slice_channels(x0, start, x0.shape[1]))
        parts.extend(outputs[max(lo, 1) - 1 : hi])
        aggregate = parts[0] if len(parts) == 1 else ops.concat_channels(parts)
        outputs.append(transform(aggregate, mode))
    return ops.concat_channels(outputs)


def masked_dense_forward(x0: Tensor, cfg: SeqConvConfig, params, mode: Mode = "train") -> Tensor:
    """Windowed layer evaluated as a dense layer on masked inputs with zero-padded kernels.

    F_i receives [x'_0, x_1, ..., x_(i-1)] multiplied channel-wise by the window
    mask; its reading kernel is the windowed kernel scattered into a dense-width
    kernel whose out-of-window slices are zero.
    """
    transforms = _transforms(cfg, params)
    in_groups = input_groups(cfg, x0.shape[1])
    window = window_length(cfg, x0.shape[1])
    k = cfg.k

    outputs: List[Tensor] = []
    for i, transform in enumerate(transforms, start=1):
        aggregate = ops.concat_channels([x0] + outputs) if outputs else x0
        mask = np.repeat(window_mask(i, window, in_groups), k)
        masked = ops.mask_channels(aggregate, mask)

        lo, _ = window_positions(i, window, in_groups)
        weight = transform.reading_conv.weight.data
        dense = np.zeros((weight.shape[0], aggregate.shape[1]) + weight.shape[2:], dtype=weight.dtype)
        offset = (lo - (1 - in_groups)) * k
        dense[:, offset : offset + weight.shape[1]] = weight
        outputs.append(transform(masked, mode, reading_weight=Tensor.wrap(dense)))
    return ops.concat_channels(outputs)
