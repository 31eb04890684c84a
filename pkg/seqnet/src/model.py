# File: seqnet/src/model.py
# Runnable network instantiated from a NetworkSpec: stem, SeqConv stages, head and classifier

from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog

from seqnet.src import ops
from seqnet.src.blocks import DownsampleBlock, ResidualBlock
from seqnet.src.builder import NetworkSpec, stage_plans
from seqnet.src.errors import InvalidArgumentError, InvalidStateError
from seqnet.src.layers import Conv2d, ConvBN, Linear, Module
from seqnet.src.ops import Mode
from seqnet.src.seqconv import SeqConvLayer
from seqnet.src.tensor import Tensor

logger = structlog.get_logger(__name__)


class Stage(Module):
    def __init__(self, name: str, entry: Optional[SeqConvLayer], downsample: Optional[DownsampleBlock],
                 blocks: List[ResidualBlock]):
        self.name = name
        self.entry = entry
        self.downsample = downsample
        self.blocks = blocks

    def children(self):
        items = []
        if self.entry is not None:
            items.append(("entry", self.entry))
        if self.downsample is not None:
            items.append(("downsample", self.downsample))
        items += [(f"block{i}", block) for i, block in enumerate(self.blocks)]
        return items


class SeqNetwork(Module):
    """Network built from a NetworkSpec. Parameters start zeroed; see trainer.init_weights."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.dropout_rate = rate = spec.dropout_rate
        self.stem = [
            ConvBN(Conv2d(c.in_channels, c.out_channels, c.kernel, stride=c.stride, groups=c.groups))
            for c in spec.stem
        ]
        self.stages: List[Stage] = []
        first_seqconv = True
        for plan in stage_plans(spec):
            entry = None
            if plan.entry is not None:
                entry = SeqConvLayer(plan.entry, plan.in_width)
                first_seqconv = False
            downsample = None
            if plan.downsample is not None:
                # an extension that opens the network gets no dropout in front of it
                has_extension = plan.downsample.extension is not None
                downsample = DownsampleBlock(plan.downsample, 0.0 if first_seqconv and has_extension else rate)
                first_seqconv = first_seqconv and not has_extension
            blocks = []
            for index, block_spec in enumerate(plan.blocks):
                block = ResidualBlock(block_spec, rate)
                if first_seqconv and index == 0:
                    block.leading_dropout = False
                blocks.append(block)
                first_seqconv = False
            self.stages.append(Stage(plan.name, entry, downsample, blocks))
        self.head_conv = None
        self.classifier = None
        if spec.head is not None:
            self.head_conv = ConvBN(Conv2d(spec.feature_width, spec.head.width, 1, padding=0))
            self.classifier = Linear(spec.head.width, spec.head.classes)
        logger.info(
            "model.SeqNetwork.__init__: network instantiated",
            name=spec.name,
            parameters=self.parameter_count(),
        )

    def children(self):
        items = [(f"stem{i}", unit) for i, unit in enumerate(self.stem)]
        items += [(f"stage{i}", stage) for i, stage in enumerate(self.stages)]
        if self.head_conv is not None:
            items += [("head", self.head_conv), ("fc", self.classifier)]
        return items

    def residual_blocks(self) -> List[Tuple[str, ResidualBlock]]:
        return [(name, m) for name, m in self.named_modules() if isinstance(m, ResidualBlock)]

    def seqconv_layers(self) -> Dict[str, SeqConvLayer]:
        return {name: m for name, m in self.named_modules() if isinstance(m, SeqConvLayer)}

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters and BN running statistics keyed by path."""
        arrays = {name: tensor.data for name, tensor in self.named_parameters()}
        arrays.update(dict(self.named_buffers()))
        return arrays

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, target in self.state_arrays().items():
            if name not in arrays:
                raise InvalidArgumentError(f"model.SeqNetwork.load_state_arrays: missing array '{name}'")
            if arrays[name].shape != target.shape:
                raise InvalidArgumentError(
                    f"model.SeqNetwork.load_state_arrays: '{name}' has shape {arrays[name].shape}, "
                    f"expected {target.shape}"
                )
            target[...] = arrays[name]
        for _, module in self.named_modules():
            if hasattr(module, "state"):
                module.state.tracked = True

    def features(self, x: Tensor, mode: Mode = "train", rng: Optional[np.random.Generator] = None,
                 skip_blocks: bool = False) -> Tensor:
        """Everything up to the global average pool. ``skip_blocks`` drops every residual body."""
        out = x
        for unit in self.stem:
            out = unit(out, mode)
        for stage in self.stages:
            if stage.entry is not None:
                out = stage.entry(out, mode)
            if stage.downsample is not None:
                out = stage.downsample(out, mode, rng)
            if skip_blocks:
                continue
            for block in stage.blocks:
                out = block(out, mode, rng)
        if self.head_conv is not None:
            if self.dropout_rate > 0:
                out = ops.dropout(out, self.dropout_rate, mode, rng)
            out = self.head_conv(out, mode)
        return out

    def __call__(self, x: Tensor, mode: Mode = "train", rng: Optional[np.random.Generator] = None,
                 skip_blocks: bool = False) -> Tensor:
        if self.classifier is None:
            raise InvalidStateError("model.SeqNetwork.__call__: spec has no head, use features() instead")
        pooled = ops.global_avg_pool(self.features(x, mode, rng, skip_blocks))
        return self.classifier(pooled)
