# File: seqnet/src/builder.py
# Declarative network specs, CIFAR/ImageNet templates, complexity reports and layer listings

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from seqnet.src.blocks import DownsampleBlockSpec, ResidualBlockSpec
from seqnet.src.errors import ConfigError, InvalidArgumentError
from seqnet.src.seqconv import SeqConvConfig, param_shapes

logger = structlog.get_logger(__name__)

# --- Configuration ---
GMAC_UNIT = 2 ** 30
IMAGENET_NAMES = ("SeqResNeXt-24", "SeqResNet-B42", "SeqResNet-B22")


class ConvSpec(BaseModel):
    """Plain Conv-BN-ReLU stem layer."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    in_channels: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    kernel: int = Field(default=3, ge=1)
    stride: int = Field(default=1, ge=1)
    groups: int = Field(default=1, ge=1)

    @property
    def padding(self) -> int:
        return self.kernel // 2


class InputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    channels: int = Field(default=3, ge=1)
    height: int = Field(default=32, ge=1)
    width: int = Field(default=32, ge=1)


class StageSpec(BaseModel):
    """One stage: optional dense entry layer, optional down-sampling block, then N residual blocks."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    width: int = Field(ge=1)
    k: int = Field(ge=1)
    c: int = Field(default=1, ge=1)
    transform: Literal["basic", "bottleneck"] = "basic"
    blocks: int = Field(default=1, ge=0)
    first_layer_dense: bool = False
    extension_width: int = Field(default=0, ge=0)
    entry_k: Optional[int] = Field(default=None, ge=1)
    entry_c: Optional[int] = Field(default=None, ge=1)
    downsize_groups: Optional[int] = Field(default=None, ge=1)
    windowed: bool = True

    @property
    def ek(self) -> int:
        return self.entry_k or self.k

    @property
    def ec(self) -> int:
        return self.entry_c or self.c


class HeadSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    width: int = Field(ge=1)
    classes: int = Field(ge=2)


class NetworkSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "custom"
    input: InputSpec = InputSpec()
    stem: List[ConvSpec] = []
    stages: List[StageSpec] = []
    head: Optional[HeadSpec] = None
    dropout_rate: float = Field(default=0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_chain(self) -> "NetworkSpec":
        width = self.input.channels
        for index, conv in enumerate(self.stem):
            if conv.in_channels != width:
                raise ValueError(f"stem conv {index} expects {conv.in_channels} channels, receives {width}")
            width = conv.out_channels
        for stage in self.stages:
            _check_stage(stage, width)
            width = stage.width
        return self

    @property
    def feature_width(self) -> int:
        if self.stages:
            return self.stages[-1].width
        return self.stem[-1].out_channels if self.stem else self.input.channels


def _check_stage(stage: StageSpec, in_width: int) -> None:
    where = f"stage {stage.name}"
    if stage.first_layer_dense and stage.extension_width:
        raise ValueError(f"{where}: a stage has either a dense entry layer or an extension, not both")
    if stage.first_layer_dense:
        if stage.width % stage.ek:
            raise ValueError(f"{where}: width {stage.width} not divisible by entry k={stage.ek}")
    elif stage.extension_width:
        if in_width + stage.extension_width != stage.width:
            raise ValueError(
                f"{where}: input width {in_width} + extension {stage.extension_width} != stage width {stage.width}"
            )
        if stage.extension_width % stage.ek:
            raise ValueError(f"{where}: extension width {stage.extension_width} not divisible by k={stage.ek}")
        if stage.windowed and in_width % stage.ek:
            raise ValueError(f"{where}: input width {in_width} not divisible by k={stage.ek}")
        if stage.downsize_groups is None:
            raise ValueError(f"{where}: an extension layer needs downsize_groups")
    elif in_width != stage.width:
        raise ValueError(f"{where}: input width {in_width} != stage width {stage.width} and no layer widens it")
    if stage.ek % stage.ec:
        raise ValueError(f"{where}: entry k={stage.ek} not divisible by c={stage.ec}")
    if stage.downsize_groups is not None and stage.width % stage.downsize_groups:
        raise ValueError(f"{where}: downsize groups {stage.downsize_groups} do not divide width {stage.width}")
    if stage.blocks:
        if stage.width % stage.k:
            raise ValueError(f"{where}: width {stage.width} not divisible by k={stage.k}")
        if stage.k % stage.c:
            raise ValueError(f"{where}: k={stage.k} not divisible by c={stage.c}")


# --- Stage decomposition ---


@dataclass(frozen=True)
class StagePlan:
    name: str
    in_width: int
    entry: Optional[SeqConvConfig]
    downsample: Optional[DownsampleBlockSpec]
    blocks: Tuple[ResidualBlockSpec, ...]


def stage_plans(spec: NetworkSpec) -> List[StagePlan]:
    plans = []
    width = spec.stem[-1].out_channels if spec.stem else spec.input.channels
    for stage in spec.stages:
        entry = None
        if stage.first_layer_dense:
            entry = SeqConvConfig(
                groups=stage.width // stage.ek, k=stage.ek, c=stage.ec, transform=stage.transform, windowed=False
            )
        downsample = None
        if stage.extension_width or stage.downsize_groups:
            extension = None
            if stage.extension_width:
                extension = SeqConvConfig(
                    groups=stage.extension_width // stage.ek,
                    k=stage.ek,
                    c=stage.ec,
                    transform=stage.transform,
                    windowed=stage.windowed,
                )
            downsample = DownsampleBlockSpec(
                in_width=stage.width - stage.extension_width,
                extension=extension,
                downsize_groups=stage.downsize_groups or 1,
            )
        blocks: Tuple[ResidualBlockSpec, ...] = ()
        if stage.blocks:
            block = ResidualBlockSpec.uniform(stage.width, stage.k, stage.c, stage.transform, stage.windowed)
            blocks = (block,) * stage.blocks
        plans.append(StagePlan(stage.name, width, entry, downsample, blocks))
        width = stage.width
    return plans


# --- Templates ---


def _blocks_per_stage(n: Union[int, Sequence[int]], stages: int) -> Tuple[int, ...]:
    if isinstance(n, int):
        return (n,) * stages
    n = tuple(int(v) for v in n)
    if len(n) != stages:
        raise InvalidArgumentError(f"builder: need {stages} block counts, got {len(n)}")
    return n


def build_cifar_template(
    k: int,
    r: int,
    n: Union[int, Sequence[int]] = 1,
    variant: Literal["basic", "bottleneck"] = "basic",
    classes: int = 10,
    windowed: bool = True,
    dropout_rate: float = 0.0,
) -> NetworkSpec:
    """3x3x16 stem, stages of width 16r/32r/48r, 1x1 conv of 48r, GAP and classifier."""
    if variant not in ("basic", "bottleneck"):
        raise InvalidArgumentError(f"builder.build_cifar_template: unknown variant '{variant}'")
    if k < 1 or r < 1:
        raise InvalidArgumentError(f"builder.build_cifar_template: need k >= 1 and r >= 1, got k={k}, r={r}")
    blocks = _blocks_per_stage(n, 3)
    for name, width in (("conv2", 16 * r), ("conv3", 32 * r), ("conv4", 48 * r)):
        if width % k:
            raise InvalidArgumentError(
                f"builder.build_cifar_template: stage {name} width {width} not divisible by k={k}"
            )
    common = dict(k=k, transform=variant, windowed=windowed)
    stages = [
        StageSpec(name="conv2", width=16 * r, blocks=blocks[0], first_layer_dense=True, **common),
        StageSpec(name="conv3", width=32 * r, blocks=blocks[1], extension_width=16 * r,
                  downsize_groups=32 * r // k, **common),
        StageSpec(name="conv4", width=48 * r, blocks=blocks[2], extension_width=16 * r,
                  downsize_groups=48 * r // k, **common),
    ]
    label = "SeqResNet" if variant == "basic" else "SeqResNet-B"
    spec = NetworkSpec(
        name=f"{label}(k={k},r={r},N={'/'.join(map(str, blocks))})",
        input=InputSpec(channels=3, height=32, width=32),
        stem=[ConvSpec(in_channels=3, out_channels=16)],
        stages=stages,
        head=HeadSpec(width=48 * r, classes=classes),
        dropout_rate=dropout_rate,
    )
    logger.debug("builder.build_cifar_template: spec built", name=spec.name)
    return spec


def ablation_setting(name: str, classes: int = 10, dropout_rate: float = 0.0) -> NetworkSpec:
    """Hyperparameter settings S1-S4 of the CIFAR ablation."""
    settings = {
        "S1": dict(k=8, r=4, n=1),
        "S2": dict(k=8, r=3, n=(1, 2, 1), windowed=False),
        "S3": dict(k=16, r=4, n=1),
        "S4": dict(k=16, r=3, n=(1, 2, 2)),
    }
    if name not in settings:
        raise InvalidArgumentError(f"builder.ablation_setting: unknown setting '{name}', valid: {list(settings)}")
    return build_cifar_template(classes=classes, dropout_rate=dropout_rate, **settings[name])


def _imagenet_stage(name, width, k, c, blocks, entry_k, entry_c, downsize_groups, extension_width=0, dense=False):
    return StageSpec(
        name=name,
        width=width,
        k=k,
        c=c,
        transform="bottleneck",
        blocks=blocks,
        first_layer_dense=dense,
        extension_width=extension_width,
        entry_k=entry_k,
        entry_c=entry_c,
        downsize_groups=downsize_groups,
    )


def build_imagenet_template(name: str) -> NetworkSpec:
    """Four bottleneck stages behind a two-conv stem, 1x1 head conv, GAP and 1000-way classifier."""
    if name == "SeqResNeXt-24":
        stages = [
            _imagenet_stage("conv2", 256, 32, 8, 1, 32, 8, 64, dense=True),
            _imagenet_stage("conv3", 512, 64, 8, 1, 32, 8, 64, extension_width=256),
            _imagenet_stage("conv4", 1024, 64, 4, 3, 64, 8, 64, extension_width=512),
            _imagenet_stage("conv5", 2048, 128, 4, 1, 64, 4, 64, extension_width=1024),
        ]
        head = 2048
    elif name in ("SeqResNet-B42", "SeqResNet-B22"):
        blocks = (3, 4, 5, 3) if name == "SeqResNet-B42" else (1, 1, 2, 1)
        stages = [
            _imagenet_stage("conv2", 128, 32, 1, blocks[0], 32, 1, 4, dense=True),
            _imagenet_stage("conv3", 256, 64, 1, blocks[1], 32, 1, 4, extension_width=128),
            _imagenet_stage("conv4", 512, 64, 1, blocks[2], 64, 1, 8, extension_width=256),
            _imagenet_stage("conv5", 1024, 128, 1, blocks[3], 64, 1, 8, extension_width=512),
        ]
        head = 1024
    else:
        raise InvalidArgumentError(
            f"builder.build_imagenet_template: unknown network '{name}', valid names: {', '.join(IMAGENET_NAMES)}"
        )
    return NetworkSpec(
        name=name,
        input=InputSpec(channels=3, height=224, width=224),
        stem=[ConvSpec(in_channels=3, out_channels=32, stride=2), ConvSpec(in_channels=32, out_channels=32)],
        stages=stages,
        head=HeadSpec(width=head, classes=1000),
    )


# --- Complexity ---


@dataclass(frozen=True)
class LayerRecord:
    path: str
    stage: str
    label: str
    in_channels: int
    out_channels: int
    out_hw: Tuple[int, int]
    conv_params: int = 0
    bn_params: int = 0
    fc_params: int = 0
    macs: int = 0
    detail: str = ""

    @property
    def params(self) -> int:
        return self.conv_params + self.bn_params + self.fc_params


class StageComplexity(BaseModel):
    name: str
    params: int
    macs: int


class ComplexityReport(BaseModel):
    name: str = ""
    total_params: int = 0
    conv_params: int = 0
    bn_params: int = 0
    fc_params: int = 0
    macs: int = 0
    geometry: Tuple[int, int] = (0, 0)
    stages: List[StageComplexity] = []

    @property
    def gmacs(self) -> float:
        """MACs in units of 2^30, the unit published GFLOP figures are given in."""
        return self.macs / GMAC_UNIT

    def table(self):
        import pandas as pd

        frame = pd.DataFrame([s.model_dump() for s in self.stages], columns=["name", "params", "macs"])
        frame.loc[len(frame)] = ["total", self.total_params, self.macs]
        return frame


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size + 2 * (kernel // 2) - kernel) // stride + 1


def _seqconv_record(path, stage, cfg: SeqConvConfig, in_channels, hw) -> LayerRecord:
    conv = bn = macs = 0
    for _, shape in param_shapes(cfg, in_channels):
        count = int(np.prod(shape))
        if len(shape) == 4:
            conv += count
            macs += hw[0] * hw[1] * count
        else:
            bn += count
    mode = f"windowed g'={cfg.window or in_channels // cfg.k}" if cfg.windowed else "dense"
    label = "WSeqConv" if cfg.windowed else "SeqConv"
    marker = "blue*" if cfg.windowed else "red*"
    detail = f"{mode} {marker} g={cfg.groups} k={cfg.k} c={cfg.c} {cfg.transform}"
    return LayerRecord(path, stage, label, in_channels, cfg.width, hw, conv, bn, 0, macs, detail)


def _plain_conv_record(path, stage, label, cin, cout, kernel, stride, groups, hw) -> LayerRecord:
    out_hw = (_conv_out(hw[0], kernel, stride), _conv_out(hw[1], kernel, stride))
    conv = cout * (cin // groups) * kernel * kernel
    detail = f"{kernel}x{kernel} stride={stride} groups={groups}"
    return LayerRecord(path, stage, label, cin, cout, out_hw, conv, 2 * cout, 0, out_hw[0] * out_hw[1] * conv, detail)


def layer_records(spec: NetworkSpec, geometry: Optional[Tuple[int, int]] = None) -> Iterator[LayerRecord]:
    """Every layer in forward order with its parameter and MAC counts at ``geometry``."""
    hw = geometry or (spec.input.height, spec.input.width)
    for index, conv in enumerate(spec.stem):
        record = _plain_conv_record(
            f"stem{index}", "stem", "conv", conv.in_channels, conv.out_channels,
            conv.kernel, conv.stride, conv.groups, hw,
        )
        hw = record.out_hw
        yield record
    for s_index, plan in enumerate(stage_plans(spec)):
        prefix = f"stage{s_index}"
        if plan.entry is not None:
            yield _seqconv_record(f"{prefix}/entry", plan.name, plan.entry, plan.in_width, hw)
        if plan.downsample is not None:
            down = plan.downsample
            if down.extension is not None:
                yield _seqconv_record(f"{prefix}/downsample/extension", plan.name, down.extension, down.in_width, hw)
            record = _plain_conv_record(
                f"{prefix}/downsample/downsize", plan.name, "downsize", down.out_width, down.out_width,
                3, 2, down.downsize_groups, hw,
            )
            hw = record.out_hw
            yield record
        for b_index, block in enumerate(plan.blocks):
            for layer_name, cfg in (("layer1", block.layer1), ("layer2", block.layer2)):
                yield _seqconv_record(f"{prefix}/block{b_index}/{layer_name}", plan.name, cfg, block.width, hw)
    if spec.head is not None:
        width = spec.feature_width
        yield _plain_conv_record("head", "head", "conv", width, spec.head.width, 1, 1, 1, hw)
        fc = spec.head.width * spec.head.classes
        yield LayerRecord(
            "fc", "head", "fc", spec.head.width, spec.head.classes, (1, 1),
            fc_params=fc + spec.head.classes, macs=fc, detail="global average pool, fc, softmax",
        )


def _report(name: str, records: Sequence[LayerRecord], geometry: Tuple[int, int]) -> ComplexityReport:
    stages: Dict[str, List[int]] = {}
    for record in records:
        totals = stages.setdefault(record.stage, [0, 0])
        totals[0] += record.params
        totals[1] += record.macs
    conv = sum(r.conv_params for r in records)
    bn = sum(r.bn_params for r in records)
    fc = sum(r.fc_params for r in records)
    return ComplexityReport(
        name=name,
        total_params=conv + bn + fc,
        conv_params=conv,
        bn_params=bn,
        fc_params=fc,
        macs=sum(r.macs for r in records),
        geometry=geometry,
        stages=[StageComplexity(name=key, params=v[0], macs=v[1]) for key, v in stages.items()],
    )


def count_params(spec: NetworkSpec, geometry: Optional[Tuple[int, int]] = None) -> ComplexityReport:
    """Exact parameter counts (conv kernels, BN affine, classifier weight and bias) plus MACs."""
    geometry = geometry or (spec.input.height, spec.input.width)
    return _report(spec.name, list(layer_records(spec, geometry)), geometry)


def count_macs(spec: NetworkSpec, geometry: Optional[Tuple[int, int]] = None) -> int:
    """Multiply-accumulates of every conv and linear op for a batch of one image."""
    return sum(record.macs for record in layer_records(spec, geometry))


def reference_complexity(name: str = "ResNet-50") -> ComplexityReport:
    """Complexity of the ResNet-50 baseline at 224x224, the anchor of the MAC unit."""
    if name != "ResNet-50":
        raise InvalidArgumentError(f"builder.reference_complexity: only ResNet-50 is available, got '{name}'")
    records: List[LayerRecord] = []
    stem = _plain_conv_record("stem/0", "stem", "conv", 3, 64, 7, 2, 1, (224, 224))
    records.append(stem)
    hw = (_conv_out(stem.out_hw[0], 3, 2), _conv_out(stem.out_hw[1], 3, 2))
    in_width = 64
    for s_index, (mid, out, blocks, stride) in enumerate(((64, 256, 3, 1), (128, 512, 4, 2),
                                                          (256, 1024, 6, 2), (512, 2048, 3, 2))):
        stage = f"conv{s_index + 2}"
        for b_index in range(blocks):
            s = stride if b_index == 0 else 1
            path = f"{stage}/block{b_index}"
            first = _plain_conv_record(f"{path}/reduce", stage, "conv", in_width, mid, 1, 1, 1, hw)
            middle = _plain_conv_record(f"{path}/conv3x3", stage, "conv", mid, mid, 3, s, 1, hw)
            last = _plain_conv_record(f"{path}/expand", stage, "conv", mid, out, 1, 1, 1, middle.out_hw)
            records += [first, middle, last]
            if b_index == 0:
                records.append(_plain_conv_record(f"{path}/shortcut", stage, "conv", in_width, out, 1, s, 1, hw))
            hw = middle.out_hw
            in_width = out
    records.append(LayerRecord("head/fc", "head", "fc", 2048, 1000, (1, 1), fc_params=2048 * 1000 + 1000,
                               macs=2048 * 1000))
    return _report(name, records, (224, 224))


# --- Listing and serialization ---


def graph_dump(spec: NetworkSpec) -> str:
    """Deterministic one-line-per-layer listing with widths, groups, windows and star markings."""
    lines = [f"# {spec.name} input={spec.input.channels}x{spec.input.height}x{spec.input.width}"]
    names = {f"stage{i}": stage.name for i, stage in enumerate(spec.stages)}
    for record in layer_records(spec):
        top = record.path.split("/")[0]
        stage = names.get(top, record.stage)
        lines.append(
            f"{record.path:<24} {stage:<6} {record.label:<9} {record.in_channels:>5} -> {record.out_channels:<5} "
            f"out={record.out_channels}x{record.out_hw[0]}x{record.out_hw[1]:<4} {record.detail}"
        )
    return "\n".join(lines) + "\n"


def spec_to_json(spec: NetworkSpec) -> str:
    return spec.model_dump_json(indent=2)


def spec_from_dict(payload: dict, root: str = "") -> NetworkSpec:
    try:
        return NetworkSpec.model_validate(payload)
    except ValidationError as exc:
        raise config_error_from(exc, root) from exc


def spec_from_json(text: str) -> NetworkSpec:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    return spec_from_dict(payload)


def save_spec(spec: NetworkSpec, path: Union[str, Path]) -> None:
    Path(path).write_text(spec_to_json(spec), encoding="utf-8")


def load_spec(path: Union[str, Path]) -> NetworkSpec:
    return spec_from_json(Path(path).read_text(encoding="utf-8"))


def config_error_from(exc: ValidationError, root: str = "") -> ConfigError:
    """First validation failure of ``exc`` as a ConfigError carrying its dotted JSON path."""
    first = exc.errors()[0]
    parts = [root] if root else []
    parts += [str(part) for part in first["loc"]]
    return ConfigError(first["msg"], ".".join(parts) or "<root>")
