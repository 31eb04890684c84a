# File: seqnet/services/run_config.py
# Loads one JSON run config (network, training, data) and reports failures by JSON path

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from seqnet.services.trainer import TrainConfig
from seqnet.src.builder import (
    IMAGENET_NAMES,
    NetworkSpec,
    build_cifar_template,
    build_imagenet_template,
    config_error_from,
    spec_from_dict,
    ablation_setting,
)
from seqnet.src.errors import ConfigError, InvalidArgumentError

logger = structlog.get_logger(__name__)


# --- Network sources ---


class CifarTemplate(BaseModel):
    model_config = ConfigDict(extra="forbid")

    template: Literal["cifar"]
    k: int = Field(ge=1)
    r: int = Field(ge=1)
    n: Union[int, List[int]] = 1
    variant: Literal["basic", "bottleneck"] = "basic"
    classes: int = Field(default=10, ge=2)
    windowed: bool = True
    dropout_rate: float = Field(default=0.0, ge=0, lt=1)

    def build(self) -> NetworkSpec:
        return build_cifar_template(
            self.k, self.r, self.n, self.variant, self.classes, self.windowed, self.dropout_rate
        )


class ImagenetTemplate(BaseModel):
    model_config = ConfigDict(extra="forbid")

    template: Literal["imagenet"]
    name: Literal["SeqResNeXt-24", "SeqResNet-B42", "SeqResNet-B22"]

    def build(self) -> NetworkSpec:
        return build_imagenet_template(self.name)


class AblationTemplate(BaseModel):
    """CIFAR hyperparameter settings S1-S4."""

    model_config = ConfigDict(extra="forbid")

    template: Literal["ablation"]
    setting: Literal["S1", "S2", "S3", "S4"]
    classes: int = Field(default=10, ge=2)
    dropout_rate: float = Field(default=0.0, ge=0, lt=1)

    def build(self) -> NetworkSpec:
        return ablation_setting(self.setting, self.classes, self.dropout_rate)


TEMPLATES = {"cifar": CifarTemplate, "imagenet": ImagenetTemplate, "ablation": AblationTemplate}


# --- Run config ---


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train: Optional[str] = None
    validation: int = Field(default=0, ge=0)


class RunConfig(BaseModel):
    """``network`` holds either ``{"template": ...}`` parameters or ``{"spec": <NetworkSpec>}``."""

    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    network: Dict[str, Any]
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()


def resolve_network(config: RunConfig, root: str = "network") -> NetworkSpec:
    payload = config.network
    if "spec" in payload:
        extra = sorted(set(payload) - {"spec"})
        if extra:
            raise ConfigError(f"'spec' cannot be combined with {extra}", root)
        return spec_from_dict(payload["spec"], f"{root}.spec")

    template = payload.get("template")
    if template not in TEMPLATES:
        raise ConfigError(
            f"expected 'spec' or a template among {sorted(TEMPLATES)}, got {template!r}", f"{root}.template"
        )
    try:
        source = TEMPLATES[template].model_validate(payload)
    except ValidationError as exc:
        raise config_error_from(exc, root) from exc
    try:
        return source.build()
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc), root) from exc


def parse_run_config(payload: Any) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError(f"run config must be a JSON object, got {type(payload).__name__}", "<root>")
    try:
        config = RunConfig.model_validate(payload)
    except ValidationError as exc:
        raise config_error_from(exc) from exc
    resolve_network(config)
    return config


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read, parse and validate ``path``; the network is resolved once so its errors surface here."""
    path = Path(path)
    logger.debug("run_config.load_run_config: loading", path=str(path))
    if not path.is_file():
        raise ConfigError(f"run config not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    config = parse_run_config(payload)
    logger.info("run_config.load_run_config: config loaded", path=str(path), name=config.name)
    return config


def with_overrides(
    config: RunConfig,
    seed: Optional[int] = None,
    precision: Optional[str] = None,
    deterministic: Optional[bool] = None,
    epochs: Optional[int] = None,
) -> RunConfig:
    """Apply command-line overrides to the training section; ``epochs`` must be >= 1 here."""
    update: Dict[str, Any] = {}
    if seed is not None:
        update["seed"] = seed
    if precision is not None:
        update["precision"] = precision
    if deterministic is not None:
        update["deterministic"] = deterministic
    if epochs is not None:
        update["epochs"] = epochs
    if not update:
        return config
    try:
        train = TrainConfig.model_validate({**config.train.model_dump(), **update})
    except ValidationError as exc:
        raise config_error_from(exc, "train") from exc
    return config.model_copy(update={"train": train})


def schema_document() -> Dict[str, Any]:
    """JSON schemas of the run config, the explicit network spec and every template."""
    return {
        "run_config": RunConfig.model_json_schema(),
        "network_spec": NetworkSpec.model_json_schema(),
        "templates": {name: model.model_json_schema() for name, model in TEMPLATES.items()},
        "imagenet_names": list(IMAGENET_NAMES),
    }
