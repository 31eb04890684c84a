# File: seqnet/services/checkpoint.py
# Binary checkpoint container: magic, version, JSON metadata and named little-endian tensors
#
# Layout (all integers little-endian):
#   8 bytes   magic b"SQCVCKPT"
#   u16       format version
#   u32       metadata length, then UTF-8 JSON metadata
#   u32       tensor count, then per tensor:
#             u16 name length, UTF-8 name, u8 dtype code, u8 ndim, ndim x u32 dims, values

import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import structlog

from seqnet.services.trainer import OptimizerState
from seqnet.src import runtime
from seqnet.src.builder import spec_from_dict
from seqnet.src.errors import ConfigError, CorruptFileError, DataError
from seqnet.src.model import SeqNetwork

logger = structlog.get_logger(__name__)

# --- Configuration ---
MAGIC = b"SQCVCKPT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}
MODEL_PREFIX = "model/"
VELOCITY_PREFIX = "velocity/"
CHECKPOINT_NAME = "checkpoint.sqcv"


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        if array.dtype not in CODES:
            raise DataError(f"checkpoint.save_checkpoint: unsupported dtype {array.dtype} for '{name}'")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<BB", CODES[array.dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=DTYPES[CODES[array.dtype]]).tobytes())
    # write-then-rename so an interrupted save never leaves a truncated checkpoint
    partial = path.with_suffix(path.suffix + ".partial")
    partial.write_bytes(b"".join(chunks))
    partial.replace(path)
    logger.info("checkpoint.save_checkpoint: checkpoint written", path=str(path), tensors=len(tensors))
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise CorruptFileError("checkpoint.load_checkpoint: unexpected end of file", str(self.path), self.offset)
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint.load_checkpoint: checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CorruptFileError("checkpoint.load_checkpoint: bad magic bytes", str(path), 0)
    version, meta_len = reader.unpack("<HI")
    if version != VERSION:
        raise CorruptFileError(f"checkpoint.load_checkpoint: unsupported version {version}", str(path), len(MAGIC))
    meta_offset = reader.offset
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"checkpoint.load_checkpoint: metadata unreadable ({exc})", str(path), meta_offset)

    tensors: Dict[str, np.ndarray] = {}
    (count,) = reader.unpack("<I")
    for _ in range(count):
        start = reader.offset
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, ndim = reader.unpack("<BB")
        if code not in DTYPES:
            raise CorruptFileError(f"checkpoint.load_checkpoint: unknown dtype code {code} for '{name}'",
                                   str(path), start)
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        dtype = DTYPES[code]
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(size * dtype.itemsize), dtype=dtype)
        tensors[name] = values.reshape(shape).astype(dtype.newbyteorder("="))
    if reader.offset != len(reader.raw):
        raise CorruptFileError("checkpoint.load_checkpoint: trailing bytes after last tensor", str(path),
                               reader.offset)
    logger.info("checkpoint.load_checkpoint: checkpoint read", path=str(path), tensors=len(tensors))
    return tensors, meta


# --- Training state ---


def save_training_state(
    path: Union[str, Path],
    network: SeqNetwork,
    state: Optional[OptimizerState] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    """Parameters, BN running statistics and momentum buffers, with the network spec in the metadata."""
    tensors = {MODEL_PREFIX + name: array for name, array in network.state_arrays().items()}
    if state is not None:
        tensors.update({VELOCITY_PREFIX + name: v for name, v in state.velocities.items()})
    return save_checkpoint(path, tensors, {"spec": network.spec.model_dump(mode="json"), **(meta or {})})


def restore_training_state(path: Union[str, Path]) -> Tuple[SeqNetwork, OptimizerState, Dict[str, Any]]:
    tensors, meta = load_checkpoint(path)
    if "spec" not in meta:
        raise CorruptFileError("checkpoint.restore_training_state: metadata carries no network spec", str(path))
    try:
        spec = spec_from_dict(meta["spec"], "spec")
    except ConfigError as exc:
        raise CorruptFileError(f"checkpoint.restore_training_state: stored spec is invalid ({exc})", str(path))

    arrays = {name[len(MODEL_PREFIX):]: a for name, a in tensors.items() if name.startswith(MODEL_PREFIX)}
    velocities = {name[len(VELOCITY_PREFIX):]: a for name, a in tensors.items() if name.startswith(VELOCITY_PREFIX)}
    stored = "double" if any(a.dtype == np.float64 for a in arrays.values()) else "single"
    with runtime.settings(precision=stored):
        network = SeqNetwork(spec)
    try:
        network.load_state_arrays(arrays)
    except ValueError as exc:
        raise CorruptFileError(f"checkpoint.restore_training_state: {exc}", str(path))
    logger.info(
        "checkpoint.restore_training_state: network restored",
        path=str(path),
        name=spec.name,
        epoch=meta.get("epoch"),
        precision=stored,
    )
    return network, OptimizerState(velocities), meta
