# File: seqnet/services/data.py
# CIFAR binary ingestion, augmentation, channel normalization, synthetic datasets and batch loading

import queue
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from seqnet.src.errors import CorruptFileError, DataError, DegenerateChannelError, InvalidArgumentError

logger = structlog.get_logger(__name__)

# --- Configuration ---
CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE
PAD = 4
CIFAR10_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST = "test_batch.bin"
CIFAR100_TRAIN = "train.bin"
CIFAR100_TEST = "test.bin"


@dataclass
class Dataset:
    """Images N x C x H x W (values in [0, 1] until normalized) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    classes: int
    channel_mean: Optional[np.ndarray] = None
    channel_std: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.images.ndim != 4:
            raise InvalidArgumentError(f"data.Dataset: images must be N x C x H x W, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise InvalidArgumentError(
                f"data.Dataset: {len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise InvalidArgumentError(f"data.Dataset: labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def geometry(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def normalized(self) -> bool:
        return self.channel_mean is not None

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, images=self.images[indices], labels=self.labels[indices])


# --- CIFAR binary format ---


def _read_records(path: Path, label_bytes: int, classes: int) -> Tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise DataError(f"data.load_cifar_binary: file not found: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    record = label_bytes + CIFAR_PIXELS
    remainder = raw.size % record
    if remainder:
        raise CorruptFileError(
            f"data.load_cifar_binary: size {raw.size} is not a multiple of the {record}-byte record",
            path=str(path),
            offset=raw.size - remainder,
        )
    records = raw.reshape(-1, record)
    labels = records[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        raise CorruptFileError(
            f"data.load_cifar_binary: label {labels[bad[0]]} >= class count {classes}",
            path=str(path),
            offset=int(bad[0]) * record + label_bytes - 1,
        )
    images = records[:, label_bytes:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return images, labels


def load_cifar_binary(paths: Union[str, Path, Sequence[Union[str, Path]]], label_bytes: int = 1,
                      classes: Optional[int] = None) -> Dataset:
    """Parse CIFAR "binary version" files; 2 label bytes means CIFAR-100 (coarse, fine) and the fine one is kept."""
    if label_bytes not in (1, 2):
        raise InvalidArgumentError(f"data.load_cifar_binary: label_bytes must be 1 or 2, got {label_bytes}")
    classes = classes or (10 if label_bytes == 1 else 100)
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        block, block_labels = _read_records(Path(path), label_bytes, classes)
        images.append(block)
        labels.append(block_labels)
        logger.info("data.load_cifar_binary: file loaded", path=str(path), samples=len(block_labels))
    pixels = np.concatenate(images) if images else np.zeros((0, 3, CIFAR_SIDE, CIFAR_SIDE), np.uint8)
    return Dataset(
        images=pixels.astype(np.float32) / np.float32(255.0),
        labels=np.concatenate(labels) if labels else np.zeros(0, np.int64),
        classes=classes,
    )


def dataset_to_records(dataset: Dataset, label_bytes: int = 1) -> bytes:
    """Serialize an un-normalized 3 x 32 x 32 dataset back into CIFAR record bytes."""
    if dataset.normalized:
        raise InvalidArgumentError("data.dataset_to_records: dataset is normalized, records hold raw pixels")
    if dataset.geometry != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise InvalidArgumentError(f"data.dataset_to_records: need 3x32x32 images, got {dataset.geometry}")
    pixels = np.rint(np.clip(dataset.images, 0, 1) * 255).astype(np.uint8).reshape(len(dataset), -1)
    label_block = np.zeros((len(dataset), label_bytes), dtype=np.uint8)
    label_block[:, -1] = dataset.labels.astype(np.uint8)
    return np.concatenate([label_block, pixels], axis=1).tobytes()


def write_cifar_binary(dataset: Dataset, path: Union[str, Path], label_bytes: int = 1) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dataset_to_records(dataset, label_bytes))
    return path


# --- Augmentation ---


def augment_with(image: np.ndarray, dy: int, dx: int, flip: bool, fill: Optional[np.ndarray] = None) -> np.ndarray:
    """Crop the padded image at offset (dy, dx), then optionally mirror horizontally.

    The border is the per-channel ``fill`` value, black (0) when omitted.
    """
    channels, height, width = image.shape
    if not (0 <= dy <= 2 * PAD and 0 <= dx <= 2 * PAD):
        raise InvalidArgumentError(f"data.augment_with: offsets must lie in [0, {2 * PAD}], got ({dy}, {dx})")
    padded = np.zeros((channels, height + 2 * PAD, width + 2 * PAD), dtype=image.dtype)
    if fill is not None:
        padded[...] = np.asarray(fill, dtype=image.dtype)[:, None, None]
    padded[:, PAD : PAD + height, PAD : PAD + width] = image
    out = padded[:, dy : dy + height, dx : dx + width]
    return np.ascontiguousarray(out[:, :, ::-1] if flip else out)


def augment(image: np.ndarray, rng: np.random.Generator, fill: Optional[np.ndarray] = None) -> np.ndarray:
    """Pad 4, random crop back to the original size, horizontal flip with probability 0.5."""
    dy, dx = rng.integers(0, 2 * PAD + 1, size=2)
    return augment_with(image, int(dy), int(dx), bool(rng.random() < 0.5), fill)


def augment_batch(images: np.ndarray, rng: np.random.Generator, fill: Optional[np.ndarray] = None) -> np.ndarray:
    return np.stack([augment(image, rng, fill) for image in images]) if len(images) else images


def black_pixel(dataset: Dataset) -> np.ndarray:
    """Per-channel value of a zero pixel in the dataset's current scale."""
    if not dataset.normalized:
        return np.zeros(dataset.geometry[0])
    return -dataset.channel_mean / dataset.channel_std


# --- Normalization ---


def compute_channel_stats(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    images = dataset.images.astype(np.float64)
    return images.mean(axis=(0, 2, 3)), images.std(axis=(0, 2, 3))


def normalize(dataset: Dataset, stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Dataset:
    """x <- (x - mean_c) / std_c; stats default to the dataset's own (use the training split's for test data)."""
    mean, std = stats if stats is not None else compute_channel_stats(dataset)
    degenerate = np.flatnonzero(np.asarray(std) == 0)
    if degenerate.size:
        raise DegenerateChannelError(
            f"data.normalize: channel {int(degenerate[0])} has zero standard deviation"
        )
    images = (dataset.images - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(
        dataset,
        images=images.astype(np.float32),
        channel_mean=np.asarray(mean, dtype=np.float64),
        channel_std=np.asarray(std, dtype=np.float64),
    )


# --- Synthetic data and splits ---


def synthetic_classification(classes: int, n: int, geometry: Tuple[int, int, int] = (3, 32, 32),
                             seed: int = 0, noise: float = 0.1) -> Dataset:
    """Separable images: each class has its own colour offset and stripe texture, plus seeded noise."""
    if classes < 2 or n < classes:
        raise InvalidArgumentError(f"data.synthetic_classification: need classes >= 2 and n >= classes, got {classes}, {n}")
    channels, height, width = geometry
    # class prototypes come from a fixed stream so every seed shares them
    proto_rng = np.random.default_rng(1_000_003 + classes)
    rows = np.arange(height)[:, None] / height
    cols = np.arange(width)[None, :] / width
    offsets = proto_rng.uniform(-0.2, 0.2, size=(classes, channels))
    freqs = proto_rng.integers(1, 4, size=(classes, 2))
    phases = proto_rng.uniform(0, 2 * np.pi, size=(classes, channels))
    prototypes = np.empty((classes, channels, height, width))
    for label in range(classes):
        wave = 2 * np.pi * (freqs[label, 0] * rows + freqs[label, 1] * cols)
        for channel in range(channels):
            stripes = 0.15 * np.sin(wave + phases[label, channel])
            prototypes[label, channel] = 0.5 + offsets[label, channel] + stripes

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    images = prototypes[labels] + rng.normal(0.0, noise, size=(n, channels, height, width))
    return Dataset(images=np.clip(images, 0, 1).astype(np.float32), labels=labels, classes=classes)


def split_validation(dataset: Dataset, n_val: int, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seed-deterministic disjoint (train, validation) split."""
    if not 0 < n_val < len(dataset):
        raise InvalidArgumentError(f"data.split_validation: need 0 < n_val < {len(dataset)}, got {n_val}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(order[n_val:])), dataset.subset(np.sort(order[:n_val]))


def load_dataset(source: str) -> Tuple[Dataset, Optional[Dataset]]:
    """Resolve a data source to (train, test).

    Accepted forms: a CIFAR-10 or CIFAR-100 binary directory, a single binary
    file (train only) or ``synthetic:<classes>:<n>[:<size>]``.
    """
    if source.startswith("synthetic:"):
        parts = source.split(":")[1:]
        try:
            classes, n = int(parts[0]), int(parts[1])
            size = int(parts[2]) if len(parts) > 2 else CIFAR_SIDE
        except (IndexError, ValueError) as exc:
            raise DataError(f"data.load_dataset: expected synthetic:<classes>:<n>[:<size>], got '{source}'") from exc
        geometry = (3, size, size)
        train = synthetic_classification(classes, n, geometry, seed=0)
        test = synthetic_classification(classes, max(classes, n // 5), geometry, seed=1)
        return train, test

    path = Path(source)
    if path.is_file():
        return load_cifar_binary([path]), None
    if not path.is_dir():
        raise DataError(f"data.load_dataset: no such file or directory: {source}")
    if (path / CIFAR10_TRAIN[0]).is_file():
        train_files = [path / name for name in CIFAR10_TRAIN if (path / name).is_file()]
        test = load_cifar_binary(path / CIFAR10_TEST) if (path / CIFAR10_TEST).is_file() else None
        return load_cifar_binary(train_files), test
    if (path / CIFAR100_TRAIN).is_file():
        test_path = path / CIFAR100_TEST
        test = load_cifar_binary(test_path, label_bytes=2) if test_path.is_file() else None
        return load_cifar_binary(path / CIFAR100_TRAIN, label_bytes=2), test
    if any(entry.suffix.lower() in (".jpeg", ".jpg", ".png") for entry in path.rglob("*") if entry.is_file()):
        raise DataError(f"data.load_dataset: image-directory datasets are not supported: {source}")
    raise DataError(f"data.load_dataset: no CIFAR binary batches found in {source}")


# --- Batching ---


class BatchLoader:
    """Seeded mini-batches for one dataset, optionally augmented and produced on a background thread.

    Every batch draws augmentation randomness from a generator seeded with
    (seed, epoch, batch index), so threaded and inline loading give the same batches.
    """

    _DONE = object()

    def __init__(self, dataset: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True,
                 augment: bool = False, prefetch: int = 0):
        if batch_size < 1:
            raise InvalidArgumentError(f"data.BatchLoader: batch size must be >= 1, got {batch_size}")
        if len(dataset) == 0:
            raise DataError("data.BatchLoader: dataset is empty")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.augment = augment
        self.prefetch = prefetch
        self.fill = black_pixel(dataset)

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def batch_sizes(self) -> List[int]:
        full, rest = divmod(len(self.dataset), self.batch_size)
        return [self.batch_size] * full + ([rest] if rest else [])

    def _order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.dataset))
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))

    def _make(self, epoch: int, index: int, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        images = self.dataset.images[indices]
        if self.augment:
            images = augment_batch(images, np.random.default_rng([self.seed, epoch, index]), self.fill)
        return images, self.dataset.labels[indices]

    def epoch(self, epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = self._order(epoch)
        chunks = [order[i : i + self.batch_size] for i in range(0, len(order), self.batch_size)]
        if self.prefetch <= 0:
            for index, chunk in enumerate(chunks):
                yield self._make(epoch, index, chunk)
            return

        buffer: "queue.Queue" = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()

        def produce():
            try:
                for index, chunk in enumerate(chunks):
                    if stop.is_set():
                        return
                    buffer.put(self._make(epoch, index, chunk))
            except Exception as exc:  # surfaced on the consumer side
                buffer.put(exc)
            finally:
                buffer.put(self._DONE)

        worker = threading.Thread(target=produce, name=f"batch-loader-{epoch}", daemon=True)
        worker.start()
        try:
            while True:
                item = buffer.get()
                if item is self._DONE:
                    break
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            stop.set()
            while worker.is_alive():
                try:
                    buffer.get_nowait()
                except queue.Empty:
                    worker.join(timeout=0.05)
