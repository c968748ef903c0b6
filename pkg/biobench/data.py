"""Dataset ingestion: CIFAR binary batches, a synthetic shapes set, and subsetting."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np

from biobench.errors import ConfigurationError, DimensionError, IngestionError
from biobench.numerics import make_rng

logger = logging.getLogger(__name__)

Split = Literal["train", "test"]

PIXELS = 3 * 32 * 32

CIFAR_FILES: dict[str, dict[Split, list[str]]] = {
    "cifar10": {
        "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
        "test": ["test_batch.bin"],
    },
    "cifar100": {"train": ["train.bin"], "test": ["test.bin"]},
}
CIFAR_SUBDIRS = {"cifar10": "cifar-10-batches-bin", "cifar100": "cifar-100-binary"}
LABEL_BYTES = {"cifar10": 1, "cifar100": 2}
CLASS_COUNT = {"cifar10": 10, "cifar100": 100}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # N x C x H x W in [0, 1]
    labels: np.ndarray  # N, int64
    class_count: int
    split: Split

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigurationError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def take(self, index: np.ndarray) -> "Dataset":
        return replace(self, images=self.images[index], labels=self.labels[index])

    def with_images(self, images: np.ndarray) -> "Dataset":
        return replace(self, images=images)


# --- CIFAR ---


def _resolve_dir(root: Path, variant: str) -> Path:
    nested = root / CIFAR_SUBDIRS[variant]
    return nested if nested.is_dir() else root


def read_cifar_file(path: Path, variant: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch file: label byte(s) then 3072 channel-major pixel bytes."""
    label_bytes = LABEL_BYTES[variant]
    record = label_bytes + PIXELS
    if not path.is_file():
        raise IngestionError(f"{path}: file not found (expected a multiple of {record} bytes)")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % record:
        raise IngestionError(
            f"{path}: {raw.size} bytes is not a whole number of {record}-byte records"
        )
    rows = raw.reshape(-1, record)
    # CIFAR-100 records carry (coarse, fine); the fine label is the class
    labels = rows[:, label_bytes - 1].astype(np.int64)
    images = rows[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar(directory: Path | str, variant: str = "cifar10") -> tuple[Dataset, Dataset]:
    if variant not in CIFAR_FILES:
        raise ConfigurationError(f"unknown CIFAR variant {variant!r}")
    root = _resolve_dir(Path(directory), variant)
    splits = {}
    for split, names in CIFAR_FILES[variant].items():
        parts = [read_cifar_file(root / name, variant) for name in names]
        images = np.concatenate([p[0] for p in parts])
        labels = np.concatenate([p[1] for p in parts])
        splits[split] = Dataset(images, labels, CLASS_COUNT[variant], split)
        logger.info("loaded %s %s: %d records", variant, split, len(labels))
    return splits["train"], splits["test"]


# --- synthetic ---


def _draw_shape(rng: np.random.Generator, label: int, size: int) -> np.ndarray:
    canvas = np.zeros((size, size))
    length = rng.integers(size // 2, size + 1)
    if label == 0:  # horizontal bar
        r, c = rng.integers(0, size), rng.integers(0, size - length + 1)
        canvas[r, c : c + length] = 1.0
    elif label == 1:  # vertical bar
        r, c = rng.integers(0, size - length + 1), rng.integers(0, size)
        canvas[r : r + length, c] = 1.0
    else:  # diagonal
        r, c = rng.integers(0, size - length + 1), rng.integers(0, size - length + 1)
        idx = np.arange(length)
        canvas[r + idx, c + idx] = 1.0
    return canvas


def make_shapes(
    per_class_train: int = 200,
    per_class_test: int = 100,
    seed: int = 0,
    size: int = 8,
    jitter: float = 0.1,
) -> tuple[Dataset, Dataset]:
    """Three-class RGB bars (horizontal, vertical, diagonal) with random colour and jitter."""
    rng = make_rng(seed, "synthetic")

    def _split(per_class: int, split: Split) -> Dataset:
        labels = np.repeat(np.arange(3), per_class)
        images = np.empty((labels.size, 3, size, size))
        for n, label in enumerate(labels):
            colour = rng.uniform(0.5, 1.0, size=3)
            shape = _draw_shape(rng, int(label), size)
            noise = rng.uniform(0.0, jitter, size=(3, size, size))
            images[n] = np.clip(colour[:, None, None] * shape + noise, 0.0, 1.0)
        order = rng.permutation(labels.size)
        return Dataset(images[order], labels[order].astype(np.int64), 3, split)

    return _split(per_class_train, "train"), _split(per_class_test, "test")


# --- subsetting ---


def subset(ds: Dataset, fraction: float, seed: int, stratified: bool = True) -> Dataset:
    """Sample ``floor(fraction * N_c)`` per class (or of the whole set) and shuffle."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    rng = make_rng(seed, "subset")
    if stratified:
        picks = []
        for c in range(ds.class_count):
            members = np.flatnonzero(ds.labels == c)
            if members.size == 0:
                continue
            count = int(np.floor(fraction * members.size))
            if count == 0:
                raise ConfigurationError(
                    f"fraction {fraction} leaves class {c} ({members.size} samples) empty"
                )
            picks.append(rng.choice(members, size=count, replace=False))
        index = np.concatenate(picks)
    else:
        count = int(np.floor(fraction * len(ds)))
        if count == 0:
            raise ConfigurationError(f"fraction {fraction} of {len(ds)} samples is empty")
        index = rng.choice(len(ds), size=count, replace=False)
    return ds.take(rng.permutation(index))
