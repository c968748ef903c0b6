"""Input corruption used by the robustness sweeps."""

import logging

import numpy as np

from biobench.data import Dataset
from biobench.errors import ConfigurationError
from biobench.models import NoiseSpec
from biobench.numerics import make_rng

logger = logging.getLogger(__name__)


def _check_level(level: float) -> None:
    if not 0.0 <= level <= 1.0:
        raise ConfigurationError(f"noise level must be in [0, 1], got {level}")


def add_random_noise(ds: Dataset, level: float, seed: int) -> Dataset:
    """Replace each pixel value, with probability ``level``, by a fresh Uniform[0, 1] draw."""
    _check_level(level)
    if level == 0.0:
        return ds
    rng = make_rng(seed, "noise")
    hit = rng.random(ds.images.shape) < level
    fresh = rng.random(ds.images.shape).astype(ds.images.dtype)
    logger.debug("random noise: replaced %d of %d values", int(hit.sum()), hit.size)
    return ds.with_images(np.where(hit, fresh, ds.images))


def _sample_positions(rng: np.random.Generator, rows: int, positions: int, count: int) -> np.ndarray:
    """``count`` distinct indices in ``[0, positions)`` for each of ``rows`` rows."""
    keys = rng.random((rows, positions))
    return np.argsort(keys, axis=1, kind="stable")[:, :count]


def add_pepper_noise(ds: Dataset, level: float, seed: int, per_channel: bool = False) -> Dataset:
    """Zero ``floor(level * H * W)`` spatial positions per image.

    By default all channels at a chosen position go black. With ``per_channel``
    each channel draws its own positions.
    """
    _check_level(level)
    n, c, h, w = ds.images.shape
    count = int(np.floor(level * h * w))
    if count == 0:
        return ds
    rng = make_rng(seed, "noise")
    images = ds.images.copy()
    if per_channel:
        flat = images.reshape(n * c, h * w)
        picks = _sample_positions(rng, n * c, h * w, count)
        np.put_along_axis(flat, picks, 0.0, axis=1)
    else:
        flat = images.reshape(n, c, h * w)
        picks = _sample_positions(rng, n, h * w, count)
        np.put_along_axis(flat, picks[:, np.newaxis, :].repeat(c, axis=1), 0.0, axis=2)
    return ds.with_images(images)


def apply_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    if spec.kind == "random":
        return add_random_noise(ds, spec.level, spec.seed)
    if spec.kind == "pepper":
        return add_pepper_noise(ds, spec.level, spec.seed, spec.per_channel)
    return ds


def noise_splits(train: Dataset, test: Dataset, spec: NoiseSpec) -> tuple[Dataset, Dataset]:
    """Corrupt the splits named by ``spec.target``; the test split uses a shifted seed."""
    if spec.kind == "none":
        return train, test
    if spec.target in ("train", "both"):
        train = apply_noise(train, spec)
    if spec.target in ("test", "both"):
        test = apply_noise(test, spec.model_copy(update={"seed": spec.seed + 1}))
    return train, test
