"""First-layer filter grids as binary PPM (P6) images."""

import math
from pathlib import Path

import numpy as np

from biobench.errors import ConfigurationError
from biobench.network import Network


def normalise_filter(kernel: np.ndarray) -> np.ndarray:
    """Min-max scale one filter to uint8; a constant filter becomes mid gray (128)."""
    lo, hi = float(kernel.min()), float(kernel.max())
    if hi == lo:
        return np.full(kernel.shape, 128, dtype=np.uint8)
    return np.round((kernel - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _as_rgb(kernel: np.ndarray) -> np.ndarray:
    """C x k x k kernel to k x k x 3."""
    if kernel.shape[0] == 3:
        return kernel.transpose(1, 2, 0)
    mono = kernel[0] if kernel.shape[0] == 1 else kernel.mean(axis=0)
    return np.repeat(mono[:, :, np.newaxis], 3, axis=2)


def filter_grid(kernels: np.ndarray) -> np.ndarray:
    """Tile ``F x C x k x k`` kernels row-major into an H x W x 3 uint8 image.

    The grid is ``ceil(sqrt(F))`` columns wide with 1-pixel black separators
    between tiles.
    """
    if kernels.ndim != 4:
        raise ConfigurationError(f"expected F x C x k x k kernels, got shape {kernels.shape}")
    f, _, kh, kw = kernels.shape
    cols = math.ceil(math.sqrt(f))
    rows = math.ceil(f / cols)
    image = np.zeros((rows * kh + rows - 1, cols * kw + cols - 1, 3), dtype=np.uint8)
    for n in range(f):
        r, c = divmod(n, cols)
        top, left = r * (kh + 1), c * (kw + 1)
        image[top : top + kh, left : left + kw] = normalise_filter(_as_rgb(kernels[n]))
    return image


def encode_ppm(image: np.ndarray) -> bytes:
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image, dtype=np.uint8).tobytes()


def first_layer_kernels(net: Network) -> np.ndarray:
    if not net.specs or net.specs[0].kind != "conv":
        raise ConfigurationError("no conv filters to render")
    return net.params[0].weights


def render_filter_grid(net: Network, out_path: Path | str) -> tuple[int, int]:
    """Write the first conv layer's filters to ``out_path``; returns the grid (rows, cols)."""
    kernels = first_layer_kernels(net)
    image = filter_grid(kernels)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(encode_ppm(image))
    cols = math.ceil(math.sqrt(kernels.shape[0]))
    return math.ceil(kernels.shape[0] / cols), cols
