"""Seedable numeric kernel.

Tensors are plain ``numpy.ndarray`` values, float64 unless a caller asks for
float32. Every operation here is pure: caches needed by a backward pass are
returned to the caller, never stored globally.

Image tensors use NCHW layout. Single images (CHW) are promoted to a batch of
one and the batch axis is dropped again on the way out.

Random streams come from ``numpy.random.Philox`` (a counter-based generator)
seeded through ``SeedSequence`` so one run seed fans out into independent,
platform-stable streams.
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from biobench.errors import ConfigurationError, DimensionError, NumericError

ActivationKind = Literal["relu", "tanh", "identity", "triangle"]

DEFAULT_DTYPE = np.float64

STREAMS: dict[str, int] = {
    "init": 0,
    "feedback": 1,
    "mask": 2,
    "subset": 3,
    "noise": 4,
    "shuffle": 5,
    "synthetic": 6,
}


def make_rng(seed: int, stream: str = "init") -> np.random.Generator:
    """Philox generator for one named stream of ``seed``."""
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    if stream not in STREAMS:
        raise ConfigurationError(
            f"unknown rng stream {stream!r}; expected one of {sorted(STREAMS)}"
        )
    seq = np.random.SeedSequence(seed, spawn_key=(STREAMS[stream],))
    return np.random.Generator(np.random.Philox(seq))


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


# --- affine ---


def affine(weights: np.ndarray, x: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``weights @ x + bias`` for a single vector or a batch of row vectors."""
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1] or x.ndim > 2:
        raise DimensionError(
            f"affine: weights {weights.shape} incompatible with input {x.shape}"
        )
    if bias.shape != (weights.shape[0],):
        raise DimensionError(
            f"affine: bias {bias.shape} incompatible with weights {weights.shape}"
        )
    return check_finite(x @ weights.T + bias, "affine output")


# --- activations ---


def _channel_axis(a: np.ndarray) -> int:
    return 1 if a.ndim >= 2 else 0


def _triangle(a: np.ndarray) -> np.ndarray:
    centred = a - a.mean(axis=_channel_axis(a), keepdims=True)
    return np.maximum(centred, 0.0)


_ACTIVATIONS = {
    "relu": lambda a: np.maximum(a, 0.0),
    "tanh": np.tanh,
    "identity": lambda a: a.copy(),
    "triangle": _triangle,
}


def _triangle_deriv(a: np.ndarray) -> np.ndarray:
    # diagonal of the Jacobian only
    axis = _channel_axis(a)
    centred = a - a.mean(axis=axis, keepdims=True)
    return (centred > 0).astype(a.dtype) * (1.0 - 1.0 / a.shape[axis])


_DERIVATIVES = {
    "relu": lambda a: (a > 0).astype(a.dtype),
    "tanh": lambda a: 1.0 - np.tanh(a) ** 2,
    "identity": np.ones_like,
    "triangle": _triangle_deriv,
}


def activation(kind: str, a: np.ndarray) -> np.ndarray:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(a)


def activation_deriv(kind: str, a: np.ndarray) -> np.ndarray:
    try:
        fn = _DERIVATIVES[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {kind!r}; expected one of {sorted(_DERIVATIVES)}"
        ) from None
    return fn(a)


# --- convolution ---


@dataclass
class ConvCache:
    cols: np.ndarray  # (N*H'*W', C*k*k)
    input_shape: tuple[int, ...]
    kernels: np.ndarray
    stride: int
    padding: int
    output_shape: tuple[int, ...]
    batched: bool


def _as_batch(x: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 4:
        return x, True
    if x.ndim == 3:
        return x[np.newaxis], False
    raise DimensionError(f"{name}: expected CxHxW or NxCxHxW, got shape {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Unroll every receptive field of a NCHW batch into one row.

    Rows are ordered (n, i, j) row-major; columns follow the (C, k, k) layout
    of a kernel so ``cols @ kernels.reshape(F, -1).T`` is the convolution.
    """
    n, c, h, w = x.shape
    if kernel > h + 2 * padding or kernel > w + 2 * padding:
        raise DimensionError(
            f"kernel {kernel}x{kernel} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding} (input {x.shape}, padding {padding})"
        )
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C, H', W', k, k)
    h_out, w_out = windows.shape[2], windows.shape[3]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * kernel * kernel)


def conv2d_forward(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> tuple[np.ndarray, ConvCache]:
    """Cross-correlation (no kernel flip) of a batch with ``F`` kernels."""
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    batch, batched = _as_batch(x, "conv2d_forward")
    n, c, h, w = batch.shape
    if kernels.ndim != 4 or kernels.shape[1] != c or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(
            f"conv2d_forward: kernels {kernels.shape} incompatible with input {x.shape}"
        )
    f, _, k, _ = kernels.shape
    if bias.shape != (f,):
        raise DimensionError(f"conv2d_forward: bias {bias.shape} for {f} kernels")

    cols = im2col(batch, k, stride, padding)
    h_out = conv_output_size(h, k, stride, padding)
    w_out = conv_output_size(w, k, stride, padding)
    out = cols @ kernels.reshape(f, -1).T + bias
    out = out.reshape(n, h_out, w_out, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    check_finite(out, "conv2d output")

    cache = ConvCache(
        cols=cols,
        input_shape=batch.shape,
        kernels=kernels,
        stride=stride,
        padding=padding,
        output_shape=out.shape,
        batched=batched,
    )
    return (out if batched else out[0]), cache


def _error_rows(cache: ConvCache, output_error: np.ndarray) -> np.ndarray:
    err = output_error if cache.batched else output_error[np.newaxis]
    if err.shape != cache.output_shape:
        raise DimensionError(
            f"conv2d_backward: output_error {output_error.shape} does not match "
            f"forward output {cache.output_shape}"
        )
    f = err.shape[1]
    return err.transpose(0, 2, 3, 1).reshape(-1, f)


def conv2d_input_error(
    cache: ConvCache, output_error: np.ndarray, kernels: np.ndarray | None = None
) -> np.ndarray:
    """Transposed convolution of ``output_error``.

    ``kernels`` defaults to the forward kernels; feedback-alignment rules pass
    their fixed random kernels instead.
    """
    kernels = cache.kernels if kernels is None else kernels
    if kernels.shape != cache.kernels.shape:
        raise DimensionError(
            f"conv2d_input_error: kernels {kernels.shape} differ from forward "
            f"kernels {cache.kernels.shape}"
        )
    rows = _error_rows(cache, output_error)
    n, c, h, w = cache.input_shape
    f, _, k, _ = kernels.shape
    s, p = cache.stride, cache.padding
    _, _, h_out, w_out = cache.output_shape

    dcols = rows @ np.ascontiguousarray(kernels.reshape(f, -1))
    dcols = dcols.reshape(n, h_out, w_out, c, k, k)
    padded = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for ki in range(k):
        for kj in range(k):
            padded[:, :, ki : ki + s * (h_out - 1) + 1 : s, kj : kj + s * (w_out - 1) + 1 : s] += (
                dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    dx = padded[:, :, p : p + h, p : p + w]
    dx = np.ascontiguousarray(dx)
    return dx if cache.batched else dx[0]


def conv2d_weight_grads(cache: ConvCache, output_error: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kernel and bias gradients, summed over the batch."""
    rows = _error_rows(cache, output_error)
    kernel_grad = (rows.T @ cache.cols).reshape(cache.kernels.shape)
    return kernel_grad, rows.sum(axis=0)


def conv2d_backward(
    cache: ConvCache, output_error: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(input_error, kernel_grad, bias_grad)``."""
    kernel_grad, bias_grad = conv2d_weight_grads(cache, output_error)
    input_error = conv2d_input_error(cache, output_error)
    return input_error, kernel_grad, bias_grad


# --- pooling ---


@dataclass
class PoolCache:
    argmax: np.ndarray  # (N, C, H', W') flat index inside each window
    input_shape: tuple[int, ...]
    window: int
    stride: int
    batched: bool


def maxpool2d(x: np.ndarray, window: int, stride: int | None = None) -> tuple[np.ndarray, PoolCache]:
    stride = window if stride is None else stride
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    batch, batched = _as_batch(x, "maxpool2d")
    n, c, h, w = batch.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} larger than input {h}x{w}")

    windows = sliding_window_view(batch, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(*windows.shape[:4], window * window)
    # np.argmax returns the first maximum: row-major tie-break
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., np.newaxis], axis=-1)[..., 0]
    cache = PoolCache(argmax=argmax, input_shape=batch.shape, window=window, stride=stride, batched=batched)
    return (out if batched else out[0]), cache


def maxpool2d_backward(cache: PoolCache, output_error: np.ndarray) -> np.ndarray:
    err = output_error if cache.batched else output_error[np.newaxis]
    if err.shape != cache.argmax.shape:
        raise DimensionError(
            f"maxpool2d_backward: output_error {output_error.shape} does not match "
            f"pooled shape {cache.argmax.shape}"
        )
    n, c, h_out, w_out = err.shape
    ni, ci, ii, jj = np.indices((n, c, h_out, w_out), sparse=False)
    rows = ii * cache.stride + cache.argmax // cache.window
    cols = jj * cache.stride + cache.argmax % cache.window
    dx = np.zeros(cache.input_shape, dtype=err.dtype)
    np.add.at(dx, (ni, ci, rows, cols), err)
    return dx if cache.batched else dx[0]


# --- ZCA whitening ---


@dataclass(frozen=True)
class ZcaTransform:
    mean: np.ndarray
    whitening_matrix: np.ndarray
    epsilon: float


def zca_fit(samples: np.ndarray, epsilon: float = 1e-5) -> ZcaTransform:
    if samples.ndim != 2:
        raise DimensionError(f"zca_fit expects N x D samples, got shape {samples.shape}")
    if samples.shape[0] < 2:
        raise ConfigurationError(f"zca_fit needs at least 2 samples, got {samples.shape[0]}")
    if epsilon < 0:
        raise ConfigurationError(f"zca epsilon must be >= 0, got {epsilon}")

    mean = samples.mean(axis=0)
    centred = samples - mean
    cov = centred.T @ centred / (samples.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    floor = eigvals + epsilon
    if floor.min() <= 1e-12 * max(float(eigvals.max()), 1.0):
        raise NumericError(
            "covariance is rank-deficient; use a positive epsilon for ZCA whitening"
        )
    matrix = (eigvecs / np.sqrt(floor)) @ eigvecs.T
    matrix = (matrix + matrix.T) / 2.0
    return ZcaTransform(mean=mean, whitening_matrix=matrix, epsilon=epsilon)


def zca_apply(t: ZcaTransform, x: np.ndarray) -> np.ndarray:
    """Whiten rows of ``x``; any trailing shape is flattened and restored."""
    flat = x.reshape(x.shape[0], -1) if x.ndim > 1 else x[np.newaxis]
    if flat.shape[1] != t.mean.shape[0]:
        raise DimensionError(
            f"zca_apply: input features {flat.shape[1]} vs transform {t.mean.shape[0]}"
        )
    out = (flat - t.mean) @ t.whitening_matrix
    return out.reshape(x.shape)
