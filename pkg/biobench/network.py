"""Layer topology, parameter initialisation, the cached forward pass and sparsity masks."""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from biobench.errors import BuildError, ConfigurationError, DimensionError, DivergenceError, NumericError
from biobench.numerics import (
    ActivationKind,
    ConvCache,
    PoolCache,
    activation,
    affine,
    conv2d_forward,
    conv_output_size,
    make_rng,
    maxpool2d,
)

if TYPE_CHECKING:
    from biobench.rules.ridge import RidgeClassifier

logger = logging.getLogger(__name__)

LayerKind = Literal["conv", "pool", "dense"]
HeadKind = Literal["linear", "ridge"]


class LayerSpec(BaseModel):
    """One layer. For ``pool`` layers ``kernel`` is the window size."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LayerKind
    fan_out: int = Field(default=0, ge=0)
    kernel: int = Field(default=1, ge=1)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=0, ge=0)
    activation: ActivationKind = "identity"

    @model_validator(mode="after")
    def _check_fan_out(self) -> "LayerSpec":
        if self.kind in ("conv", "dense") and self.fan_out < 1:
            raise ValueError(f"{self.kind} layer needs fan_out >= 1")
        return self

    @property
    def has_params(self) -> bool:
        return self.kind != "pool"


@dataclass
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray
    mask: np.ndarray | None = None


@dataclass
class ForwardCache:
    x: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)  # z_{i-1} as fed to layer i
    pre: list[np.ndarray] = field(default_factory=list)  # a_i
    post: list[np.ndarray] = field(default_factory=list)  # z_i
    ops: list[ConvCache | PoolCache | None] = field(default_factory=list)


@dataclass
class Network:
    specs: list[LayerSpec]
    params: list[LayerParams | None]
    head: HeadKind
    input_shape: tuple[int, ...]
    readout: "RidgeClassifier | None" = None

    @property
    def parametric(self) -> list[int]:
        return [i for i, s in enumerate(self.specs) if s.has_params]

    def layer_shapes(self) -> list[tuple[int, ...]]:
        return _probe_shapes(self.specs, self.input_shape)


def fan_in(spec: LayerSpec, in_shape: tuple[int, ...]) -> int:
    if spec.kind == "conv":
        return in_shape[0] * spec.kernel * spec.kernel
    return int(np.prod(in_shape))


def _probe_shapes(specs: list[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Output shape of every layer (without the batch axis)."""
    shapes = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        prev = "input" if i == 0 else f"layer {i - 1} ({specs[i - 1].kind})"
        here = f"layer {i} ({spec.kind})"
        if spec.kind in ("conv", "pool"):
            if len(shape) != 3:
                raise BuildError(f"{prev} -> {here}: expected a CxHxW input, got {shape}")
            c, h, w = shape
            pad = spec.padding if spec.kind == "conv" else 0
            stride = spec.stride
            if spec.kernel > h + 2 * pad or spec.kernel > w + 2 * pad:
                raise BuildError(
                    f"{prev} -> {here}: kernel {spec.kernel} does not fit input {shape}"
                )
            h_out = conv_output_size(h, spec.kernel, stride, pad)
            w_out = conv_output_size(w, spec.kernel, stride, pad)
            shape = (spec.fan_out if spec.kind == "conv" else c, h_out, w_out)
        else:
            shape = (spec.fan_out,)
        shapes.append(shape)
    return shapes


def build_network(
    specs: list[LayerSpec],
    head: HeadKind,
    seed: int,
    input_shape: tuple[int, ...],
    gain: float = 1.0,
    dtype: type = np.float64,
) -> Network:
    if not specs:
        raise BuildError("network needs at least one layer")
    if not any(s.has_params for s in specs):
        raise BuildError("network needs at least one conv or dense layer")
    if head == "linear" and specs[-1].kind != "dense":
        raise BuildError("a linear head needs a dense final layer")

    shapes = _probe_shapes(specs, input_shape)
    rng = make_rng(seed, "init")
    params: list[LayerParams | None] = []
    in_shape = tuple(input_shape)
    for spec, out_shape in zip(specs, shapes):
        if spec.kind == "pool":
            params.append(None)
        else:
            n_in = fan_in(spec, in_shape)
            if spec.kind == "conv":
                w_shape = (spec.fan_out, in_shape[0], spec.kernel, spec.kernel)
            else:
                w_shape = (spec.fan_out, n_in)
            weights = rng.normal(0.0, gain / np.sqrt(n_in), size=w_shape).astype(dtype)
            params.append(LayerParams(weights=weights, bias=np.zeros(spec.fan_out, dtype=dtype)))
        in_shape = out_shape

    net = Network(specs=list(specs), params=params, head=head, input_shape=tuple(input_shape))
    try:
        forward(net, np.zeros((1, *input_shape), dtype=dtype))
    except DimensionError as exc:
        raise BuildError(f"probe forward failed: {exc}") from exc
    logger.debug("built network with %d layers, output shape %s", len(specs), shapes[-1])
    return net


def forward(
    net: Network, batch: np.ndarray, stop: int | None = None
) -> tuple[np.ndarray, ForwardCache]:
    """Run layers ``[0, stop)`` on a NCHW (or N x D) batch."""
    if batch.shape[1:] != net.input_shape:
        raise DimensionError(
            f"batch shape {batch.shape} does not match network input {net.input_shape}"
        )
    cache = ForwardCache(x=batch)
    z = batch
    n = batch.shape[0]
    for i, spec in enumerate(net.specs[:stop]):
        p = net.params[i]
        cache.inputs.append(z)
        try:
            if spec.kind == "conv":
                a, op = conv2d_forward(z, p.weights, p.bias, spec.stride, spec.padding)
            elif spec.kind == "pool":
                a, op = maxpool2d(z, spec.kernel, spec.stride)
            else:
                a, op = affine(p.weights, z.reshape(n, -1), p.bias), None
            z = activation(spec.activation, a)
        except NumericError as exc:
            raise DivergenceError(f"layer {i} ({spec.kind}): {exc}", layer=i) from exc
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"layer {i} ({spec.kind}): non-finite activation", layer=i)
        cache.pre.append(a)
        cache.post.append(z)
        cache.ops.append(op)
    return z, cache


def features(net: Network, batch: np.ndarray) -> np.ndarray:
    out, _ = forward(net, batch)
    return out.reshape(out.shape[0], -1)


# --- sparsity ---


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_mask(net: Network, sparsity: float, seed: int) -> list[np.ndarray | None]:
    """Uniform random masks with exactly ``round(sparsity * total)`` zeros overall."""
    if not 0.0 <= sparsity < 1.0:
        raise ConfigurationError(f"sparsity must be in [0, 1), got {sparsity}")
    sizes = [net.params[i].weights.size for i in net.parametric]
    total = sum(sizes)
    n_zero = _round_half_up(sparsity * total)
    flat = np.ones(total)
    if n_zero:
        rng = make_rng(seed, "mask")
        flat[rng.choice(total, size=n_zero, replace=False)] = 0.0

    masks: list[np.ndarray | None] = [None] * len(net.specs)
    offsets = np.cumsum([0, *sizes])
    for j, i in enumerate(net.parametric):
        w = net.params[i].weights
        masks[i] = flat[offsets[j] : offsets[j + 1]].reshape(w.shape).astype(w.dtype)
    return masks


def install_masks(net: Network, masks: list[np.ndarray | None]) -> None:
    if len(masks) != len(net.specs):
        raise DimensionError(f"{len(masks)} masks for {len(net.specs)} layers")
    for p, m in zip(net.params, masks):
        if p is not None:
            p.mask = m
    apply_masks(net)


def apply_masks(net: Network) -> None:
    for i, p in enumerate(net.params):
        if p is None or p.mask is None:
            continue
        if p.mask.shape != p.weights.shape:
            raise DimensionError(
                f"layer {i}: mask {p.mask.shape} does not match weights {p.weights.shape}"
            )
        p.weights *= p.mask


def measured_sparsity(net: Network) -> float:
    weights = [net.params[i].weights for i in net.parametric]
    total = sum(w.size for w in weights)
    zeros = sum(int(np.count_nonzero(w == 0)) for w in weights)
    return zeros / total


def magnitude_prune(net: Network, fraction: float, layers: list[int] | None = None) -> None:
    """Zero the smallest-magnitude ``fraction`` of each listed layer and keep it zero."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigurationError(f"prune fraction must be in [0, 1), got {fraction}")
    for i in layers if layers is not None else net.parametric:
        p = net.params[i]
        n_zero = _round_half_up(fraction * p.weights.size)
        mask = np.ones(p.weights.size, dtype=p.weights.dtype)
        order = np.argsort(np.abs(p.weights).ravel(), kind="stable")
        mask[order[:n_zero]] = 0.0
        mask = mask.reshape(p.weights.shape)
        p.mask = mask if p.mask is None else p.mask * mask
    apply_masks(net)


def conv_stack_specs(
    conv_channels: list[int],
    classes: int | None,
    kernel: int = 5,
    stride: int = 1,
    padding: int = 2,
    pool: int | None = 2,
    pool_stride: int | None = None,
    activation_kind: ActivationKind = "relu",
) -> list[LayerSpec]:
    """Conv(+pool) blocks followed by a dense identity head when ``classes`` is given."""
    specs: list[LayerSpec] = []
    for c in conv_channels:
        specs.append(
            LayerSpec(kind="conv", fan_out=c, kernel=kernel, stride=stride, padding=padding, activation=activation_kind)
        )
        if pool:
            specs.append(LayerSpec(kind="pool", kernel=pool, stride=pool_stride or pool))
    if classes is not None:
        specs.append(LayerSpec(kind="dense", fan_out=classes, activation="identity"))
    return specs
