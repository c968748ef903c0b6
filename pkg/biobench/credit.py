"""Shared credit-assignment types and the pieces every rule reuses.

A rule turns the output error ``e_f`` into an :class:`ErrorSignal`, one error
per parametric layer at its pre-activation. Turning a signal into weight
changes (the outer product of error and input for dense layers, the conv
weight gradient for conv layers) is the same for every gradient-family rule
and lives here.
"""

from dataclasses import dataclass, field
from typing import Literal, Protocol

import numpy as np

from biobench.errors import ConfigurationError, DimensionError, DivergenceError, NumericError
from biobench.models import RuleKind
from biobench.network import ForwardCache, Network, apply_masks, fan_in
from biobench.numerics import (
    activation_deriv,
    conv2d_input_error,
    conv2d_weight_grads,
    make_rng,
    maxpool2d_backward,
)


FeedbackMode = Literal["fa", "dfa"]


# --- signal types ---


@dataclass
class ErrorSignal:
    e_f: np.ndarray
    errors: list[np.ndarray | None] = field(default_factory=list)  # aligned with net.specs


@dataclass(frozen=True)
class FeedbackMatrices:
    """Fixed random matrices, keyed by the layer that *receives* the error.

    ``fa``: entry ``i`` stands in for the weights of the next parametric layer
    above ``i`` (a transposed dense matrix, or a kernel stack for conv).
    ``dfa``: entry ``i`` maps ``e_f`` straight to layer ``i``'s flattened
    pre-activation, shape ``(size_i, classes)``.
    """

    mode: FeedbackMode
    matrices: tuple[np.ndarray | None, ...]

    def __post_init__(self):
        for m in self.matrices:
            if m is not None:
                m.setflags(write=False)

    def check(self, net: Network, mode: FeedbackMode) -> None:
        if self.mode != mode:
            raise ConfigurationError(f"feedback built for {self.mode!r}, rule needs {mode!r}")
        expected = _feedback_shapes(net, mode)
        actual = [None if m is None else m.shape for m in self.matrices]
        if actual != expected:
            raise ConfigurationError(
                f"feedback built for a different topology: shapes {actual}, network needs {expected}"
            )


def parametric_below(net: Network, j: int) -> int | None:
    for k in range(j - 1, -1, -1):
        if net.specs[k].has_params:
            return k
    return None


def parametric_above(net: Network, i: int) -> int | None:
    for k in range(i + 1, len(net.specs)):
        if net.specs[k].has_params:
            return k
    return None


def _feedback_shapes(net: Network, mode: FeedbackMode) -> list[tuple[int, ...] | None]:
    shapes: list[tuple[int, ...] | None] = [None] * len(net.specs)
    out_shapes = net.layer_shapes()
    top = net.parametric[-1]
    classes = out_shapes[top][0]
    for i in net.parametric:
        j = parametric_above(net, i)
        if j is None:
            continue
        if mode == "dfa":
            shapes[i] = (int(np.prod(out_shapes[i])), classes)
        elif net.specs[j].kind == "conv":
            shapes[i] = net.params[j].weights.shape
        else:
            shapes[i] = net.params[j].weights.T.shape
    return shapes


def draw_feedback(net: Network, mode: FeedbackMode, seed: int) -> FeedbackMatrices:
    """Gaussian(0, 1/sqrt(fan)) matrices from the dedicated ``feedback`` stream.

    ``fan`` is the fan-in of the weights a FA matrix replaces, and the number
    of classes for DFA.
    """
    rng = make_rng(seed, "feedback")
    shapes = _feedback_shapes(net, mode)
    in_shapes = [tuple(net.input_shape), *net.layer_shapes()[:-1]]
    classes = net.layer_shapes()[net.parametric[-1]][0]
    matrices: list[np.ndarray | None] = []
    for i, shape in enumerate(shapes):
        if shape is None:
            matrices.append(None)
            continue
        if mode == "dfa":
            fan = classes
        else:
            j = parametric_above(net, i)
            fan = fan_in(net.specs[j], in_shapes[j])
        dtype = net.params[i].weights.dtype
        matrices.append(rng.normal(0.0, 1.0 / np.sqrt(fan), size=shape).astype(dtype))
    return FeedbackMatrices(mode=mode, matrices=tuple(matrices))


def feedback_from_weights(net: Network) -> FeedbackMatrices:
    """FA feedback equal to the transported forward weights (B = W^T)."""
    matrices: list[np.ndarray | None] = [None] * len(net.specs)
    for i in net.parametric:
        j = parametric_above(net, i)
        if j is None:
            continue
        w = net.params[j].weights
        matrices[i] = w.copy() if net.specs[j].kind == "conv" else w.T.copy()
    return FeedbackMatrices(mode="fa", matrices=tuple(matrices))


# --- loss ---


def _check_targets(scores: np.ndarray, one_hot: np.ndarray) -> None:
    if scores.shape != one_hot.shape:
        raise DimensionError(f"scores {scores.shape} vs targets {one_hot.shape}")
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite scores")
    if not (np.all((one_hot == 0) | (one_hot == 1)) and np.all(one_hot.sum(axis=-1) == 1)):
        raise ConfigurationError("targets must be one-hot")


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss_grad_softmax_ce(scores: np.ndarray, one_hot_target: np.ndarray) -> np.ndarray:
    """``softmax(scores) - target`` per sample."""
    _check_targets(scores, one_hot_target)
    return np.exp(_log_softmax(scores)) - one_hot_target


def softmax_cross_entropy(scores: np.ndarray, one_hot_target: np.ndarray) -> float:
    """Mean cross-entropy over the batch axis."""
    _check_targets(scores, one_hot_target)
    logp = _log_softmax(np.atleast_2d(scores))
    return float(-(logp * np.atleast_2d(one_hot_target)).sum(axis=-1).mean())


def one_hot(labels: np.ndarray, classes: int, dtype=np.float64) -> np.ndarray:
    out = np.zeros((labels.shape[0], classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# --- error transport ---


def transport_dense(error: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """``error @ matrix`` where ``matrix`` is laid out like forward weights (out x in)."""
    return error @ np.ascontiguousarray(matrix)


def carry_error(
    net: Network, cache: ForwardCache, j: int, e_j: np.ndarray, transport: np.ndarray
) -> tuple[int, np.ndarray] | None:
    """Move the error at layer ``j``'s pre-activation down to the parametric layer below.

    ``transport`` replaces ``w_j`` on the way down: the forward weights for BP,
    a fixed random matrix for FA. Pool layers in between route the error to
    their argmax positions.
    """
    k = parametric_below(net, j)
    if k is None:
        return None
    spec = net.specs[j]
    if spec.kind == "conv":
        g = conv2d_input_error(cache.ops[j], e_j, transport)
    else:
        g = transport_dense(e_j, transport).reshape(cache.inputs[j].shape)
    for p in range(j - 1, k, -1):
        g = g * activation_deriv(net.specs[p].activation, cache.pre[p])
        g = maxpool2d_backward(cache.ops[p], g)
    return k, g * activation_deriv(net.specs[k].activation, cache.pre[k])


def output_error(net: Network, cache: ForwardCache, e_f: np.ndarray) -> tuple[int, np.ndarray]:
    top = net.parametric[-1]
    if e_f.shape != cache.pre[top].shape:
        raise DimensionError(f"e_f {e_f.shape} vs output pre-activation {cache.pre[top].shape}")
    return top, e_f * activation_deriv(net.specs[top].activation, cache.pre[top])


# --- updates ---


Update = tuple[np.ndarray, np.ndarray]


def weight_update_from_error(e: np.ndarray, z: np.ndarray, lr: float) -> Update:
    """``dw = -lr * e z^T`` and ``db = -lr * e``, summed over a batch axis if present."""
    e2, z2 = np.atleast_2d(e), np.atleast_2d(z)
    if e2.ndim != 2 or z2.ndim != 2 or e2.shape[0] != z2.shape[0]:
        raise DimensionError(f"weight update: error {e.shape} and input {z.shape} do not compose")
    return -lr * (e2.T @ z2), -lr * e2.sum(axis=0)


def compute_updates(
    net: Network, cache: ForwardCache, signal: ErrorSignal, lr: float
) -> list[Update | None]:
    updates: list[Update | None] = [None] * len(net.specs)
    for i in net.parametric:
        e = signal.errors[i]
        if e is None:
            continue
        if net.specs[i].kind == "conv":
            kernel_grad, bias_grad = conv2d_weight_grads(cache.ops[i], e)
            updates[i] = (-lr * kernel_grad, -lr * bias_grad)
        else:
            z = cache.inputs[i].reshape(e.shape[0], -1)
            updates[i] = weight_update_from_error(e, z, lr)
    return updates


def apply_updates(net: Network, updates: list[Update | None], step: int | None = None) -> None:
    """Add updates in place, then re-impose the sparsity masks."""
    for i, upd in enumerate(updates):
        if upd is None:
            continue
        p = net.params[i]
        dw, db = upd
        if dw.shape != p.weights.shape or db.shape != p.bias.shape:
            raise DimensionError(
                f"layer {i}: update {dw.shape}/{db.shape} vs params {p.weights.shape}/{p.bias.shape}"
            )
        p.weights += dw
        p.bias += db
        if not (np.all(np.isfinite(p.weights)) and np.all(np.isfinite(p.bias))):
            raise DivergenceError(f"layer {i}: non-finite weights after update", layer=i, step=step)
    apply_masks(net)


# --- protocol ---


class CreditRule(Protocol):
    kind: RuleKind

    def backward(self, net: Network, cache: ForwardCache, e_f: np.ndarray) -> ErrorSignal: ...
