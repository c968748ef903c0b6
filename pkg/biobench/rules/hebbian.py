"""Local, unsupervised Hebbian rules for conv layers.

Units compete per spatial site: the triangle response centres pre-activations
at their mean across channels and only the top-k survive. Each unit's update
is averaged over the sites it won in a batch (gate-weighted), so an instar
step moves a winning kernel a fraction ``lr`` of the way toward the mean of
the patches it responded to.
"""

import logging
from typing import Iterable

import numpy as np

from biobench.errors import ConfigurationError, DimensionError, DivergenceError
from biobench.models import UpdateRule
from biobench.network import Network
from biobench.numerics import im2col

logger = logging.getLogger(__name__)


def hebbian_vanilla_update(x: np.ndarray, z: np.ndarray, lr: float) -> np.ndarray:
    """Plain Hebb: ``dw[j, i] = lr * z[j] * x[i]``. Unbounded by construction."""
    return lr * np.multiply.outer(z, x)


def instar_update(x: np.ndarray, z: np.ndarray, w: np.ndarray, lr: float) -> np.ndarray:
    """Instar: ``dw[j, i] = lr * z[j] * (x[i] - w[j, i])``."""
    z = np.asarray(z)
    gate = z[..., np.newaxis] if z.ndim else z
    if np.ndim(w) and np.shape(w)[-1] != np.shape(x)[-1]:
        raise DimensionError(f"instar: weights {np.shape(w)} vs input {np.shape(x)}")
    return lr * gate * (x - w)


def kwta_triangle(pre_activations: np.ndarray, k: int, axis: int = -1) -> np.ndarray:
    """Triangle response ``max(0, a - mean(a))`` gated to the top ``k`` along ``axis``."""
    n_units = pre_activations.shape[axis]
    if not 1 <= k <= n_units:
        raise ConfigurationError(f"k must be in [1, {n_units}], got {k}")
    centred = pre_activations - pre_activations.mean(axis=axis, keepdims=True)
    tri = np.maximum(centred, 0.0)
    if k == n_units:
        return tri
    order = np.argsort(-tri, axis=axis, kind="stable")
    keep = np.zeros_like(tri, dtype=bool)
    np.put_along_axis(keep, np.take(order, np.arange(k), axis=axis), True, axis=axis)
    return np.where(keep, tri, 0.0)


def _normalised_gates(gates: np.ndarray) -> np.ndarray:
    mass = gates.sum(axis=0)
    return np.divide(gates, mass, out=np.zeros_like(gates), where=mass > 0)


def hebbian_train_layer(
    net: Network,
    index: int,
    stream: Iterable[np.ndarray],
    rule: UpdateRule,
    lr: float | None = None,
    step_offset: int = 0,
) -> int:
    """Train conv layer ``index`` on batches already passed through the frozen layers below.

    Returns the number of steps taken. Bias stays untouched.
    """
    spec = net.specs[index]
    if spec.kind != "conv":
        raise ConfigurationError(f"Hebbian training needs a conv layer, layer {index} is {spec.kind}")
    if rule.kind not in ("hebb_vanilla", "hebb_instar"):
        raise ConfigurationError(f"{rule.kind!r} is not a Hebbian rule")
    lr = rule.lr if lr is None else lr
    params = net.params[index]
    f = spec.fan_out
    w = params.weights.reshape(f, -1)  # view: updates land in params.weights

    steps = 0
    for x in stream:
        cols = im2col(x, spec.kernel, spec.stride, spec.padding)
        gates = kwta_triangle(cols @ w.T + params.bias, rule.k, axis=1)
        norm = _normalised_gates(gates)
        drive = norm.T @ cols
        if rule.kind == "hebb_instar":
            dw = lr * (drive - norm.sum(axis=0)[:, np.newaxis] * w)
        else:
            dw = lr * drive
        w += dw
        if rule.decay_every == "step":
            w *= rule.weight_decay
        if params.mask is not None:
            w *= params.mask.reshape(f, -1)
        steps += 1
        if not np.all(np.isfinite(w)):
            raise DivergenceError(
                f"layer {index}: non-finite weights at step {step_offset + steps}",
                layer=index,
                step=step_offset + steps,
            )
    logger.debug("hebbian layer %d: %d steps", index, steps)
    return steps


def decay_layer(net: Network, index: int, factor: float) -> None:
    net.params[index].weights *= factor
