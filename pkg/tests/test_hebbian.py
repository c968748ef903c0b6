import numpy as np
import pytest

from biobench.errors import ConfigurationError, DivergenceError
from biobench.models import UpdateRule
from biobench.network import LayerSpec, build_network
from biobench.rules.hebbian import (
    decay_layer,
    hebbian_train_layer,
    hebbian_vanilla_update,
    instar_update,
    kwta_triangle,
)


def angle(u, v):
    a, b = u / np.linalg.norm(u), v / np.linalg.norm(v)
    return float(2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def whole_image_layer(units=2):
    """One conv layer whose kernel covers the whole 1x4x4 input: a single site."""
    spec = LayerSpec(kind="conv", fan_out=units, kernel=4, activation="triangle")
    return build_network([spec], "ridge", seed=0, input_shape=(1, 4, 4))


def test_vanilla_hebb_grows_without_bound(rng):
    x = rng.uniform(0.1, 1.0, size=8)
    w = rng.uniform(0.0, 0.1, size=8)
    norms = []
    for _ in range(100):
        z = float(w @ x)
        w = w + hebbian_vanilla_update(x, z, lr=0.01)
        norms.append(np.linalg.norm(w))
    assert all(b > a for a, b in zip(norms, norms[1:]))


def test_instar_converges_to_the_input(rng):
    x = rng.uniform(0.1, 1.0, size=8)
    w = rng.normal(size=8)
    angles = [angle(w, x)]
    for _ in range(500):
        w = w + instar_update(x, 1.0, w, lr=0.05)
        angles.append(angle(w, x))
    assert angles[-1] < 1e-3
    assert all(b <= a + 1e-12 for a, b in zip(angles, angles[1:]))


def test_instar_fixed_point_and_gate():
    x = np.array([0.2, 0.4])
    assert np.array_equal(instar_update(x, 1.0, x.copy(), lr=0.3), [0.0, 0.0])
    assert np.array_equal(instar_update(x, 0.0, np.ones(2), lr=0.3), [0.0, 0.0])
    rows = instar_update(x, np.array([1.0, 0.0]), np.zeros((2, 2)), lr=0.5)
    assert np.allclose(rows, [[0.1, 0.2], [0.0, 0.0]])


@pytest.mark.parametrize(
    "k,expected",
    [(1, [0, 0, 0, 1.5]), (2, [0, 0, 0.5, 1.5]), (4, [0, 0, 0.5, 1.5])],
)
def test_kwta_triangle(k, expected):
    assert np.allclose(kwta_triangle(np.array([1.0, 2.0, 3.0, 4.0]), k), expected)


def test_kwta_range_and_axis():
    with pytest.raises(ConfigurationError):
        kwta_triangle(np.arange(4.0), 5)
    with pytest.raises(ConfigurationError):
        kwta_triangle(np.arange(4.0), 0)
    a = np.array([[1.0, 5.0], [3.0, 1.0]])
    assert np.allclose(kwta_triangle(a, 1, axis=1), [[0.0, 2.0], [1.0, 0.0]])


def test_layer_instar_aligns_winner_and_freezes_loser(rng):
    net = whole_image_layer()
    x = rng.uniform(0.1, 1.0, size=(1, 1, 4, 4))
    w = net.params[0].weights
    w[0] = x[0] + 0.3 * rng.normal(size=(1, 4, 4))
    w[1] = -x[0]
    loser = w[1].copy()
    rule = UpdateRule(kind="hebb_instar", lr=0.05, k=1)
    angles = [angle(w[0].ravel(), x.ravel())]
    for _ in range(500):
        hebbian_train_layer(net, 0, [x], rule)
        angles.append(angle(w[0].ravel(), x.ravel()))
    assert angles[-1] < 1e-3
    assert all(b <= a + 1e-12 for a, b in zip(angles, angles[1:]))
    assert np.array_equal(w[1], loser)
    assert np.all(net.params[0].bias == 0)


def test_layer_instar_separates_two_clusters(rng):
    net = whole_image_layer()
    top = np.zeros((1, 4, 4))
    top[0, :2] = 0.25
    bottom = np.zeros((1, 4, 4))
    bottom[0, 2:] = 0.25
    w = net.params[0].weights
    w[0] = 0.6 * top + 0.4 * bottom
    w[1] = 0.4 * top + 0.6 * bottom
    rule = UpdateRule(kind="hebb_instar", lr=0.1, k=1)
    batches = [
        np.stack([top + 0.01 * rng.uniform(size=top.shape), bottom + 0.01 * rng.uniform(size=top.shape)])
        for _ in range(300)
    ]
    steps = hebbian_train_layer(net, 0, batches, rule)
    assert steps == 300
    assert angle(w[0].ravel(), top.ravel()) < 0.05
    assert angle(w[1].ravel(), bottom.ravel()) < 0.05


def test_layer_vanilla_grows_and_can_diverge(rng):
    net = whole_image_layer()
    x = rng.uniform(0.1, 1.0, size=(1, 1, 4, 4))
    w = net.params[0].weights
    w[0] = x[0]
    w[1] = -x[0]
    rule = UpdateRule(kind="hebb_vanilla", lr=0.1, k=1)
    norms = []
    for _ in range(20):
        hebbian_train_layer(net, 0, [x], rule)
        norms.append(np.linalg.norm(w[0]))
    assert all(b > a for a, b in zip(norms, norms[1:]))

    huge = UpdateRule(kind="hebb_vanilla", lr=1e308, k=1)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError) as exc:
            hebbian_train_layer(net, 0, [x * 10.0], huge)
    assert exc.value.layer == 0


def test_layer_respects_mask_and_decay(rng):
    net = whole_image_layer()
    mask = np.ones_like(net.params[0].weights)
    mask[:, :, 0, 0] = 0.0
    net.params[0].mask = mask
    rule = UpdateRule(kind="hebb_instar", lr=0.5, k=1, weight_decay=0.5, decay_every="step")
    hebbian_train_layer(net, 0, [rng.uniform(0.1, 1.0, size=(2, 1, 4, 4))], rule)
    assert np.all(net.params[0].weights[:, :, 0, 0] == 0)
    before = net.params[0].weights.copy()
    decay_layer(net, 0, 0.5)
    assert np.array_equal(net.params[0].weights, before * 0.5)


def test_layer_training_rejects_bad_targets():
    net = build_network([LayerSpec(kind="dense", fan_out=2)], "ridge", 0, (4,))
    with pytest.raises(ConfigurationError):
        hebbian_train_layer(net, 0, [], UpdateRule(kind="hebb_instar"))
    conv = whole_image_layer()
    with pytest.raises(ConfigurationError):
        hebbian_train_layer(conv, 0, [], UpdateRule(kind="bp"))


@pytest.mark.parametrize("lr,gate", [(0.5, 1.0), (1.0, 1.0), (0.3, 0.5), (0.9, 0.2)])
def test_instar_contracts_toward_the_input(lr, gate, rng):
    x = rng.uniform(0.1, 1.0, size=8)
    w = rng.normal(size=8)
    before = np.linalg.norm(w - x)
    after = np.linalg.norm(w + instar_update(x, gate, w, lr=lr) - x)
    assert after == pytest.approx((1.0 - lr * gate) * before, abs=1e-12)
    assert after <= before


@pytest.mark.parametrize("kind", ["hebb_instar", "hebb_vanilla"])
def test_zero_learning_rate_leaves_layer_unchanged(kind, rng):
    net = whole_image_layer()
    before = net.params[0].weights.copy()
    batches = [rng.uniform(0.1, 1.0, size=(3, 1, 4, 4)) for _ in range(5)]
    steps = hebbian_train_layer(net, 0, batches, UpdateRule(kind=kind, lr=0.0, k=1))
    assert steps == 5
    assert np.array_equal(net.params[0].weights, before)
