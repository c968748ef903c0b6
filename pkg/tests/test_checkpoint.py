import struct

import numpy as np
import pytest

from biobench.checkpoint import HEADER, LAYER, dump_network, load_network, parse_network, save_network
from biobench.errors import CheckpointError
from biobench.network import LayerSpec, build_network, install_masks, make_mask
from biobench.rules.ridge import RidgeClassifier


def tiny_dense():
    net = build_network([LayerSpec(kind="dense", fan_out=1)], "linear", seed=0, input_shape=(2,))
    net.params[0].weights[:] = [[1.0, -2.0]]
    net.params[0].bias[:] = [0.5]
    return net


def test_golden_bytes_for_a_single_dense_layer():
    expected = (
        HEADER.pack(b"BIOG", 1, 0, 1)
        + struct.pack("<I", 2)
        + struct.pack("<H", 1)
        + LAYER.pack(2, 1, 1, 1, 0, 0, 1)
        + struct.pack("<BBII", 0, 2, 1, 2)
        + struct.pack("<2d", 1.0, -2.0)
        + struct.pack("<BBI", 0, 1, 1)
        + struct.pack("<d", 0.5)
        + b"\x00"
    )
    assert dump_network(tiny_dense()) == expected


def test_round_trip_keeps_masks_and_readout(toy_specs, tmp_path):
    net = build_network(toy_specs[:3], "ridge", seed=2, input_shape=(3, 8, 8))
    install_masks(net, make_mask(net, 0.5, seed=0))
    net.readout = RidgeClassifier(weights=np.arange(6.0).reshape(2, 3), lam=0.25)
    path = tmp_path / "nested" / "net.biog"
    save_network(net, path)
    loaded = load_network(path)
    assert loaded.specs == net.specs
    assert loaded.head == "ridge" and loaded.input_shape == (3, 8, 8)
    assert loaded.params[1] is None
    for a, b in zip(net.params, loaded.params):
        if a is not None:
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
            assert np.array_equal(a.mask, b.mask)
    assert loaded.readout.lam == 0.25
    assert np.array_equal(loaded.readout.weights, net.readout.weights)


def test_float32_networks_round_trip():
    net = build_network([LayerSpec(kind="dense", fan_out=3)], "linear", 0, (4,), dtype=np.float32)
    loaded = parse_network(dump_network(net))
    assert loaded.params[0].weights.dtype == np.float32
    assert np.array_equal(loaded.params[0].weights, net.params[0].weights)


def test_bad_magic():
    data = bytearray(dump_network(tiny_dense()))
    data[:4] = b"NOPE"
    with pytest.raises(CheckpointError, match="magic"):
        parse_network(bytes(data))


def test_bad_version():
    data = bytearray(dump_network(tiny_dense()))
    data[4:6] = struct.pack("<H", 9)
    with pytest.raises(CheckpointError, match="version"):
        parse_network(bytes(data))


def test_truncated_and_trailing_bytes():
    data = dump_network(tiny_dense())
    with pytest.raises(CheckpointError, match="truncated"):
        parse_network(data[:-3])
    with pytest.raises(CheckpointError, match="trailing"):
        parse_network(data + b"\x00")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_network(tmp_path / "absent.biog")
