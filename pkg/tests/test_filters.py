import numpy as np
import pytest

from biobench.errors import ConfigurationError
from biobench.filters import encode_ppm, filter_grid, normalise_filter, render_filter_grid
from biobench.network import LayerSpec, build_network


def two_filter_net():
    net = build_network(
        [LayerSpec(kind="conv", fan_out=2, kernel=2)], "ridge", seed=0, input_shape=(1, 2, 2)
    )
    net.params[0].weights[0, 0] = [[0.0, 1.0], [2.0, 3.0]]
    net.params[0].weights[1, 0] = 0.7
    return net


def test_golden_ppm(tmp_path):
    out = tmp_path / "filters.ppm"
    assert render_filter_grid(two_filter_net(), out) == (1, 2)
    rows = [[0, 85, 0, 128, 128], [170, 255, 0, 128, 128]]
    pixels = bytes(v for row in rows for v in row for _ in range(3))
    assert out.read_bytes() == b"P6\n5 2\n255\n" + pixels


def test_grid_dimensions_for_a_hundred_filters(rng):
    image = filter_grid(rng.normal(size=(100, 3, 5, 5)))
    assert image.shape == (59, 59, 3)
    assert image.dtype == np.uint8
    # separators stay black
    assert np.all(image[5, :, :] == 0) and np.all(image[:, 5, :] == 0)


def test_rgb_filters_keep_channel_order():
    kernel = np.array([0.0, 1.0, 2.0]).reshape(1, 3, 1, 1)
    assert filter_grid(kernel)[0, 0].tolist() == [0, 128, 255]


def test_normalise_constant_filter_is_mid_gray():
    assert np.all(normalise_filter(np.full((3, 3), -4.0)) == 128)


def test_encode_header():
    assert encode_ppm(np.zeros((3, 4, 3), dtype=np.uint8)).startswith(b"P6\n4 3\n255\n")


def test_dense_first_layer_has_no_filters(tmp_path):
    net = build_network([LayerSpec(kind="dense", fan_out=2)], "linear", seed=0, input_shape=(4,))
    with pytest.raises(ConfigurationError):
        render_filter_grid(net, tmp_path / "x.ppm")
    assert not (tmp_path / "x.ppm").exists()
