import numpy as np
from PIL import Image

from zup.flow import FlowField
from zup.viz import flow_to_color, save_flow_image


def test_zero_flow_renders_white():
    f = FlowField(u=np.zeros((8, 8)), v=np.zeros((8, 8)))
    rgb = flow_to_color(f, max_magnitude=1.0)
    assert rgb.shape == (8, 8, 3)
    assert rgb.dtype == np.uint8
    assert np.all(rgb == 255)


def test_opposite_directions_get_different_hues():
    right = FlowField(u=np.full((8, 8), 2.0), v=np.zeros((8, 8)))
    left = FlowField(u=np.full((8, 8), -2.0), v=np.zeros((8, 8)))
    a = flow_to_color(right, max_magnitude=2.0)
    b = flow_to_color(left, max_magnitude=2.0)
    assert not np.array_equal(a[0, 0], b[0, 0])


def test_saturation_scales_with_magnitude():
    weak = FlowField(u=np.full((8, 8), 0.5), v=np.zeros((8, 8)))
    strong = FlowField(u=np.full((8, 8), 4.0), v=np.zeros((8, 8)))
    pale = flow_to_color(weak, max_magnitude=4.0)
    vivid = flow_to_color(strong, max_magnitude=4.0)
    # less saturated means channels closer together
    assert np.ptp(pale[0, 0].astype(int)) < np.ptp(vivid[0, 0].astype(int))


def test_png_written_and_loadable(tmp_path, rng):
    f = FlowField(u=rng.normal(size=(16, 16)), v=rng.normal(size=(16, 16)))
    path = tmp_path / "f.png"
    save_flow_image(f, path)
    with Image.open(path) as img:
        assert img.size == (16, 16)
        assert img.mode == "RGB"
