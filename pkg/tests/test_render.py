from __future__ import annotations

import numpy as np
import pytest

from graspkit.geom import GraspRect
from graspkit.render import (HEAT_COLOR, angle_color, category_color, draw_line, line_pixels, overlay_heatmap,
                             render)


def _image(h=20, w=24, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (3, h, w))


def test_no_grasps_is_a_copy():
    img = _image()
    out = render(img)
    assert np.array_equal(out, img) and out is not img


def test_axis_aligned_grasp_draws_four_segments():
    img = np.zeros((3, 20, 24))
    out = render(img, [GraspRect(10.5, 8.5, 8, 4, 0)], color_by="category")
    drawn = np.any(out != 0, axis=0)
    want = np.zeros((20, 24), dtype=bool)
    want[6, 6:15] = want[10, 6:15] = True
    want[6:11, 6] = want[6:11, 14] = True
    assert np.array_equal(drawn, want)
    assert np.array_equal(out[:, 6, 6], category_color(0))


def test_vertical_grasp_swaps_rows_and_cols():
    img = np.zeros((3, 20, 24))
    out = render(img, [GraspRect(10.5, 8.5, 8, 4, 90)])
    drawn = np.any(out != 0, axis=0)
    want = np.zeros((20, 24), dtype=bool)
    want[4:13, 8] = want[4:13, 12] = True
    want[4, 8:13] = want[12, 8:13] = True
    assert np.array_equal(drawn, want)


def test_line_pixels_examples():
    assert line_pixels(0.5, 0.5, 3.5, 0.5) == [(0, 0), (1, 0), (2, 0), (3, 0)]
    assert line_pixels(0.5, 0.5, 3.5, 3.5) == [(0, 0), (1, 1), (2, 2), (3, 3)]
    assert line_pixels(2.2, 1.9, 2.7, 1.1) == [(2, 1)]


def test_line_pixels_connected_and_endpoint_exact():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x0, y0, x1, y1 = rng.uniform(-5, 30, 4)
        px = line_pixels(x0, y0, x1, y1)
        assert px[0] == (int(np.floor(x0)), int(np.floor(y0)))
        assert px[-1] == (int(np.floor(x1)), int(np.floor(y1)))
        for (a, b), (c, d) in zip(px, px[1:]):
            assert max(abs(a - c), abs(b - d)) == 1


def test_draw_line_clips_to_image():
    img = np.zeros((3, 4, 4))
    draw_line(img, -10.0, 1.5, 10.0, 1.5, (1, 1, 1))
    want = np.zeros((4, 4), dtype=bool)
    want[1] = True
    assert np.array_equal(np.any(img != 0, axis=0), want)


def test_uniform_heatmap_gives_uniform_tint():
    img = np.full((3, 16, 16), 0.2)
    out = render(img, heatmap=np.full((2, 2), 0.6), alpha=0.5)
    want = 0.2 * (1 - 0.3) + HEAT_COLOR * 0.3
    assert np.allclose(out, want[:, None, None], atol=1e-15)


def test_heatmap_is_nearest_upsampled():
    img = np.zeros((3, 8, 8))
    scores = np.array([[0.0, 1.0], [0.5, 0.0]])
    out = overlay_heatmap(img, scores, alpha=1.0)
    assert np.array_equal(out[0], np.kron(scores, np.ones((4, 4))))
    assert not out[1:].any()
    with pytest.raises(ValueError):
        overlay_heatmap(np.zeros((3, 9, 9)), scores)


def test_colors():
    assert not np.array_equal(angle_color(0), angle_color(90))
    assert np.array_equal(angle_color(0), angle_color(180))
    assert np.array_equal(category_color(1), category_color(7))
    with pytest.raises(ValueError):
        render(_image(), color_by="size")
