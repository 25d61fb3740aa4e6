"""Draw grasp rectangles and graspability heatmaps onto ``[3, H, W]`` images."""
from __future__ import annotations

import colorsys

import numpy as np

from .data import bin_angle
from .geom import rect_to_quad

CATEGORY_COLORS = np.array([
    [0.90, 0.10, 0.10],
    [0.10, 0.70, 0.10],
    [0.10, 0.30, 0.95],
    [0.95, 0.75, 0.05],
    [0.70, 0.10, 0.80],
    [0.05, 0.80, 0.80],
])
HEAT_COLOR = np.array([1.0, 0.0, 0.0])


def angle_color(theta: float, k_angle: int = 18) -> np.ndarray:
    """Hue wheel over the angle bins, so neighbouring bins get neighbouring hues."""
    b = bin_angle(theta, k_angle)
    return np.array(colorsys.hsv_to_rgb(b / k_angle, 0.9, 1.0))


def category_color(category: int) -> np.ndarray:
    return CATEGORY_COLORS[int(category) % len(CATEGORY_COLORS)]


def line_pixels(x0: float, y0: float, x1: float, y1: float):
    """Bresenham pixels ``(col, row)`` from the pixel holding ``(x0, y0)`` to the one holding ``(x1, y1)``."""
    c0, r0, c1, r1 = (int(np.floor(v)) for v in (x0, y0, x1, y1))
    dc, dr = abs(c1 - c0), -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    out = []
    while True:
        out.append((c0, r0))
        if c0 == c1 and r0 == r1:
            return out
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c0 += sc
        if e2 <= dc:
            err += dc
            r0 += sr


def draw_line(image: np.ndarray, x0, y0, x1, y1, color) -> None:
    """Draw in place; pixels outside the image are dropped."""
    _, H, W = image.shape
    color = np.asarray(color, dtype=np.float64)
    for c, r in line_pixels(x0, y0, x1, y1):
        if 0 <= c < W and 0 <= r < H:
            image[:, r, c] = color


def draw_grasp(image: np.ndarray, rect, color) -> None:
    q = rect_to_quad(rect)
    for i in range(4):
        a, b = q[i], q[(i + 1) % 4]
        draw_line(image, a[0], a[1], b[0], b[1], color)


def overlay_heatmap(image: np.ndarray, scores: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend ``scores`` in [0, 1] (any grid dividing the image) as a red tint of strength ``alpha * score``."""
    _, H, W = image.shape
    h, w = scores.shape
    if H % h or W % w:
        raise ValueError(f"heatmap grid {h}x{w} does not divide image {H}x{W}")
    up = np.repeat(np.repeat(np.clip(scores, 0.0, 1.0), H // h, axis=0), W // w, axis=1)
    a = alpha * up[None]
    return image * (1.0 - a) + HEAT_COLOR[:, None, None] * a


def render(image: np.ndarray, grasps=(), color_by: str = "angle", heatmap=None, alpha: float = 0.5,
           k_angle: int = 18) -> np.ndarray:
    """Return a copy of ``image`` with the heatmap (if any) blended under the grasp outlines."""
    if color_by not in ("angle", "category"):
        raise ValueError(f"color_by must be 'angle' or 'category', got {color_by!r}")
    out = np.array(image, dtype=np.float64, copy=True)
    if heatmap is not None:
        out = overlay_heatmap(out, np.asarray(heatmap, dtype=np.float64), alpha)
    for g in grasps:
        color = angle_color(g.theta, k_angle) if color_by == "angle" else category_color(g.category)
        draw_grasp(out, g, color)
    return out
