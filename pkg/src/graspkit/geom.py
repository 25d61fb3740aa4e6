"""Oriented grasp rectangles and the exact geometry built on them.

Angles are degrees in [0, 180), measured from the +x axis towards +y on the
raw (x, y) coordinate values. ``w`` runs along the closing direction, ``h``
across it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels

AREA_EPS = 1e-12


def normalize_angle(theta: float) -> float:
    t = math.fmod(float(theta), 180.0)
    if t < 0:
        t += 180.0
    if t >= 180.0:  # fmod of tiny negatives can round up to 180
        t = 0.0
    return t


@dataclass(frozen=True)
class GraspRect:
    x: float
    y: float
    w: float
    h: float
    theta: float
    category: int = 0
    confidence: float = 1.0

    def __post_init__(self):
        for name in ("x", "y", "w", "h", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"GraspRect.{name} must be finite, got {v}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"GraspRect needs w > 0 and h > 0, got w={self.w}, h={self.h}")
        if self.category < 0:
            raise ValueError(f"GraspRect.category must be non-negative, got {self.category}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"GraspRect.confidence must be in [0, 1], got {self.confidence}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))
        object.__setattr__(self, "category", int(self.category))

    @property
    def area(self) -> float:
        return self.w * self.h

    def moved(self, **changes) -> "GraspRect":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h,
                "theta": self.theta, "category": self.category}


def rect_to_quad(r: GraspRect) -> np.ndarray:
    """Corners as a (4, 2) array, counter-clockwise (positive shoelace area).

    The first edge runs along the closing direction, so ``|v1 - v0| == w``.
    """
    t = math.radians(r.theta)
    d = np.array([math.cos(t), math.sin(t)])
    n = np.array([-d[1], d[0]])
    c = np.array([r.x, r.y])
    hw, hh = 0.5 * r.w, 0.5 * r.h
    return np.stack([
        c - hw * d - hh * n,
        c + hw * d - hh * n,
        c + hw * d + hh * n,
        c - hw * d + hh * n,
    ])


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def convex_intersection_area(a, b) -> float:
    """Intersection area of two convex CCW polygons (Sutherland-Hodgman + shoelace)."""
    return kernels.convex_clip_area(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def _key(r: GraspRect):
    return (r.x, r.y, r.w, r.h, r.theta)


def jaccard(a: GraspRect, b: GraspRect) -> float:
    # fixed argument order makes the result exactly symmetric
    if _key(b) < _key(a):
        a, b = b, a
    inter = convex_intersection_area(rect_to_quad(a), rect_to_quad(b))
    union = a.area + b.area - inter
    if union <= AREA_EPS:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def jaccard_matrix(rects_a, rects_b) -> np.ndarray:
    """Pairwise rotated Jaccard, rows over ``rects_a``."""
    if not rects_a or not rects_b:
        return np.zeros((len(rects_a), len(rects_b)))
    qa = np.stack([rect_to_quad(r) for r in rects_a])
    qb = np.stack([rect_to_quad(r) for r in rects_b])
    return kernels.quad_iou_matrix(qa, qb)


def angle_diff(theta_a: float, theta_b: float) -> float:
    """Smallest difference between two grasp angles under the 180 degree symmetry."""
    d = math.fmod(abs(float(theta_a) - float(theta_b)), 180.0)
    return min(d, 180.0 - d)


def center_distance_sq(a: GraspRect, b: GraspRect) -> float:
    return (a.x - b.x) ** 2 + (a.y - b.y) ** 2


def enclosing_diagonal_sq(a: GraspRect, b: GraspRect) -> float:
    """Squared diagonal of the smallest axis-aligned box holding both rectangles."""
    pts = np.concatenate([rect_to_quad(a), rect_to_quad(b)])
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(span[0] ** 2 + span[1] ** 2)


def quad_to_rect(quad, category: int = 0, confidence: float = 1.0) -> GraspRect:
    """Fit a GraspRect to four ordered vertices (first edge = closing direction).

    Works for the slightly non-rectangular quads produced by annotation noise
    or anisotropic scaling: the closing axis is the mean of the two long-side
    edges and sizes are the mean projected edge lengths.
    """
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    if not np.all(np.isfinite(q)):
        raise ValueError("quad has non-finite coordinates")
    e0 = q[1] - q[0]
    e2 = q[2] - q[3]
    axis = e0 + e2
    norm = math.hypot(axis[0], axis[1])
    if norm == 0:
        raise ValueError("degenerate quad")
    d = axis / norm
    n = np.array([-d[1], d[0]])
    w = 0.5 * (abs(float(e0 @ d)) + abs(float(e2 @ d)))
    e1 = q[2] - q[1]
    e3 = q[3] - q[0]
    h = 0.5 * (abs(float(e1 @ n)) + abs(float(e3 @ n)))
    c = q.mean(axis=0)
    theta = math.degrees(math.atan2(d[1], d[0]))
    return GraspRect(float(c[0]), float(c[1]), w, h, theta, category, confidence)
