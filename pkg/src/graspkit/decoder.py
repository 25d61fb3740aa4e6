"""Convolutional multi-scale fusion decoder and the pixel-level grasp head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import tensor as T
from .encoder import FeaturePyramid, trunc_normal
from .geom import GraspRect, jaccard_matrix
from .tensor import Tensor

# channel layout of a DenseGraspMap
OFF_X, OFF_Y, LOG_W, LOG_H = 0, 1, 2, 3
ANGLE_START = 4


@dataclass(frozen=True)
class DecoderConfig:
    in_dims: tuple = (64, 128, 256)
    fused_dim: int = 64
    head_dim: int = 64
    k_angle: int = 18
    k_obj: int = 1

    @property
    def out_channels(self) -> int:
        return 4 + self.k_angle + self.k_obj + 1


@dataclass
class DenseGraspMap:
    """Per-cell grasp predictions ``[B, 4 + K_angle + K_obj + 1, H', W']``."""

    data: Tensor
    k_angle: int
    k_obj: int
    stride: int = 8

    def __post_init__(self):
        ch = self.data.shape[1]
        if ch != 4 + self.k_angle + self.k_obj + 1:
            raise ValueError(f"map has {ch} channels, layout needs {4 + self.k_angle + self.k_obj + 1}")

    @property
    def offsets(self) -> Tensor:
        return self.data[:, 0:4]

    @property
    def angle_logits(self) -> Tensor:
        return self.data[:, ANGLE_START:ANGLE_START + self.k_angle]

    @property
    def class_logits(self) -> Tensor:
        s = ANGLE_START + self.k_angle
        return self.data[:, s:s + self.k_obj]

    @property
    def graspability(self) -> Tensor:
        return self.data[:, -1]

    @property
    def grid(self):
        return self.data.shape[2], self.data.shape[3]


@dataclass(frozen=True)
class GraspCandidate:
    rect: GraspRect
    angle_class: int
    score: float


def init_decoder(cfg: DecoderConfig, rng) -> dict:
    p = {}
    F = cfg.fused_dim
    for i, c in enumerate(cfg.in_dims):
        p[f"fuse.lateral.{i}.w"] = trunc_normal(rng, (F, c, 1, 1), std=math.sqrt(2.0 / c))
        p[f"fuse.lateral.{i}.b"] = np.zeros(F)
    for i in range(2):
        p[f"fuse.down.{i}.w"] = trunc_normal(rng, (F, F, 2, 2), std=math.sqrt(2.0 / (4 * F)))
        p[f"fuse.down.{i}.b"] = np.zeros(F)
    cin = F
    for i in range(2):
        p[f"head.conv{i}.w"] = trunc_normal(rng, (cfg.head_dim, cin, 3, 3), std=math.sqrt(2.0 / (9 * cin)))
        p[f"head.conv{i}.b"] = np.zeros(cfg.head_dim)
        cin = cfg.head_dim
    p["head.out.w"] = trunc_normal(rng, (cfg.out_channels, cin, 1, 1), std=0.01)
    p["head.out.b"] = np.zeros(cfg.out_channels)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def fuse_scales(pyramid, weights: dict) -> Tensor:
    """Fuse stride 8/16/32 features into one stride-8 map.

    Each scale is channel-projected by a 1x1 conv. Finer scales flow down
    into coarser ones through stride-2 convs, then every scale is upsampled
    to stride 8 and the three are summed.
    """
    feats = list(pyramid)
    if len(feats) != 3:
        raise ValueError(f"expected three feature scales, got {len(feats)}")
    f8, f16, f32 = (T.as_tensor(f) for f in feats)
    if f16.shape[2] * 2 != f8.shape[2] or f32.shape[2] * 2 != f16.shape[2]:
        raise ValueError(f"scale extents {f8.shape[2:]}, {f16.shape[2:]}, {f32.shape[2:]} are not 8/16/32")
    lat = [T.conv2d(f, weights[f"fuse.lateral.{i}.w"], weights[f"fuse.lateral.{i}.b"])
           for i, f in enumerate((f8, f16, f32))]
    p8 = lat[0]
    p16 = lat[1] + T.conv2d(p8, weights["fuse.down.0.w"], weights["fuse.down.0.b"], stride=2)
    p32 = lat[2] + T.conv2d(p16, weights["fuse.down.1.w"], weights["fuse.down.1.b"], stride=2)
    return p8 + T.upsample_nearest(p16, 2) + T.upsample_nearest(p32, 4)


def grasp_head(fused, weights: dict, cfg: DecoderConfig, stride: int = 8) -> DenseGraspMap:
    x = T.as_tensor(fused)
    for i in range(2):
        x = T.gelu(T.conv2d(x, weights[f"head.conv{i}.w"], weights[f"head.conv{i}.b"], padding=1))
    x = T.conv2d(x, weights["head.out.w"], weights["head.out.b"])
    return DenseGraspMap(x, cfg.k_angle, cfg.k_obj, stride)


def angle_bin_center(index: int, k_angle: int) -> float:
    return (index + 0.5) * 180.0 / k_angle


def decode_candidates(gmap: DenseGraspMap, stride: int | None = None, score_threshold: float = 0.5,
                      batch_index: int = 0) -> list:
    """Turn cells whose graspability probability clears ``score_threshold`` into candidates."""
    stride = gmap.stride if stride is None else stride
    d = gmap.data.data[batch_index]
    scores = expit(d[-1])
    rows, cols = np.nonzero(scores >= score_threshold)
    ka, ko = gmap.k_angle, gmap.k_obj
    out = []
    for i, j in zip(rows.tolist(), cols.tolist()):
        cell = d[:, i, j]
        a = int(np.argmax(cell[ANGLE_START:ANGLE_START + ka]))
        c = int(np.argmax(cell[ANGLE_START + ka:ANGLE_START + ka + ko]))
        s = float(scores[i, j])
        rect = GraspRect(
            x=(j + 0.5 + math.tanh(cell[OFF_X])) * stride,
            y=(i + 0.5 + math.tanh(cell[OFF_Y])) * stride,
            w=math.exp(cell[LOG_W]) * stride,
            h=math.exp(cell[LOG_H]) * stride,
            theta=angle_bin_center(a, ka),
            category=c,
            confidence=s,
        )
        out.append(GraspCandidate(rect, a, s))
    out.sort(key=lambda cand: -cand.score)
    return out


def nms_filter(cands: list, iou_threshold: float = 0.25, per_category: bool = False) -> list:
    """Greedy suppression by rotated Jaccard; ``per_category`` limits it to equal categories."""
    cands = sorted(cands, key=lambda cand: -cand.score)
    if len(cands) < 2:
        return list(cands)
    iou = jaccard_matrix([c.rect for c in cands], [c.rect for c in cands])
    cats = np.array([c.rect.category for c in cands])
    alive = np.ones(len(cands), dtype=bool)
    keep = []
    for i in range(len(cands)):
        if not alive[i]:
            continue
        keep.append(cands[i])
        hit = iou[i] > iou_threshold
        if per_category:
            hit &= cats == cats[i]
        alive &= ~hit
    return keep
