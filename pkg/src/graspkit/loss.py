"""Training objective: CIoU box regression, angle/category cross-entropy, weighted total.

Graspability (per-cell confidence) gets a binary cross-entropy term that is
reported next to the weighted total rather than inside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .decoder import ANGLE_START, DenseGraspMap
from .geom import GraspRect
from .tensor import Tensor

DEFAULT_WEIGHTS = (0.05, 0.25, 0.5)
_FOUR_OVER_PI2 = 4.0 / math.pi ** 2


@dataclass
class LossBreakdown:
    grasp_box: Tensor
    angle: Tensor
    obj_class: Tensor
    graspability: Tensor
    total: Tensor
    weights: tuple = DEFAULT_WEIGHTS
    graspability_weight: float = 1.0
    ciou_alpha: np.ndarray | None = None

    @property
    def objective(self) -> Tensor:
        """What training minimises: the weighted total plus the graspability term."""
        return self.total + self.graspability * self.graspability_weight

    def as_floats(self) -> dict:
        return {
            "grasp_box": self.grasp_box.item(),
            "angle": self.angle.item(),
            "obj_class": self.obj_class.item(),
            "graspability": self.graspability.item(),
            "total": self.total.item(),
        }


def aspect_penalty(w, h, gw, gh):
    """``(4/pi^2) * (atan(gw/gh) - atan(w/h))^2`` for plain numbers."""
    return _FOUR_OVER_PI2 * (math.atan(gw / gh) - math.atan(w / h)) ** 2


def ciou_components(px, py, pw, ph, gx, gy, gw, gh, gtheta_deg):
    """IoU, normalised center distance and aspect penalty, each a Tensor.

    ``px..ph`` are tensors (any common shape); ``gx..gtheta_deg`` arrays of the
    same shape. Both boxes are expressed in the ground truth's rotated frame,
    where they are axis-aligned; the predicted angle plays no part.
    """
    gx, gy, gw, gh = (np.asarray(v, dtype=np.float64) for v in (gx, gy, gw, gh))
    pw, ph = T.as_tensor(pw), T.as_tensor(ph)
    if np.any(gw <= 0) or np.any(gh <= 0) or np.any(pw.data <= 0) or np.any(ph.data <= 0):
        raise ValueError("CIoU needs positive widths and heights")
    t = np.radians(np.asarray(gtheta_deg, dtype=np.float64))
    c, s = np.cos(t), np.sin(t)
    dx = px - gx
    dy = py - gy
    u = dx * c + dy * s
    v = dx * (-s) + dy * c
    hw, hh = pw * 0.5, ph * 0.5
    gx1, gx2 = -0.5 * gw, 0.5 * gw
    gy1, gy2 = -0.5 * gh, 0.5 * gh
    px1, px2 = u - hw, u + hw
    py1, py2 = v - hh, v + hh
    iw = T.relu(T.minimum(px2, gx2) - T.maximum(px1, gx1))
    ih = T.relu(T.minimum(py2, gy2) - T.maximum(py1, gy1))
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    iou = inter / union
    rho2 = dx * dx + dy * dy
    cw = T.maximum(px2, gx2) - T.minimum(px1, gx1)
    ch = T.maximum(py2, gy2) - T.minimum(py1, gy1)
    dist = rho2 / (cw * cw + ch * ch)
    nu = (T.arctan(pw / ph) * -1.0 + np.arctan(gw / gh)) ** 2 * _FOUR_OVER_PI2
    return iou, dist, nu


def ciou_terms(px, py, pw, ph, gx, gy, gw, gh, gtheta_deg, alpha=None) -> Tensor:
    """Elementwise CIoU loss ``1 - IoU + rho^2/c^2 + alpha*nu`` (see :func:`ciou_components`).

    alpha is held constant in the backward pass. Passing ``alpha`` freezes it
    at the given values instead of recomputing it, which is what a
    finite-difference check of this surrogate needs.
    """
    iou, dist, nu = ciou_components(px, py, pw, ph, gx, gy, gw, gh, gtheta_deg)
    if alpha is None:
        alpha = ciou_alpha(iou.data, nu.data)
    return 1.0 - iou + dist + nu * alpha


def ciou_alpha(iou, nu):
    """``nu / ((1 - IoU) + nu)``, 0 where both vanish."""
    iou = np.asarray(iou, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    denom = (1.0 - iou) + nu
    return np.divide(nu, denom, out=np.zeros_like(denom), where=denom > 0)


def _box_params(r):
    if isinstance(r, GraspRect):
        return r.x, r.y, r.w, r.h, r.theta
    if isinstance(r, Tensor):
        return r[0], r[1], r[2], r[3], None
    vals = list(r)
    return (*vals[:4], vals[4] if len(vals) > 4 else 0.0)


def ciou_loss(pred, gt, alpha=None) -> Tensor:
    """Scalar CIoU loss.

    ``pred`` is a GraspRect, an (x, y, w, h) sequence or a length-4 Tensor
    (differentiable); ``gt`` is a GraspRect or (x, y, w, h[, theta]) sequence.
    """
    px, py, pw, ph, _ = _box_params(pred)
    gx, gy, gw, gh, gt_theta = _box_params(gt)
    px, py, pw, ph = (T.as_tensor(v) if not isinstance(v, Tensor) else v for v in (px, py, pw, ph))
    return ciou_terms(px, py, pw, ph, gx, gy, gw, gh, gt_theta or 0.0, alpha)


def cross_entropy_onehot(logits, gt_index) -> Tensor:
    """Mean negative log-likelihood of the true class; ``logits`` is ``[K]`` or ``[P, K]``."""
    logits = T.as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = T.reshape(logits, (1, -1))
    K = logits.shape[-1]
    if K < 2:
        raise ValueError(f"cross-entropy needs at least two classes, got {K}")
    idx = np.atleast_1d(np.asarray(gt_index, dtype=np.int64))
    if idx.shape[0] != logits.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows but {idx.shape[0]} targets")
    if np.any(idx < 0) or np.any(idx >= K):
        raise IndexError(f"class index out of range for {K} classes: {idx.tolist()}")
    logp = T.log_softmax_lastdim(logits)
    picked = T.getitem(logp, (np.arange(len(idx)), idx))
    return T.mean(picked) * -1.0


def binary_cross_entropy_logits(z, y, pos_weight: float = 1.0) -> Tensor:
    """Elementwise BCE on logits: ``pos_weight*y*softplus(-z) + (1-y)*softplus(z)``."""
    y = np.asarray(y, dtype=np.float64)
    z = T.as_tensor(z)
    return T.softplus(z * -1.0) * (pos_weight * y) + T.softplus(z) * (1.0 - y)


def _weighted_mean(values: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum_(values * weights)


def total_loss(gmap: DenseGraspMap, targets, weights=DEFAULT_WEIGHTS,
               graspability_weight: float = 1.0, pos_weight: float = 1.0, ciou_alpha=None) -> LossBreakdown:
    """Loss for a batch of dense maps against per-image :class:`~graspkit.data.TargetMaps`.

    Box, angle and category terms average over positive cells within an image,
    then over the batch (an image without positives contributes 0).
    Graspability BCE averages over all cells, then over the batch.
    ``ciou_alpha`` freezes the per-positive CIoU alpha (see :func:`ciou_terms`).
    """
    omega, beta, lam = (float(w) for w in weights)
    data = gmap.data
    B, _, H, W = data.shape
    if len(targets) != B:
        raise ValueError(f"{B} maps but {len(targets)} targets")
    stride = gmap.stride
    bi, ri, ci, rows = [], [], [], []
    wts = []
    gt_mask = np.zeros((B, H, W))
    for b, tg in enumerate(targets):
        if tg.positive.shape != (H, W):
            raise ValueError(f"target grid {tg.positive.shape} does not match map grid {(H, W)}")
        gt_mask[b] = tg.positive
        n = len(tg.cells)
        for k in range(n):
            bi.append(b)
            ri.append(int(tg.cells[k, 0]))
            ci.append(int(tg.cells[k, 1]))
            rows.append((tg.rects[k], int(tg.angle_bins[k]), int(tg.categories[k])))
            wts.append(1.0 / (n * B))
    zero = Tensor(np.zeros(()))
    cells = T.permute(data, (0, 2, 3, 1))
    if bi:
        sel = T.getitem(cells, (np.array(bi), np.array(ri), np.array(ci)))  # [P, Ch]
        wts = np.array(wts)
        r_idx = np.array(ri, dtype=np.float64)
        c_idx = np.array(ci, dtype=np.float64)
        px = T.tanh(sel[:, 0]) + (c_idx + 0.5)
        py = T.tanh(sel[:, 1]) + (r_idx + 0.5)
        pw = T.exp(sel[:, 2])
        ph = T.exp(sel[:, 3])
        g = np.array([[r.x / stride, r.y / stride, r.w / stride, r.h / stride, r.theta] for r, _, _ in rows])
        box_each = ciou_terms(px, py, pw, ph, g[:, 0], g[:, 1], g[:, 2], g[:, 3], g[:, 4], ciou_alpha)
        used_alpha = ciou_alpha if ciou_alpha is not None else _alpha_of(px, py, pw, ph, g)
        box = _weighted_mean(box_each, wts)
        ka, ko = gmap.k_angle, gmap.k_obj
        a_logp = T.log_softmax_lastdim(sel[:, ANGLE_START:ANGLE_START + ka])
        a_idx = np.array([a for _, a, _ in rows])
        ang = _weighted_mean(T.getitem(a_logp, (np.arange(len(rows)), a_idx)), -wts)
        if ko >= 2:
            o_logp = T.log_softmax_lastdim(sel[:, ANGLE_START + ka:ANGLE_START + ka + ko])
            o_idx = np.array([c for _, _, c in rows])
            cls = _weighted_mean(T.getitem(o_logp, (np.arange(len(rows)), o_idx)), -wts)
        else:
            cls = zero  # a single category carries no information
    else:
        box = ang = cls = zero
        used_alpha = np.zeros(0)
    bce = binary_cross_entropy_logits(data[:, -1], gt_mask, pos_weight)
    grasp = T.mean(bce)
    total = box * omega + ang * beta + cls * lam
    return LossBreakdown(box, ang, cls, grasp, total, (omega, beta, lam), graspability_weight, used_alpha)


def _alpha_of(px, py, pw, ph, g):
    with T.no_grad():
        iou, _, nu = ciou_components(px, py, pw, ph, g[:, 0], g[:, 1], g[:, 2], g[:, 3], g[:, 4])
    return ciou_alpha(iou.data, nu.data)
