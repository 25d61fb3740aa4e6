"""Rectangle-metric evaluation: single-object accuracy and category-aware grasp mAP."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .geom import angle_diff, jaccard

ANGLE_TOL = 30.0
JACCARD_MIN = 0.25


@dataclass
class EvalReport:
    mode: str
    accuracy: float | None = None
    map_g: float | None = None
    per_category: dict = field(default_factory=dict)
    tp: int = 0
    fp: int = 0
    fn: int = 0
    num_scenes: int = 0
    excluded_scenes: int = 0
    latency_ms: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_category"] = {str(k): v for k, v in self.per_category.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format_table(self) -> str:
        rows = [f"mode            {self.mode}", f"scenes          {self.num_scenes} ({self.excluded_scenes} excluded)"]
        if self.accuracy is not None:
            rows.append(f"accuracy        {100 * self.accuracy:6.2f} %")
        if self.map_g is not None:
            rows.append(f"mAPg            {100 * self.map_g:6.2f} %")
        rows.append(f"TP / FP / FN    {self.tp} / {self.fp} / {self.fn}")
        if self.latency_ms is not None:
            rows.append(f"latency         {self.latency_ms:.2f} ms/image")
        for c, st in sorted(self.per_category.items()):
            rows.append(f"  category {c:>3}  AP {100 * st['ap']:6.2f}  P {st['precision']:.3f}  "
                        f"R {st['recall']:.3f}  (gt {st['num_gt']})")
        return "\n".join(rows)


def rect_match(pred, gt, check_category: bool = False) -> bool:
    """Angle within 30 degrees and Jaccard above 0.25 (both strict); optionally same category."""
    if check_category and pred.category != gt.category:
        return False
    if not angle_diff(pred.theta, gt.theta) < ANGLE_TOL:
        return False
    return jaccard(pred, gt) > JACCARD_MIN


def _top1(pred):
    if pred is None:
        return None
    if isinstance(pred, (list, tuple)):
        if not pred:
            return None
        return max(pred, key=lambda r: r.confidence)
    return pred


def single_object_counts(preds, scenes, check_category: bool = False):
    """Return (matched, evaluated, excluded) for top-1 predictions against scenes."""
    if len(preds) != len(scenes):
        raise ValueError(f"{len(preds)} predictions for {len(scenes)} scenes")
    matched = evaluated = excluded = 0
    for pred, sc in zip(preds, scenes):
        if not sc.grasps:
            excluded += 1
            continue
        evaluated += 1
        top = _top1(pred)
        if top is not None and any(rect_match(top, g, check_category) for g in sc.grasps):
            matched += 1
    return matched, evaluated, excluded


def scene_accuracy(preds, scenes, check_category: bool = False) -> float:
    """Fraction of scenes whose top-scoring grasp matches at least one ground truth.

    ``preds[i]`` is a GraspRect, a list of GraspRects (highest confidence is
    used) or ``None``. Scenes without ground truth are excluded.
    """
    matched, evaluated, _ = single_object_counts(preds, scenes, check_category)
    return matched / evaluated if evaluated else 0.0


def average_precision_11pt(tp_flags, num_gt: int) -> float:
    """11-point interpolated AP for predictions already ranked by score."""
    if num_gt == 0:
        return 0.0
    tp = np.asarray(tp_flags, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, tp.size + 1)
    ap = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        sel = recall >= t - 1e-12
        ap += precision[sel].max() if sel.any() else 0.0
    return ap / 11.0


def _match_category(preds, scenes, category, check_category):
    """Greedy one-to-one matching across the whole set; returns (tp flags, num gt)."""
    gts = []
    for si, sc in enumerate(scenes):
        gts.append([g for g in sc.grasps if not check_category or g.category == category])
    num_gt = sum(len(g) for g in gts)
    ranked = []
    for si, plist in enumerate(preds):
        for pi, p in enumerate(plist or []):
            if not check_category or p.category == category:
                ranked.append((-p.confidence, si, pi, p))
    ranked.sort(key=lambda t: (t[0], t[1], t[2]))
    used = [np.zeros(len(g), dtype=bool) for g in gts]
    flags = []
    for _, si, _, p in ranked:
        best, best_j = -1.0, -1
        for j, g in enumerate(gts[si]):
            if used[si][j] or not rect_match(p, g, check_category):
                continue
            jac = jaccard(p, g)
            if jac > best:
                best, best_j = jac, j
        if best_j >= 0:
            used[si][best_j] = True
            flags.append(1)
        else:
            flags.append(0)
    return flags, num_gt


def map_grasp_details(preds, scenes, check_category: bool = True):
    if len(preds) != len(scenes):
        raise ValueError(f"{len(preds)} prediction lists for {len(scenes)} scenes")
    if check_category:
        cats = sorted({g.category for sc in scenes for g in sc.grasps})
    else:
        cats = [0] if any(sc.grasps for sc in scenes) else []
    per = {}
    for c in cats:
        flags, num_gt = _match_category(preds, scenes, c, check_category)
        tp = int(sum(flags))
        per[c] = {
            "ap": average_precision_11pt(flags, num_gt),
            "precision": tp / len(flags) if flags else 0.0,
            "recall": tp / num_gt if num_gt else 0.0,
            "num_gt": num_gt,
            "tp": tp,
            "fp": len(flags) - tp,
        }
    m = float(np.mean([v["ap"] for v in per.values()])) if per else 0.0
    return m, per


def map_grasp(preds, scenes, check_category: bool = True) -> float:
    """Mean over ground-truth categories of 11-point AP under the rectangle metric."""
    return map_grasp_details(preds, scenes, check_category)[0]


def evaluate(preds, scenes, mode: str = "single", latency_ms: float | None = None) -> EvalReport:
    """Build an EvalReport. ``mode`` is ``single`` (top-1 accuracy) or ``multi`` (mAPg)."""
    if mode == "single":
        matched, evaluated, excluded = single_object_counts(preds, scenes)
        predicted = sum(1 for p, sc in zip(preds, scenes) if sc.grasps and _top1(p) is not None)
        return EvalReport(
            mode="single",
            accuracy=matched / evaluated if evaluated else 0.0,
            tp=matched,
            fp=predicted - matched,
            fn=evaluated - matched,
            num_scenes=evaluated,
            excluded_scenes=excluded,
            latency_ms=latency_ms,
            metadata={"protocol": "top-1 prediction per scene vs any ground truth"},
        )
    if mode == "multi":
        m, per = map_grasp_details(preds, scenes, check_category=True)
        tp = sum(v["tp"] for v in per.values())
        fp = sum(v["fp"] for v in per.values())
        n_gt = sum(v["num_gt"] for v in per.values())
        excluded = sum(1 for sc in scenes if not sc.grasps)
        return EvalReport(
            mode="multi",
            map_g=m,
            per_category=per,
            tp=tp,
            fp=fp,
            fn=n_gt - tp,
            num_scenes=len(scenes) - excluded,
            excluded_scenes=excluded,
            latency_ms=latency_ms,
            metadata={"map_average": "mean over ground-truth categories",
                      "ap_interpolation": "11-point", "matching": "greedy one-to-one by score"},
        )
    raise ValueError(f"unknown evaluation mode {mode!r}")
