"""Prediction files: a JSON header line, then one ``{"source_id", "grasps"}`` record per scene."""
from __future__ import annotations

import json
from pathlib import Path

from .data import DataError, grasp_from_dict
from .geom import GraspRect

FORMAT = "graspkit-predictions"
VERSION = 1


def grasp_record(g: GraspRect) -> dict:
    return {"x": g.x, "y": g.y, "w": g.w, "h": g.h, "theta": g.theta, "category": g.category,
            "score": g.confidence}


def format_predictions(records, meta: dict | None = None) -> str:
    """``records`` is an iterable of ``(source_id, [GraspRect])``."""
    head = {"format": FORMAT, "version": VERSION, **(meta or {})}
    lines = [json.dumps(head, sort_keys=True)]
    for sid, grasps in records:
        lines.append(json.dumps({"source_id": sid, "grasps": [grasp_record(g) for g in grasps]}, sort_keys=True))
    return "".join(ln + "\n" for ln in lines)


def write_predictions(path, records, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_predictions(records, meta))


def parse_predictions(text: str):
    """Return ``(header, {source_id: [GraspRect]})``; scene order is kept."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("prediction file is empty (no header line)")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataError(f"line 1: invalid JSON: {e}") from None
    if not isinstance(head, dict) or head.get("format") != FORMAT:
        raise DataError(f"line 1: not a {FORMAT} header")
    if head.get("version") != VERSION:
        raise DataError(f"unsupported prediction file version {head.get('version')}")
    out = {}
    for n, line in enumerate(lines[1:], 2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"line {n}: invalid JSON: {e}") from None
        if not isinstance(rec, dict) or "source_id" not in rec or "grasps" not in rec:
            raise DataError(f"line {n}: record needs source_id and grasps")
        sid = str(rec["source_id"])
        if sid in out:
            raise DataError(f"line {n}: duplicate source_id {sid}")
        out[sid] = [grasp_from_dict(g, where=f"line {n}: ") for g in rec["grasps"]]
    return head, out


def read_predictions(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"prediction file not found: {path}")
    return parse_predictions(path.read_text())
