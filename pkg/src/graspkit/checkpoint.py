"""Flat binary checkpoints.

Layout: ``b"GKCK"`` magic, little-endian uint32 header length, UTF-8 JSON
header, then each parameter's little-endian float64 payload in header order.
The header lists ``format_version``, ``config_hash``, ``model_config`` and
``params`` entries of ``{"name", "shape"}``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GKCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, config_hash: str = "", model_config: dict | None = None,
                    extra: dict | None = None) -> None:
    names = sorted(params)
    arrays = [np.asarray(getattr(params[n], "data", params[n]), dtype="<f8") for n in names]
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "model_config": model_config or {},
        "params": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a).tobytes())


def load_checkpoint(path):
    """Return ``(header, {name: ndarray})``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a graspkit checkpoint")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {header.get('format_version')}")
    off = 8 + n
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path} is truncated at parameter {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        off = end
    return header, params


def check_compatible(header: dict, config_hash: str, model_config: dict) -> None:
    """Raise with the differing model fields when a checkpoint does not fit the config."""
    if header.get("config_hash") == config_hash:
        return
    saved = header.get("model_config", {})
    diffs = [f"{k}: checkpoint {saved.get(k)!r} vs config {model_config.get(k)!r}"
             for k in sorted(set(saved) | set(model_config)) if saved.get(k) != model_config.get(k)]
    detail = "; ".join(diffs) if diffs else "config hash differs"
    raise CheckpointError(f"checkpoint does not match config ({detail})")
