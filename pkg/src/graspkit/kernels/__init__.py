"""Hot numeric kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; set ``GRASPKIT_PURE_PYTHON=1``
to force the fallback. Both backends expose the same functions and are kept
numerically interchangeable (conv forward is bit-identical across them).
"""
from __future__ import annotations

import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("GRASPKIT_PURE_PYTHON", "") not in ("1", "true"):
    backend = compiled_backend
    BACKEND_NAME = "compiled"
else:
    backend = python_backend
    BACKEND_NAME = "python"

conv2d_forward = backend.conv2d_forward
conv2d_backward = backend.conv2d_backward
convex_clip_area = backend.convex_clip_area
quad_iou_matrix = backend.quad_iou_matrix

__all__ = [
    "BACKEND_NAME",
    "backend",
    "compiled_backend",
    "python_backend",
    "conv2d_forward",
    "conv2d_backward",
    "convex_clip_area",
    "quad_iou_matrix",
]
