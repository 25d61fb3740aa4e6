from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from graspkit import kernels
from graspkit.geom import GraspRect, jaccard, rect_to_quad
from oracles import naive_conv2d, random_rect

BACKENDS = [kernels.python_backend]
if kernels.compiled_backend is not None:
    BACKENDS.append(kernels.compiled_backend)
ids = [b.__name__.rsplit(".", 1)[-1] for b in BACKENDS]


@pytest.fixture(params=BACKENDS, ids=ids)
def kb(request):
    return request.param


def test_compiled_backend_is_default_when_built():
    if kernels.compiled_backend is None:
        pytest.skip("extension not built")
    assert kernels.BACKEND_NAME == "compiled"


def test_env_var_forces_python_backend():
    env = {**os.environ, "GRASPKIT_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from graspkit import kernels; print(kernels.BACKEND_NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("shape,kshape,stride,pad", [
    ((1, 1, 4, 4), (1, 1, 2, 2), 2, 0),
    ((2, 3, 8, 8), (4, 3, 3, 3), 1, 1),
    ((2, 3, 8, 8), (2, 3, 2, 2), 2, 0),
    ((1, 2, 7, 5), (3, 2, 3, 1), 2, 1),
])
def test_conv_forward_bit_exact_vs_loops(kb, shape, kshape, stride, pad):
    rng = np.random.default_rng(sum(shape) + stride)
    for _ in range(3):
        x = rng.standard_normal(shape)
        w = rng.standard_normal(kshape)
        got = kb.conv2d_forward(x, w, stride, pad)
        assert np.array_equal(got, naive_conv2d(x, w, stride, pad))


def test_conv_backward_matches_adjoint(kb):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    g = rng.standard_normal(kb.conv2d_forward(x, w, 1, 1).shape)
    gx, gw = kb.conv2d_backward(x, w, g, 1, 1)
    # <conv(x, w), g> is bilinear: its derivative along dx is <conv(dx, w), g>
    dx = rng.standard_normal(x.shape)
    dw = rng.standard_normal(w.shape)
    assert np.sum(gx * dx) == pytest.approx(np.sum(kb.conv2d_forward(dx, w, 1, 1) * g), rel=1e-12)
    assert np.sum(gw * dw) == pytest.approx(np.sum(kb.conv2d_forward(x, dw, 1, 1) * g), rel=1e-12)


def test_backends_agree_on_conv_backward():
    if kernels.compiled_backend is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((5, 3, 2, 2))
    g = rng.standard_normal((2, 5, 4, 4))
    a = kernels.python_backend.conv2d_backward(x, w, g, 2, 0)
    b = kernels.compiled_backend.conv2d_backward(x, w, g, 2, 0)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-12)


def test_clip_area_fixtures(kb):
    a = rect_to_quad(GraspRect(0, 0, 1, 1, 0))
    b = rect_to_quad(GraspRect(0.5, 0, 1, 1, 0))
    assert kb.convex_clip_area(a, b) == pytest.approx(0.5, abs=1e-12)
    assert kb.convex_clip_area(a, rect_to_quad(GraspRect(9, 9, 1, 1, 0))) == 0.0


def test_iou_matrix_backends_agree():
    rng = np.random.default_rng(5)
    ra = [random_rect(rng, span=3) for _ in range(12)]
    rb = [random_rect(rng, span=3) for _ in range(9)]
    qa = np.stack([rect_to_quad(r) for r in ra])
    qb = np.stack([rect_to_quad(r) for r in rb])
    ref = np.array([[jaccard(a, b) for b in rb] for a in ra])
    for kb in BACKENDS:
        assert np.allclose(kb.quad_iou_matrix(qa, qb), ref, atol=1e-12)
