"""Central finite-difference gradient checking for the autodiff core."""
from __future__ import annotations

import numpy as np

from . import tensor as T


def numeric_grad(fn, arrays, index: int, eps: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``.

    ``coords`` restricts the probe to a subset of flat indices (others stay 0).
    """
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    x = base[index]
    g = np.zeros(x.size)
    flat = x.reshape(-1)
    probe = range(x.size) if coords is None else coords
    with T.no_grad():
        for k in probe:
            old = flat[k]
            flat[k] = old + eps
            hi = fn(*[T.Tensor(a) for a in base]).item()
            flat[k] = old - eps
            lo = fn(*[T.Tensor(a) for a in base]).item()
            flat[k] = old
            g[k] = (hi - lo) / (2 * eps)
    return g.reshape(x.shape)


def analytic_grads(fn, arrays):
    ts = [T.Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        out = fn(*ts)
        tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros(t.shape) for t in ts]


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn, arrays, eps: float = 1e-5, coords=None) -> float:
    """Worst relative error over all inputs between tape and finite-difference gradients."""
    ana = analytic_grads(fn, arrays)
    worst = 0.0
    for i in range(len(arrays)):
        num = numeric_grad(fn, arrays, i, eps, None if coords is None else coords.get(i))
        a = ana[i]
        if coords is not None and coords.get(i) is not None:
            mask = np.zeros(a.size, dtype=bool)
            mask[list(coords[i])] = True
            a = a.reshape(-1)[mask]
            num = num.reshape(-1)[mask]
        worst = max(worst, relative_error(a, num))
    return worst
