from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from graspkit import tensor as T
from graspkit.gradcheck import check_gradients, numeric_grad
from graspkit.tensor import Tensor

TOL = 1e-4
INSTANCES = 5


def _probe(shape, seed):
    return np.random.default_rng(1000 + seed).standard_normal(shape)


def _readout(out: Tensor, seed: int) -> Tensor:
    """Random linear readout so every output element matters."""
    return T.sum_(out * _probe(out.shape, seed))


def _off_zero(x, gap=0.05):
    return x + gap * np.where(x >= 0, 1.0, -1.0)


UNARY = {
    "exp": (T.exp, lambda r, s: r.standard_normal(s)),
    "log": (T.log, lambda r, s: r.uniform(0.2, 3, s)),
    "sqrt": (T.sqrt, lambda r, s: r.uniform(0.2, 3, s)),
    "tanh": (T.tanh, lambda r, s: r.standard_normal(s)),
    "sigmoid": (T.sigmoid, lambda r, s: 3 * r.standard_normal(s)),
    "softplus": (T.softplus, lambda r, s: 3 * r.standard_normal(s)),
    "arctan": (T.arctan, lambda r, s: 2 * r.standard_normal(s)),
    "relu": (T.relu, lambda r, s: _off_zero(r.standard_normal(s))),
    "gelu": (T.gelu, lambda r, s: 2 * r.standard_normal(s)),
    "power": (lambda x: T.power(x, 2.5), lambda r, s: r.uniform(0.2, 2, s)),
    "mul_scalar": (lambda x: T.mul_scalar(x, -1.7), lambda r, s: r.standard_normal(s)),
    "softmax_lastdim": (T.softmax_lastdim, lambda r, s: 2 * r.standard_normal(s)),
    "log_softmax_lastdim": (T.log_softmax_lastdim, lambda r, s: 2 * r.standard_normal(s)),
    "sum_axis": (lambda x: T.sum_(x, axis=1, keepdims=True), lambda r, s: r.standard_normal(s)),
    "mean": (lambda x: T.mean(x, axis=0), lambda r, s: r.standard_normal(s)),
    "reshape": (lambda x: T.reshape(x, (-1, 2)), lambda r, s: r.standard_normal(s)),
    "permute": (lambda x: T.permute(x, (2, 0, 1)), lambda r, s: r.standard_normal(s)),
    "transpose_last": (T.transpose_last, lambda r, s: r.standard_normal(s)),
    "roll": (lambda x: T.roll(x, (1, -2), (1, 2)), lambda r, s: r.standard_normal(s)),
    "getitem_slice": (lambda x: x[:, 1:, ::2], lambda r, s: r.standard_normal(s)),
    "getitem_fancy": (lambda x: T.getitem(x, (np.array([0, 1, 0]), np.array([2, 2, 2]))),
                      lambda r, s: r.standard_normal(s)),
    "upsample_nearest": (lambda x: T.upsample_nearest(T.reshape(x, (1,) + x.shape), 2),
                         lambda r, s: r.standard_normal(s)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    op, gen = UNARY[name]
    for k in range(INSTANCES):
        rng = np.random.default_rng(k)
        x = gen(rng, (2, 3, 4))
        err = check_gradients(lambda t: _readout(op(t), k), [x])
        assert err <= TOL, f"{name} instance {k}: {err}"


BINARY = {
    "add": T.add,
    "sub": T.sub,
    "mul": T.mul,
    "div": T.div,
    "maximum": T.maximum,
    "minimum": T.minimum,
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients_with_broadcast(name):
    op = BINARY[name]
    for k in range(INSTANCES):
        rng = np.random.default_rng(k)
        a = rng.standard_normal((3, 4))
        b = rng.uniform(0.5, 2.0, (1, 4)) * rng.choice([-1, 1], (1, 4))
        if name in ("maximum", "minimum"):
            a = np.where(np.abs(a - b) < 0.05, a + 0.2, a)
        assert check_gradients(lambda x, y: _readout(op(x, y), k), [a, b]) <= TOL


def test_matmul_gradients_batched():
    for k in range(INSTANCES):
        rng = np.random.default_rng(k)
        a = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal((4, 5))
        assert check_gradients(lambda x, y: _readout(T.matmul(x, y), k), [a, b]) <= TOL


def test_linear_gradients():
    for k in range(INSTANCES):
        rng = np.random.default_rng(k)
        arrs = [rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)]
        assert check_gradients(lambda x, w, b: _readout(T.linear(x, w, b), k), arrs) <= TOL


def test_concat_and_stack_gradients():
    for k in range(INSTANCES):
        rng = np.random.default_rng(k)
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 5))
        assert check_gradients(lambda x, y: _readout(T.concat([x, y], axis=1), k), [a, b]) <= TOL
        c = rng.standard_normal((2, 3))
        assert check_gradients(lambda x, y: _readout(T.stack([x, y], axis=0), k), [a, c]) <= TOL


def test_layer_norm_gradients():
    for k in range(INSTANCES):
        rng = np.random.default_rng(k)
        arrs = [3 * rng.standard_normal((2, 3, 6)), rng.standard_normal(6), rng.standard_normal(6)]
        assert check_gradients(lambda x, g, b: _readout(T.layer_norm(x, g, b), k), arrs) <= TOL


@pytest.mark.parametrize("stride,pad,ksize,n", [(1, 1, 3, 6), (2, 0, 2, 6), (1, 0, 1, 5), (2, 1, 3, 7)])
def test_conv2d_gradients(stride, pad, ksize, n):
    for k in range(INSTANCES):
        rng = np.random.default_rng(k)
        arrs = [rng.standard_normal((2, 3, n, n)), rng.standard_normal((4, 3, ksize, ksize)), rng.standard_normal(4)]
        err = check_gradients(lambda x, w, b: _readout(T.conv2d(x, w, b, stride, pad), k), arrs)
        assert err <= TOL


# forward examples

def test_matmul_examples():
    m = np.array([[2.0, -1.0], [0.5, 3.0]])
    assert np.array_equal(T.matmul(np.eye(2), m).data, m)
    assert np.array_equal(T.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones((2, 1))).data, [[3.0], [7.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_grad_sum_matches_fd_tightly():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    assert check_gradients(lambda x, y: T.sum_(T.matmul(x, y)), [a, b]) <= 1e-6


def test_softmax_examples():
    assert np.allclose(T.softmax_lastdim(np.zeros(3)).data, 1 / 3, atol=1e-15)
    assert T.softmax_lastdim(np.array([123.4])).data[0] == 1.0
    big = np.array([1000.0, 1000.5, 999.0])
    out = T.softmax_lastdim(big).data
    ref = np.exp(big - 1000.5) / np.exp(big - 1000.5).sum()
    assert np.all(np.isfinite(out))
    assert np.allclose(out, ref, atol=1e-15)


def test_softmax_rejects_empty_last_dim():
    with pytest.raises(ValueError):
        T.softmax_lastdim(np.zeros((2, 0)))


@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = T.softmax_lastdim(x).data
    assert np.all(p > 0) and np.all(p <= 1)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-9)


def test_conv_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 3, 5, 5))
    one = np.ones((1, 3, 1, 1))
    assert np.allclose(T.conv2d(x, one).data[0, 0], x[0].sum(axis=0), atol=1e-14)
    const = np.full((1, 1, 6, 6), 2.5)
    avg = np.full((1, 1, 3, 3), 1 / 9)
    out = T.conv2d(const, avg, padding=1).data[0, 0]
    assert np.allclose(out[1:-1, 1:-1], 2.5, atol=1e-14)


def test_conv_rejects_non_integral_output():
    with pytest.raises(ValueError):
        T.conv2d(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 2, 2)), stride=2)


def test_layer_norm_examples():
    assert np.allclose(T.layer_norm(np.full((2, 4), 3.0)).data, 0.0)
    eps = 1e-5
    out = T.layer_norm(np.array([1.0, -1.0]), eps=eps).data
    assert np.allclose(out, np.array([1.0, -1.0]) / math.sqrt(1 + eps), atol=1e-15)


def test_gelu_add_permute_examples():
    assert T.gelu(np.zeros(1)).data[0] == 0.0
    xs = np.linspace(-0.7, 4, 50)
    assert np.all(np.diff(T.gelu(xs).data) > 0)
    x = np.random.default_rng(0).standard_normal((2, 3, 4))
    assert np.array_equal((Tensor(x) + 0.0).data, x)
    assert np.array_equal(T.permute(T.permute(x, (2, 0, 1)), (1, 2, 0)).data, x)


def test_upsample_examples():
    x = np.random.default_rng(0).standard_normal((1, 2, 3, 3))
    assert np.array_equal(T.upsample_nearest(x, 1).data, x)
    assert np.array_equal(T.upsample_nearest(np.full((1, 1, 1, 1), 7.0), 2).data, np.full((1, 1, 2, 2), 7.0))
    with pytest.raises(ValueError):
        T.upsample_nearest(x, 0)
    num = numeric_grad(lambda t: T.sum_(T.upsample_nearest(t, 3)), [x], 0)
    assert np.allclose(num, 9.0, atol=1e-6)


# backward and tape behaviour

def test_backward_examples():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with T.Tape() as tape:
        tape.backward(T.sum_(x))
    assert np.array_equal(x.grad, np.ones(3))
    x.zero_grad()
    with T.Tape() as tape:
        tape.backward(T.sum_(x * x))
    assert np.array_equal(x.grad, 2 * x.data)


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        with pytest.raises(RuntimeError):
            tape.backward(Tensor(np.ones(())))
        y = x * 2.0
        with pytest.raises(ValueError):
            tape.backward(y)


def test_backward_resets_tape_unless_retained():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.Tape() as tape:
        loss = T.sum_(x * 3.0)
        tape.backward(loss, retain=True)
        assert len(tape) > 0
        tape.backward(loss)
        assert len(tape) == 0
    assert np.array_equal(x.grad, np.full(2, 6.0))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.Tape() as tape:
        with T.no_grad():
            T.exp(x)
        assert len(tape) == 0


def test_nonfinite_output_raises_with_op_name():
    with np.errstate(divide="ignore"), pytest.raises(T.NumericError, match="log"):
        T.log(np.array([0.0, 1.0]))


def test_tiny_model_gradient():
    # ten parameters: a 3->2 linear layer plus bias, then a 2->1 readout
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 3))
    y = rng.standard_normal((5, 1))
    w1, b1, w2 = rng.standard_normal((3, 2)), rng.standard_normal(2), rng.standard_normal((2, 1))

    def loss(a, b, c):
        h = T.tanh(T.linear(x, a, b))
        r = T.matmul(h, c) - y
        return T.mean(r * r)

    assert w1.size + b1.size + w2.size == 10
    assert check_gradients(loss, [w1, b1, w2]) <= TOL


def test_numeric_grad_on_known_function():
    x = np.array([0.3, -1.2])
    g = numeric_grad(lambda t: T.sum_(t * t * t), [x], 0)
    assert np.allclose(g, 3 * x ** 2, atol=1e-8)


# optimizer

def test_sgd_step_examples():
    p, v = np.array([5.0]), np.zeros(1)
    T.sgd_step([p], [np.array([1.0])], lr=1.0, momentum=0.0, velocity=[v])
    assert p[0] == 4.0
    p, v = np.array([0.0]), np.zeros(1)
    T.sgd_step([p], [np.ones(1)], 0.1, 0.99, [v])
    assert p[0] == pytest.approx(-0.1, abs=1e-15)
    T.sgd_step([p], [np.ones(1)], 0.1, 0.99, [v])
    assert p[0] == pytest.approx(-0.1 - 0.199, abs=1e-15)
    q = np.array([1.0, 2.0])
    T.sgd_step([q], [np.zeros(2)], 0.5, 0.9, [np.zeros(2)])
    assert np.array_equal(q, [1.0, 2.0])


def test_sgd_step_shape_mismatch():
    with pytest.raises(ValueError):
        T.sgd_step([np.zeros(2)], [np.zeros(3)], 0.1, 0.9, [np.zeros(2)])


def test_forward_bit_reproducible():
    rng = np.random.default_rng(0)
    x, w = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3))
    a = T.gelu(T.conv2d(x, w, padding=1)).data
    b = T.gelu(T.conv2d(x, w, padding=1)).data
    assert np.array_equal(a, b)
