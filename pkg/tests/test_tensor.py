"""Tape mechanics and per-op gradient correctness."""

import numpy as np
import pytest

import mopred.numerics.tensor as T
from mopred.errors import InputError
from mopred.numerics import ParameterStore, gradient_check


def fd_grad(fn, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy(); xp.flat[i] += eps
        xm = x.copy(); xm.flat[i] -= eps
        g.flat[i] = (fn(xp) - fn(xm)) / (2 * eps)
    return g


OPS = {
    "add": lambda t: T.sum_(t + 2.0 * t),
    "sub": lambda t: T.sum_(T.sub(t, T.mul(t, t))),
    "mul_bcast": lambda t: T.sum_(t * T.constant(np.arange(1.0, 4.0))),
    "div": lambda t: T.sum_(T.div(t, T.constant(np.arange(2.0, 5.0)))),
    "exp": lambda t: T.sum_(T.exp(t)),
    "log": lambda t: T.sum_(T.log(t + 10.0)),
    "tanh": lambda t: T.sum_(T.tanh(t)),
    "relu": lambda t: T.sum_(T.relu(t)),
    "softplus": lambda t: T.sum_(T.softplus(t)),
    "square": lambda t: T.sum_(T.square(t)),
    "abs": lambda t: T.sum_(T.abs_(t + 0.3)),
    "mean_axis": lambda t: T.sum_(T.mean(T.square(t), axis=0)),
    "reshape": lambda t: T.sum_(T.square(T.reshape(t, (3, 2)))),
    "transpose": lambda t: T.sum_(T.square(T.transpose(t, (1, 0)))),
    "slice": lambda t: T.sum_(T.square(t[:, 1:])),
    "concat": lambda t: T.sum_(T.square(T.concat([t, t * 2.0], axis=1))),
    "log_softmax": lambda t: T.sum_(T.square(T.log_softmax(t))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    x = rng.standard_normal((2, 3))
    op = OPS[name]
    p = T.parameter(x.copy())
    loss = op(p)
    T.backward(loss)
    ref = fd_grad(lambda v: op(T.constant(v)).item(), x)
    assert np.allclose(p.grad, ref, atol=1e-7), name


def test_matmul_batched_gradients(rng):
    a = rng.standard_normal((2, 2, 3, 4))
    b = rng.standard_normal((4, 5))
    pa, pb = T.parameter(a.copy()), T.parameter(b.copy())
    T.backward(T.sum_(T.square(T.matmul(pa, pb))))
    ra = fd_grad(lambda v: T.sum_(T.square(T.matmul(T.constant(v), T.constant(b)))).item(), a)
    rb = fd_grad(lambda v: T.sum_(T.square(T.matmul(T.constant(a), T.constant(v)))).item(), b)
    assert np.allclose(pa.grad, ra, atol=1e-6)
    assert np.allclose(pb.grad, rb, atol=1e-6)


def test_gather_rows_scatter_backward(rng):
    src = rng.standard_normal((2, 5, 3))
    idx = rng.integers(0, 5, (2, 4, 2))
    p = T.parameter(src.copy())
    T.backward(T.sum_(T.square(T.gather_rows(p, idx))))
    ref = fd_grad(lambda v: T.sum_(T.square(T.gather_rows(T.constant(v), idx))).item(), src)
    assert np.allclose(p.grad, ref, atol=1e-6)


def test_masked_softmax_rows_sum_to_one(rng):
    scores = rng.standard_normal((6, 5))
    mask = (rng.random((6, 5)) > 0.4).astype(np.uint8)
    mask[:, 0] = 1
    out = T.masked_softmax(T.constant(scores), mask)
    sums = out.data.sum(axis=-1)
    assert np.allclose(sums, 1.0, atol=1e-9)
    assert (out.data[mask == 0] == 0).all()


def test_masked_softmax_gradient(rng):
    scores = rng.standard_normal((4, 5))
    mask = np.ones((4, 5), dtype=np.uint8)
    mask[1, 3:] = 0
    p = T.parameter(scores.copy())
    T.backward(T.sum_(T.square(T.masked_softmax(p, mask))))
    ref = fd_grad(lambda v: T.sum_(T.square(T.masked_softmax(T.constant(v), mask))).item(),
                  scores)
    assert np.allclose(p.grad, ref, atol=1e-7)


def test_masked_max_pool_gradient(rng):
    x = rng.standard_normal((3, 4, 2))
    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1]], dtype=bool)
    p = T.parameter(x.copy())
    out, valid = T.masked_max_pool(p, mask)
    assert valid.all()
    T.backward(T.sum_(T.square(out)))
    def f(v):
        o, _ = T.masked_max_pool(T.constant(v), mask)
        return T.sum_(T.square(o)).item()
    assert np.allclose(p.grad, fd_grad(f, x), atol=1e-7)


def test_layer_norm_gradients(rng):
    x = rng.standard_normal((2, 3, 6))
    g0 = rng.standard_normal(6)
    b0 = rng.standard_normal(6)
    px, pg, pb = T.parameter(x.copy()), T.parameter(g0.copy()), T.parameter(b0.copy())
    T.backward(T.sum_(T.square(T.layer_norm(px, pg, pb))))
    for p, ref_input, build in [
        (px, x, lambda v: T.layer_norm(T.constant(v), T.constant(g0), T.constant(b0))),
        (pg, g0, lambda v: T.layer_norm(T.constant(x), T.constant(v), T.constant(b0))),
        (pb, b0, lambda v: T.layer_norm(T.constant(x), T.constant(g0), T.constant(v))),
    ]:
        ref = fd_grad(lambda v: T.sum_(T.square(build(v))).item(), ref_input)
        assert np.allclose(p.grad, ref, atol=1e-6)


def test_backward_requires_scalar():
    p = T.parameter(np.ones(3))
    with pytest.raises(InputError):
        T.backward(p + 1.0)


def test_gradient_accumulates_over_shared_use():
    p = T.parameter(np.array([2.0]))
    y = p * p + p * 3.0
    T.backward(T.sum_(y))
    assert np.allclose(p.grad, [2 * 2.0 + 3.0])


def test_forward_values_finite_for_large_inputs(rng):
    x = T.constant(rng.uniform(-1e3, 1e3, (4, 4)))
    for out in (T.tanh(x), T.softplus(x), T.relu(x), T.masked_softmax(x, None),
                T.log_softmax(x)):
        assert np.isfinite(out.data).all()


class TestGradientCheckContract:
    def test_quadratic_case(self):
        store = ParameterStore(0)
        w = store.weight("w", 4, 4)
        err = gradient_check(lambda: T.sum_(T.square(w)), store)
        assert err < 1e-8

    def test_constant_loss_zero_gradients(self):
        store = ParameterStore(0)
        w = store.weight("w", 3, 3)
        err = gradient_check(lambda: T.sum_(w * 0.0), store)
        assert err < 1e-10
        assert np.abs(w.grad).max() < 1e-10

    def test_epsilon_bounds_rejected(self):
        store = ParameterStore(0)
        store.weight("w", 2, 2)
        with pytest.raises(InputError):
            gradient_check(lambda: T.constant(0.0), store, epsilon=1e-2)

    def test_nonfinite_loss_rejected(self):
        from mopred.errors import DivergedError
        store = ParameterStore(0)
        w = store.weight("w", 2, 2)
        with pytest.raises(DivergedError):
            gradient_check(lambda: T.sum_(T.log(w * 0.0)), store)
