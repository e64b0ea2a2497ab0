"""Gradient correctness for every registered differentiable op."""

import numpy as np
import pytest

from coupalign.tensor import (
    ContractError,
    Tape,
    Tensor,
    backward,
    batch_norm,
    bilinear_upsample,
    concat,
    conv2d,
    exp,
    grad_check,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean,
    narrow,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    space_to_depth2,
    tanh,
    transpose,
    tsum,
)

SEEDS = (0, 1, 2)
TOL = 1e-4


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def test_backward_sum_is_ones():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
    with Tape():
        backward(tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with Tape():
        backward(tsum(x * x))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = x * x
        with pytest.raises(ContractError):
            backward(y)


def test_backward_requires_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = tsum(x * x)  # no active tape: nothing recorded
    with pytest.raises(ContractError):
        backward(y)


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape():
        backward(tsum(x * x + x * x))
    np.testing.assert_allclose(x.grad, [8.0])


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_arithmetic(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 3, 4), rand(rng, 3, 4)
    s = rand(rng, 1, 4)  # broadcast operand
    assert grad_check(lambda: tsum((a + b) * s - b), [a, b, s]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 4, 3), rand(rng, 3, 5)
    assert grad_check(lambda: tsum(matmul(a, b) * matmul(a, b)), [a, b]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("fn", [relu, tanh, sigmoid, softplus, exp])
def test_gradcheck_pointwise(seed, fn):
    rng = np.random.default_rng(seed)
    x = rand(rng, 4, 5)
    assert grad_check(lambda: tsum(fn(x) * fn(x)), [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_log(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.5, 3.0, (3, 4)), requires_grad=True, dtype=np.float64)
    assert grad_check(lambda: tsum(log(x)), [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("axis", [0, 1])
def test_gradcheck_softmax(seed, axis):
    rng = np.random.default_rng(seed)
    x = rand(rng, 4, 5)
    w = Tensor(rng.standard_normal((4, 5)))
    assert grad_check(lambda: tsum(softmax(x, axis=axis) * w), [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_masked_softmax(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 3, 5)
    mask = np.array([True, True, False, True, False])
    w = Tensor(rng.standard_normal((3, 5)))
    assert grad_check(lambda: tsum(softmax(x, axis=-1, mask=mask) * w), [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_logsumexp(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 4, 3)
    assert grad_check(lambda: tsum(logsumexp(x, axis=1)), [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_l2_normalize(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 3, 4)
    w = Tensor(rng.standard_normal((3, 4)))
    assert grad_check(lambda: tsum(l2_normalize(x) * w), [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("kh,stride", [(1, 1), (3, 1), (3, 2)])
def test_gradcheck_conv2d(seed, kh, stride):
    rng = np.random.default_rng(seed)
    x = rand(rng, 5, 5, 2)
    k = rand(rng, kh, kh, 2, 3)
    assert grad_check(lambda: tsum(conv2d(x, k, stride=stride) * conv2d(x, k, stride=stride)), [x, k]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_bilinear(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 3, 2, 2)
    w = Tensor(rng.standard_normal((6, 4, 2)))
    assert grad_check(lambda: tsum(bilinear_upsample(x, 2) * w), [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x, g, b = rand(rng, 4, 5), rand(rng, 5), rand(rng, 5)
    w = Tensor(rng.standard_normal((4, 5)))
    assert grad_check(lambda: tsum(layer_norm(x, g, b) * w), [x, g, b]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("training", [True, False])
def test_gradcheck_batch_norm(seed, training):
    rng = np.random.default_rng(seed)
    x, g, b = rand(rng, 6, 3), rand(rng, 3), rand(rng, 3)
    rm = Tensor(rng.standard_normal(3), dtype=np.float64)
    rv = Tensor(rng.uniform(0.5, 2.0, 3), dtype=np.float64)
    w = Tensor(rng.standard_normal((6, 3)))
    assert grad_check(
        lambda: tsum(batch_norm(x, g, b, rm, rv, training=training) * w), [x, g, b]
    ) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_shape_ops(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 2, 3), rand(rng, 2, 3)
    x = rand(rng, 4, 4, 2)

    def build():
        c = concat([a, b], axis=0)
        c = transpose(c, (1, 0))
        c = reshape(c, (2, 6))
        d = narrow(c, 1, 1, 3)
        e = space_to_depth2(x)
        return tsum(d * d) + mean(e * e) + tsum(scale(a, 0.5))

    assert grad_check(build, [a, b, x]) < TOL


def test_gradcheck_softmax_matmul_tight():
    rng = np.random.default_rng(7)
    a, b = rand(rng, 3, 3), rand(rng, 3, 3)
    w = Tensor(rng.standard_normal((3, 3)))
    err = grad_check(lambda: tsum(softmax(matmul(a, b), axis=-1) * w), [a, b])
    assert err < 1e-6


def test_gradcheck_constant_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True, dtype=np.float64)
    c = Tensor(np.full((1,), 3.0), dtype=np.float64)
    assert grad_check(lambda: tsum(c) + 0.0 * tsum(x * 0.0), [x]) == 0.0


def test_gradcheck_excludes_relu_kink():
    # one coordinate sits exactly on the kink; it must be skipped, not failed
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True, dtype=np.float64)
    assert grad_check(lambda: tsum(relu(x)), [x]) < TOL


def test_gradcheck_rejects_float32():
    x = Tensor(np.ones(2), requires_grad=True, dtype=np.float32)
    with pytest.raises(ContractError):
        grad_check(lambda: tsum(x), [x])


def test_tape_determinism():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        with Tape():
            loss = tsum(softmax(matmul(x, w), axis=-1) * sigmoid(x))
            backward(loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert np.array_equal(l1, l2)
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


def test_tape_consumed_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = tsum(x * x)
        assert len(tape) > 0
        backward(loss)
        assert len(tape) == 0
