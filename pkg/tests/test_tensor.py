"""Autodiff engine: forward oracles against numpy, gradients against
central finite differences, and the graph lifecycle contracts."""

import numpy as np
import pytest

from seqdiff import tensor as T
from seqdiff.errors import ContractError, NumericError, ShapeError
from seqdiff.tensor import Tensor, backward, grad_check, no_grad


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=grad)


def test_add_mul_forward_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4)).astype(np.float32)
    b = rng.standard_normal((3, 4)).astype(np.float32)
    np.testing.assert_allclose((t(a) + t(b)).data, a + b, rtol=1e-6)
    np.testing.assert_allclose((t(a) * t(b)).data, a * b, rtol=1e-6)
    np.testing.assert_allclose((t(a) - t(b)).data, a - b, rtol=1e-6)
    np.testing.assert_allclose((t(a) / (t(b) + 10.0)).data, a / (b + 10.0), rtol=1e-5)


def test_scalar_lift_and_operator_sugar():
    x = t([1.0, 2.0])
    y = 2.0 * x + 1.0
    np.testing.assert_allclose(y.data, [3.0, 5.0])
    backward(y.sum())
    np.testing.assert_allclose(x.grad, [2.0, 2.0])


def test_backward_requires_scalar():
    x = t([[1.0, 2.0]])
    with pytest.raises(ContractError):
        backward(x + 1.0)


def test_broadcast_backward_sums_over_expanded_axes():
    x = t(np.ones((2, 3)))
    b = t(np.ones(3))
    backward((x + b).sum())
    np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])
    np.testing.assert_allclose(x.grad, np.ones((2, 3)))


def test_matmul_forward_and_shape_error():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 3)).astype(np.float32)
    b = rng.standard_normal((3, 5)).astype(np.float32)
    np.testing.assert_allclose((t(a) @ t(b)).data, a @ b, rtol=1e-5)
    with pytest.raises(ShapeError) as exc:
        t(a) @ t(rng.standard_normal((4, 2)).astype(np.float32))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_matmul_batched_broadcast_gradient():
    rng = np.random.default_rng(2)
    a = t(rng.standard_normal((4, 3, 2)))
    b = t(rng.standard_normal((2, 5)))  # shared across the batch
    w = Tensor(rng.standard_normal((4, 3, 5)).astype(np.float32))

    def f():
        return ((a @ b) * w).sum()

    assert grad_check(f, [a, b]) < 1e-4


def test_softmax_rows_sum_to_one_and_reject_nan():
    rng = np.random.default_rng(3)
    x = t(rng.standard_normal((5, 7)))
    s = T.softmax(x, axis=-1)
    np.testing.assert_allclose(s.data.sum(-1), np.ones(5), rtol=1e-5)
    bad = np.ones((2, 2), dtype=np.float32)
    bad[0, 0] = np.nan
    with pytest.raises(NumericError):
        T.softmax(Tensor(bad))


def test_softmax_shift_invariance():
    x = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x + 1000.0)).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_layer_norm_zero_mean_unit_var():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 8)).astype(np.float32) * 3 + 2
    g = Tensor(np.ones(8, dtype=np.float32), requires_grad=True)
    b = Tensor(np.zeros(8, dtype=np.float32), requires_grad=True)
    y = T.layer_norm(Tensor(x), g, b).data
    np.testing.assert_allclose(y.mean(-1), np.zeros(6), atol=1e-5)
    np.testing.assert_allclose(y.var(-1), np.ones(6), atol=1e-3)


def test_embedding_gather_and_scatter_grad():
    table = t(np.arange(12, dtype=np.float32).reshape(4, 3))
    ids = np.array([[0, 2], [2, 2]])
    out = T.embedding(table, ids)
    np.testing.assert_allclose(out.data[0, 1], [6.0, 7.0, 8.0])
    backward(out.sum())
    # row 2 looked up three times, row 0 once, rows 1 and 3 never
    np.testing.assert_allclose(table.grad[:, 0], [1.0, 0.0, 3.0, 0.0])
    with pytest.raises(ContractError):
        T.embedding(table, np.array([4]))


def test_masked_nll_oracle():
    # two positions, vocab 3; weight zero must drop the second entirely
    logits = t([[1.0, 0.0, -1.0], [0.5, 0.5, 0.5]])
    targets = np.array([0, 2])
    weights = np.array([1.0, 0.0])
    loss = T.masked_nll(logits, targets, weights)
    row = np.array([1.0, 0.0, -1.0])
    expected = np.log(np.exp(row).sum()) - 1.0
    np.testing.assert_allclose(loss.data, expected, rtol=1e-6)
    backward(loss)
    np.testing.assert_allclose(logits.grad[1], np.zeros(3), atol=0)


def test_masked_nll_contracts():
    logits = t(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        T.masked_nll(logits, np.array([0, 3]), np.ones(2))
    with pytest.raises(ShapeError):
        T.masked_nll(logits, np.array([0]), np.ones(1))


def test_conv1d_worked_examples():
    # averaging kernel, stride 2: [1,3,5,7] -> [2,6]
    x = Tensor(np.array([1.0, 3.0, 5.0, 7.0], dtype=np.float32))
    k = Tensor(np.array([0.5, 0.5], dtype=np.float32))
    out = T.conv1d(x, k, stride=2, causal=False)
    np.testing.assert_allclose(out.data, [2.0, 6.0])
    # output length is ceil(L / stride)
    x5 = Tensor(np.ones(5, dtype=np.float32))
    assert T.conv1d(x5, k, stride=2).data.shape == (3,)


def test_conv1d_causal_uses_left_padding_only():
    x = Tensor(np.array([[1.0], [2.0], [3.0]], dtype=np.float32), requires_grad=True)
    k = Tensor(np.array([[1.0], [0.0], [0.0]], dtype=np.float32))  # pick oldest tap
    out = T.conv1d(x, k, stride=1, causal=True)
    # width-3 causal kernel selecting the oldest input: [0, 0, 1]
    np.testing.assert_allclose(out.data[:, 0], [0.0, 0.0, 1.0])


def test_take_and_concat_roundtrip_gradient():
    rng = np.random.default_rng(5)
    x = t(rng.standard_normal((3, 6)))
    left = x[:, :2]
    right = x[:, 2:]
    y = T.concat([left, right], axis=1)
    backward((y * y).sum())
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-5)


def test_detach_blocks_gradient_entirely():
    x = t([3.0])
    y = x * 2.0
    z = y.detach() * 5.0 + x
    backward(z.sum())
    np.testing.assert_allclose(x.grad, [1.0])  # only the direct path


def test_no_grad_builds_no_graph():
    x = t([1.0, 2.0])
    with no_grad():
        y = (x * x).sum()
    assert y._backward is None and y._parents == ()
    assert not y.requires_grad


def test_graph_released_after_backward():
    x = t([1.0, 2.0])
    y = (x * x).sum()
    mid = y
    backward(y)
    assert mid._backward is None and mid._parents == ()


def test_second_backward_accumulates_into_grad():
    x = t([1.0])
    backward((x * 3.0).sum())
    backward((x * 2.0).sum())
    np.testing.assert_allclose(x.grad, [5.0])


@pytest.mark.parametrize("seed", range(6))
def test_elementwise_op_gradients(seed):
    rng = np.random.default_rng(seed)
    x = t(rng.standard_normal((4, 5)) * 0.8)
    w = Tensor(rng.standard_normal((4, 5)).astype(np.float32))
    ops = [T.exp, T.silu, T.softplus, T.sigmoid, T.tanh,
           lambda v: T.log(v * v + 1.5), lambda v: T.sqrt(v * v + 0.5)]
    for op in ops:
        def f():
            return (op(x) * w).sum()
        assert grad_check(f, [x], rng=np.random.default_rng(seed)) < 1e-4


@pytest.mark.parametrize("seed", range(4))
def test_fused_op_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    x = t(rng.standard_normal((3, 4, 6)))
    g = t(rng.standard_normal(6) * 0.3 + 1.0)
    b = t(rng.standard_normal(6) * 0.1)
    w = Tensor(rng.standard_normal((3, 4, 6)).astype(np.float32))
    targets = rng.integers(0, 6, size=(3, 4))
    weights = rng.random((3, 4))

    checks = [
        (lambda: (T.softmax(x, axis=-1) * w).sum(), [x]),
        (lambda: (T.layer_norm(x, g, b) * w).sum(), [x, g, b]),
        (lambda: T.masked_nll(x, targets, weights), [x]),
        (lambda: (T.flip(x, axis=1) * w).sum(), [x]),
        (lambda: (x.mean(axis=1) ** 2).sum(), [x]),
    ]
    for f, params in checks:
        assert grad_check(f, params, rng=np.random.default_rng(seed)) < 1e-4


@pytest.mark.parametrize("stride,causal", [(1, False), (1, True), (2, False), (3, True)])
def test_conv1d_gradients(stride, causal):
    rng = np.random.default_rng(7)
    x = t(rng.standard_normal((2, 9, 3)))
    k = t(rng.standard_normal((4, 3)) * 0.5)
    out_shape = T.conv1d(x, k, stride=stride, causal=causal).shape
    w = Tensor(rng.standard_normal(out_shape).astype(np.float32))

    def f():
        return (T.conv1d(x, k, stride=stride, causal=causal) * w).sum()

    assert grad_check(f, [x, k], rng=np.random.default_rng(8)) < 1e-4


def test_grad_check_restores_float32_params():
    x = t([1.0, 2.0])
    grad_check(lambda: (x * x).sum(), [x])
    assert x.data.dtype == np.float32
    assert x.grad is None
