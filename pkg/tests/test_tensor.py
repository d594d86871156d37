import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from stepqa.errors import NumericsError, ShapeError
from stepqa.tensor import (
    Graph, Tensor, add, add_bias, affine, concat_cols, cross_entropy,
    matmul, mean_scalars, mul, prelu, sgd_step, sigmoid, softmax_rows,
    take_row, tanh, transpose, zeros,
)


def t64(data, **kw):
    return Tensor(np.asarray(data, dtype=np.float64), **kw)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_tensor_is_strictly_2d():
    with pytest.raises(ShapeError):
        Tensor(np.zeros(3))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2, 2)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_item_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor([[1.0, 2.0]]).item()


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(a, Tensor(np.eye(2, dtype=np.float32)))
    npt.assert_array_equal(out.data, a.data)


def test_matmul_hand_arithmetic():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    npt.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associativity(seed):
    rng = np.random.default_rng(seed)
    dims = rng.integers(1, 8, size=4)
    a = Tensor(rng.standard_normal((dims[0], dims[1])).astype(np.float32))
    b = Tensor(rng.standard_normal((dims[1], dims[2])).astype(np.float32))
    c = Tensor(rng.standard_normal((dims[2], dims[3])).astype(np.float32))
    left = matmul(matmul(a, b), c).data
    right = matmul(a, matmul(b, c)).data
    npt.assert_allclose(left, right, rtol=1e-5, atol=1e-5)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def test_softmax_symmetry():
    npt.assert_allclose(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_softmax_closed_form():
    out = softmax_rows(t64([[math.log(1.0), math.log(3.0)]]))
    npt.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-12)


def test_softmax_shift_invariance_small():
    npt.assert_allclose(softmax_rows(Tensor([[5.0, 5.0]])).data, [[0.5, 0.5]])


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = Tensor((rng.standard_normal((rng.integers(1, 7), rng.integers(1, 9)))
                * 10).astype(np.float32))
    sums = softmax_rows(x).data.sum(axis=1)
    npt.assert_allclose(sums, 1.0, atol=1e-6)


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(-32, 32))
def test_softmax_shift_invariance_bitwise_f64_integer_grid(seed, shift):
    # Integer-valued inputs and shifts keep every stabilization subtraction
    # exact, so the invariance must hold bitwise in 64-bit mode.
    rng = np.random.default_rng(seed)
    x = rng.integers(-8, 9, size=(3, 5)).astype(np.float64)
    base = softmax_rows(Tensor(x)).data
    shifted = softmax_rows(Tensor(x + float(shift))).data
    assert (base == shifted).all()


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_softmax_shift_invariance_f32_tolerance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 6)).astype(np.float32)
    shift = np.float32(rng.uniform(-3, 3))
    npt.assert_allclose(softmax_rows(Tensor(x + shift)).data,
                        softmax_rows(Tensor(x)).data, atol=1e-6)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def test_prelu_definition():
    slope = Tensor([[0.25]])
    out = prelu(Tensor([[2.0, -2.0, 0.0]]), slope)
    npt.assert_array_equal(out.data, [[2.0, -0.5, 0.0]])


def test_sigmoid_tanh_at_zero():
    assert sigmoid(Tensor([[0.0]])).item() == 0.5
    assert tanh(Tensor([[0.0]])).item() == 0.0


# ---------------------------------------------------------------------------
# concat / take_row
# ---------------------------------------------------------------------------

def test_concat_shape_law():
    parts = [Tensor(np.full((3, 8), float(i))) for i in range(4)]
    out = concat_cols(parts)
    assert out.shape == (3, 32)
    npt.assert_array_equal(out.data[:, 8:16], np.ones((3, 8)))


def test_concat_single_part_identity():
    x = Tensor([[1.0, 2.0]])
    npt.assert_array_equal(concat_cols([x]).data, x.data)


def test_concat_row_mismatch():
    with pytest.raises(ShapeError):
        concat_cols([Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4)))])


def test_take_row_out_of_range():
    with pytest.raises(IndexError):
        take_row(Tensor(np.zeros((2, 2))), 2)


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------

def test_cross_entropy_uniform_logits():
    loss = cross_entropy(t64([[0.0, 0.0, 0.0, 0.0]]), 1)
    assert loss.item() == pytest.approx(math.log(4.0), rel=1e-12)


def test_cross_entropy_confident_correct():
    loss = cross_entropy(t64([[10.0, -10.0]]), 0)
    assert loss.item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)


def test_cross_entropy_confident_wrong():
    loss = cross_entropy(t64([[0.0, 100.0]]), 0)
    assert loss.item() == pytest.approx(100.0, rel=1e-12)


def test_cross_entropy_truth_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(Tensor([[0.0, 0.0]]), 2)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_backward_square():
    w = t64([[3.0]], requires_grad=True)
    with Graph() as g:
        loss = mul(w, w)
    g.backward(loss)
    npt.assert_allclose(w.grad, [[6.0]])


def test_backward_constant_loss_leaves_grads_none():
    w = t64([[3.0]], requires_grad=True)
    with Graph() as g:
        loss = t64([[7.0]])
    g.backward(loss)
    assert w.grad is None   # treated as zero downstream


def test_backward_accumulates_shared_parameter():
    # w referenced through two separate graph paths must sum contributions
    w = t64([[2.0]], requires_grad=True)
    with Graph() as g:
        loss = add(mul(w, w), mul(w, w))
    g.backward(loss)
    npt.assert_allclose(w.grad, [[8.0]])


def test_backward_requires_scalar_loss():
    x = t64([[1.0, 2.0]], requires_grad=True)
    with Graph() as g:
        y = affine(x, 2.0)
    with pytest.raises(ValueError):
        g.backward(y)


def test_backward_twice_rejected():
    w = t64([[1.0]], requires_grad=True)
    with Graph() as g:
        loss = mul(w, w)
    g.backward(loss)
    with pytest.raises(RuntimeError):
        g.backward(loss)


def test_no_graph_means_no_recording():
    w = t64([[1.0]], requires_grad=True)
    out = mul(w, w)
    assert not out.requires_grad


def test_add_bias_gradient_is_column_sum():
    x = t64(np.ones((3, 2)), requires_grad=True)
    b = t64([[1.0, -1.0]], requires_grad=True)
    with Graph() as g:
        out = add_bias(x, b)
        loss = matmul(matmul(t64(np.ones((1, 3))), out), t64(np.ones((2, 1))))
    g.backward(loss)
    npt.assert_allclose(b.grad, [[3.0, 3.0]])
    npt.assert_allclose(x.grad, np.ones((3, 2)))


def test_transpose_and_mean_scalars():
    x = t64([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    with Graph() as g:
        y = transpose(x)
        total = mean_scalars([take_row(matmul(y, t64([[1.0], [1.0]])), 0),
                              take_row(matmul(y, t64([[1.0], [1.0]])), 1)])
    g.backward(total)
    assert total.item() == pytest.approx(5.0)
    npt.assert_allclose(x.grad, np.full((2, 2), 0.5))


# ---------------------------------------------------------------------------
# numerics guard
# ---------------------------------------------------------------------------

@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_non_finite_forward_aborts_naming_op():
    big = Tensor(np.full((1, 1), 3e38, dtype=np.float32))
    with pytest.raises(NumericsError, match="add"):
        add(big, big)


# ---------------------------------------------------------------------------
# sgd
# ---------------------------------------------------------------------------

def test_sgd_definition():
    p = Tensor([[1.0]])
    sgd_step([p], [np.array([[0.5]], dtype=np.float32)], lr=0.002)
    assert p.data[0, 0] == pytest.approx(0.999)


def test_sgd_zero_grad_and_zero_lr_are_identity():
    p = Tensor([[1.0]])
    before = p.data.copy()
    sgd_step([p], [np.zeros((1, 1), dtype=np.float32)], lr=0.1)
    npt.assert_array_equal(p.data, before)
    sgd_step([p], [np.ones((1, 1), dtype=np.float32)], lr=0.0)
    npt.assert_array_equal(p.data, before)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step([Tensor([[1.0]])], [np.zeros((2, 1))], lr=0.1)
    with pytest.raises(ValueError):
        sgd_step([Tensor([[1.0]])], [], lr=0.1)


def test_zeros_helper():
    z = zeros(2, 3, dtype=np.float64)
    assert z.shape == (2, 3) and z.data.dtype == np.float64
