import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from deepedm import tensor as T
from deepedm.tensor import ShapeError, Tensor

from oracles import central_diff, gelu_tanh, max_rel_err, softmax_loop

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def check_grads(build, arrays, tol=1e-5):
    """Compare backward() against central differences for every input array.

    Entries pass when ``|a - n| <= tol * max(|a|, |n|) + atol``; ``atol`` is
    scaled to the round-off of a central difference on ``f`` (about eps*|f|/h).
    """
    arrays = [np.array(a, dtype=float) for a in arrays]
    leaves = [leaf(a) for a in arrays]
    T.backward(build(*leaves))

    def f():
        return build(*[Tensor(a) for a in arrays]).item()

    atol = 1e-8 * max(1.0, abs(f()))
    for lf, arr in zip(leaves, arrays):
        num = central_diff(f, arr)
        scale = np.maximum(np.abs(lf.grad), np.abs(num))
        assert np.all(np.abs(lf.grad - num) <= tol * scale + atol), max_rel_err(lf.grad, num)


# -- matmul --------------------------------------------------------------------

def test_matmul_identity():
    out = T.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_selector_row():
    out = T.matmul(Tensor([[1.0, 0.0]]), Tensor([[2.0], [3.0]]))
    np.testing.assert_array_equal(out.data, [[2.0]])


def test_matmul_sum_grad_is_ones_times_b_transpose():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    T.backward(T.matmul(a, b).sum())
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)


def test_matmul_finite_difference():
    rng = np.random.default_rng(1)
    check_grads(lambda a, b: T.square(T.matmul(a, b)).sum(),
                [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])


def test_batched_matmul_with_shared_weight_finite_difference():
    rng = np.random.default_rng(2)
    check_grads(lambda a, b: T.tanh(T.matmul(a, b)).sum(),
                [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))])


def test_batched_matmul_both_batched_finite_difference():
    rng = np.random.default_rng(3)
    check_grads(lambda a, b: T.sigmoid(T.matmul(a, b)).sum(),
                [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 2))])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5, 2\)"):
        T.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))))


# -- softmax ---------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_softmax_large_logits_do_not_overflow():
    out = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)


def test_softmax_reference_values():
    out = T.softmax(Tensor([1.0, 2.0, 3.0])).data
    np.testing.assert_allclose(out, [0.09003057, 0.24472847, 0.66524096], atol=5e-9)
    np.testing.assert_allclose(out, softmax_loop([1.0, 2.0, 3.0]), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5), elements=finite),
       st.floats(-50, 50))
def test_softmax_simplex_and_shift_invariance(x, c):
    out = T.softmax(Tensor(x), axis=-1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.softmax(Tensor(x + c), axis=-1).data, out, atol=1e-12)


def test_softmax_finite_difference():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 4))
    check_grads(lambda x: (T.softmax(x, axis=-1) * Tensor(w)).sum(), [rng.normal(size=(3, 4))])


# -- elementwise -----------------------------------------------------------------

def test_elementwise_spot_values():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.gelu(Tensor(0.0)).item() == 0.0
    assert T.tabs(Tensor(-3.5)).item() == 3.5
    np.testing.assert_array_equal(T.sign(Tensor([-2.0, 0.0, 3.0])).data, [-1, 0, 1])


def test_gelu_matches_tanh_formula():
    x = np.linspace(-6, 6, 101)
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, gelu_tanh(x), rtol=1e-14, atol=1e-15)


def test_sigmoid_extreme_inputs_are_finite():
    out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
    np.testing.assert_array_equal(out, [0.0, 1.0])


@pytest.mark.parametrize("op", [T.gelu, T.relu, T.sigmoid, T.tanh, T.exp, T.tabs, T.square])
def test_unary_finite_difference(op):
    # keep inputs away from the kinks of relu and abs
    x = np.array([-2.3, -0.7, 0.4, 1.9, 3.1])
    check_grads(lambda a: (op(a) * Tensor(np.arange(1.0, 6.0))).sum(), [x])


def test_binary_ops_finite_difference():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(2, 3)), rng.uniform(1, 2, size=(2, 3))
    check_grads(lambda x, y: ((x + y) * (x - y) / y).sum(), [a, b])


def test_leading_broadcast_gradients_reduce():
    rng = np.random.default_rng(6)
    check_grads(lambda x, y: T.square(x * y + y).sum(), [rng.normal(size=(4, 2, 3)), rng.normal(size=(2, 3))])
    check_grads(lambda x, y: T.square(x - y).sum(), [rng.normal(size=(4, 3)), rng.normal(size=(1, 3))])


def test_trailing_broadcast_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 4))) + Tensor(np.ones((3, 1)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) * Tensor(np.ones(2))


def test_scalar_operand_broadcasts():
    x = leaf([1.0, 2.0])
    T.backward((x * 3.0 + 1.0).sum())
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_indexing_concat_stack_reshape_finite_difference():
    rng = np.random.default_rng(7)

    def build(x, y):
        a = x[..., 1:3]
        b = T.concat([a, y], axis=-1)
        c = T.stack([b, b * 2.0], axis=0).reshape(-1)
        return T.square(c).sum() + x[np.array([0, 0, 1])].sum()

    check_grads(build, [rng.normal(size=(2, 4)), rng.normal(size=(2, 2))])


def test_transpose_and_reductions_finite_difference():
    rng = np.random.default_rng(8)
    check_grads(lambda x: T.square(x.swapaxes(-1, -2).mean(axis=1)).sum() + x.sum(axis=0).mean(),
                [rng.normal(size=(2, 3, 4))])


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (4, 2), elements=finite))
def test_composed_graph_matches_finite_differences(a, b):
    def build(x, y):
        return (T.gelu(T.matmul(x, y)) * 0.1).sum() + T.sigmoid(x).mean()

    check_grads(build, [a, b], tol=1e-4)


# -- backward contract -------------------------------------------------------------

def test_sum_grad_is_ones():
    w = leaf(np.arange(5.0))
    T.backward(w.sum())
    np.testing.assert_array_equal(w.grad, np.ones(5))


def test_sum_of_squares_grad_is_twice_w():
    w = leaf([1.0, -2.0, 3.0])
    T.backward((w * w).sum())
    np.testing.assert_array_equal(w.grad, 2 * w.data)


def test_non_scalar_loss_rejected():
    with pytest.raises(ShapeError):
        T.backward(leaf([1.0, 2.0]) * 2.0)


def test_unreachable_params_get_zero_gradients():
    w, u = leaf([1.0, 2.0]), leaf([[3.0]])
    grads = T.backward((w * w).sum(), [w, u])
    np.testing.assert_array_equal(grads[id(u)], np.zeros((1, 1)))
    np.testing.assert_array_equal(grads[id(w)], [2.0, 4.0])


def test_detached_tensor_receives_no_gradient():
    w = leaf([1.0, 2.0])
    d = w.detach()
    T.backward((w * d).sum())
    assert d.grad is None and d.tape_id is None
    np.testing.assert_array_equal(w.grad, [1.0, 2.0])


def test_tape_is_topological_and_visits_each_node_once():
    x = leaf([1.0, 2.0])
    y = x * x
    z = y + x
    loss = (z * y).sum()
    tape = T.Tape.from_output(loss)
    ids = [id(n) for n in tape.nodes]
    assert len(ids) == len(set(ids))
    pos = {i: k for k, i in enumerate(ids)}
    for node in tape.nodes:
        for p in node._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]


def test_shared_subexpression_accumulates():
    x = leaf([3.0])
    y = x * 2.0
    T.backward((y * y + y).sum())  # d/dx (4x^2 + 2x) = 8x + 2
    np.testing.assert_allclose(x.grad, [26.0])


def test_backward_is_bitwise_deterministic():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(5, 6)), rng.normal(size=(6, 3))
    grads = []
    for _ in range(2):
        la, lb = leaf(a), leaf(b)
        T.backward(T.softmax(T.matmul(la, lb), axis=-1).mean() + T.gelu(la).sum())
        grads.append((la.grad.tobytes(), lb.grad.tobytes()))
    assert grads[0] == grads[1]


def test_shape_and_size_invariant():
    t = Tensor(np.zeros((2, 3, 4)))
    assert t.shape == (2, 3, 4) and t.size == 24 == int(np.prod(t.shape))
    assert t.data.dtype == np.float64 and t.data.flags["C_CONTIGUOUS"]
