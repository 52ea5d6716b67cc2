import numpy as np
import pytest

from autodiff import (
    Tape, Tensor, add, concat, gradients, matmul, mean, multiply, one_hot, reduce_sum, relu,
    reshape, sgd_step, sigmoid, slice_last, softmax_cross_entropy,
)
from errors import ShapeError, TargetIndexError

EPS = 1e-5


def relative_error(analytic, numeric):
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return diff / scale


def numeric_gradient(fn, arrays, index):
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    for pos in np.ndindex(grad.shape):
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[index][pos] += EPS
        minus[index][pos] -= EPS
        grad[pos] = (fn(*plus) - fn(*minus)) / (2 * EPS)
    return grad


def check_op(build, arrays, seed):
    """build(*tensors) -> Tensor; the scalar tested is sum(output * fixed random weights)."""
    out_shape = build(*[Tensor(a) for a in arrays]).shape
    weights = np.random.default_rng(seed + 10_000).normal(size=out_shape)

    def scalar(*raw):
        return float(np.sum(build(*[Tensor(a) for a in raw]).data * weights))

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = reduce_sum(multiply(build(*tensors), weights))
    analytic = gradients(loss, tensors)
    for i in range(len(arrays)):
        assert relative_error(analytic[i], numeric_gradient(scalar, arrays, i)) < 1e-4


SEEDS = range(20)


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    check_op(matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_broadcast_add_and_multiply_gradients(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=(5, 3)), rng.normal(size=(3,))]
    check_op(add, arrays, seed)
    check_op(multiply, arrays, seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    check_op(sigmoid, [x], seed)
    check_op(relu, [x], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    targets = rng.integers(0, 4, size=6)
    check_op(lambda z: softmax_cross_entropy(z, targets), [rng.normal(size=(6, 4)) * 3], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_structural_op_gradients(seed):
    rng = np.random.default_rng(seed)
    check_op(lambda a, b: concat([a, b]), [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))], seed)
    check_op(mean, [rng.normal(size=(5, 3))], seed)
    check_op(lambda a: slice_last(a, 1, 3), [rng.normal(size=(2, 4))], seed)
    check_op(lambda a: reshape(a, (1, 6)), [rng.normal(size=(6,))], seed)


def test_tape_is_topologically_ordered():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    h = relu(matmul(x, w))
    loss = reduce_sum(add(h, h))
    tape = Tape.record(loss)

    position = {node.node_id: i for i, node in enumerate(tape.nodes)}
    assert len(position) == len(tape.nodes)
    for _, inputs, output in tape.entries:
        assert all(position[i] < position[output] for i in inputs)


def test_shared_node_gradient_accumulates():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    (grad,) = gradients(reduce_sum(multiply(x, x)), [x])
    assert np.array_equal(grad, np.array([4.0, -2.0]))


def test_backward_stores_grad_and_gradients_does_not():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = reduce_sum(multiply(x, 3.0))
    gradients(loss, [x])
    assert x.grad is None
    loss.backward()
    assert np.array_equal(x.grad, np.array([3.0, 3.0]))


def test_unused_tensor_gets_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    grads = gradients(reduce_sum(x), [x, unused])
    assert np.array_equal(grads[1], np.zeros((2, 2)))


def test_gradients_requires_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        gradients(multiply(x, 2.0), [x])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as excinfo:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "(2, 3)" in str(excinfo.value) and "(4, 2)" in str(excinfo.value)


def test_cross_entropy_rejects_out_of_range_target():
    with pytest.raises(TargetIndexError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(IndexError):
        softmax_cross_entropy(Tensor(np.zeros((1, 3))), [-1])


def test_cross_entropy_is_finite_for_huge_logits():
    logits = Tensor(np.array([[1e4, -1e4, 0.0]]), requires_grad=True)
    loss = softmax_cross_entropy(logits, [1])
    (grad,) = gradients(loss, [logits])
    assert np.isfinite(loss.item()) and np.all(np.isfinite(grad))
    assert loss.item() == pytest.approx(2e4)


def test_sigmoid_saturates_without_overflow():
    out = sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[1] == 0.5 and out[2] == 1.0


def test_one_hot_rows_and_range():
    assert np.array_equal(one_hot([2, 0], 3).data, np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
    with pytest.raises(TargetIndexError):
        one_hot([3], 3)


def test_sgd_step_returns_new_tensors():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (updated,) = sgd_step([p], [np.array([0.5, -0.5])], 0.1)
    assert np.allclose(updated.data, [0.95, 2.05])
    assert np.array_equal(p.data, [1.0, 2.0])
    assert updated.requires_grad and updated is not p


def test_sgd_step_errors():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        sgd_step([p], [np.ones(2)], -0.1)
    with pytest.raises(ShapeError):
        sgd_step([p], [np.ones(3)], 0.1)
    with pytest.raises(ShapeError):
        sgd_step([p], [], 0.1)


def test_tensor_data_is_read_only():
    t = Tensor(np.zeros(2))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


def test_gradient_of_summed_losses_is_sum_of_gradients():
    rng = np.random.default_rng(21)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x1, x2 = rng.normal(size=(5, 4)), rng.normal(size=(6, 4))
    y1, y2 = rng.integers(0, 3, size=5), rng.integers(0, 3, size=6)

    def loss(x, y):
        return softmax_cross_entropy(matmul(Tensor(x), w), y)

    (g1,) = gradients(loss(x1, y1), [w])
    (g2,) = gradients(loss(x2, y2), [w])
    (total,) = gradients(add(loss(x1, y1), loss(x2, y2)), [w])
    assert np.max(np.abs(total - (g1 + g2))) < 1e-12
