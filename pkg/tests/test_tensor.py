import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evisteer import tensor as T
from evisteer.errors import ContractError, DimensionError, DomainError, EvaluationError
from evisteer.gradcheck import grad_check
from evisteer.tensor import GradTape, Tensor, backward


def rand(rng, *shape, grad=True):
    return Tensor(rng.normal(size=shape), requires_grad=grad)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    out = T.matmul(Tensor([[3.0, 5.0]]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, [[3.0, 5.0]])


def test_matmul_hand_product():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_batched_shape():
    assert T.matmul(T.zeros(2, 3, 4), T.zeros(4, 2)).shape == (2, 3, 2)


def test_matmul_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(T.zeros(2, 3), T.zeros(4, 2))


def test_matmul_grad_batched_with_2d():
    rng = np.random.default_rng(0)
    a, b = rand(rng, 2, 3, 4), rand(rng, 4, 5)
    c = Tensor(rng.normal(size=(2, 3, 5)))
    assert grad_check(lambda: (T.matmul(a, b) * c).sum(), [a, b]) < 1e-6


def test_matmul_grad_both_batched():
    rng = np.random.default_rng(1)
    a, b = rand(rng, 2, 2, 3, 4), rand(rng, 2, 2, 4, 3)
    assert grad_check(lambda: T.square(T.matmul(a, b)).sum(), [a, b]) < 1e-6


# ---------------------------------------------------------------- elementwise


def test_softplus_at_zero_is_ln2():
    assert T.softplus(Tensor(0.0)).item() == pytest.approx(0.6931471805599453, abs=1e-16)


def test_softplus_asymptote():
    assert abs(T.softplus(Tensor(50.0)).item() - 50.0) < 1e-12


def test_softplus_no_overflow():
    out = T.softplus(Tensor([-800.0, 800.0]))
    assert out.data[0] >= 0 and out.data[1] == 800.0


def test_sigmoid_symmetry():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_reciprocal_zero_is_domain_error():
    with pytest.raises(DomainError):
        T.reciprocal(Tensor([1.0, 0.0]))


def test_elementwise_dispatch():
    x = Tensor([1.0, 2.0])
    np.testing.assert_allclose(T.elementwise(x, "square").data, [1.0, 4.0])
    np.testing.assert_allclose(T.elementwise(x, "add_scalar", 1.5).data, [2.5, 3.5])
    np.testing.assert_allclose(T.elementwise(x, "mul_scalar", -2).data, [-2.0, -4.0])
    with pytest.raises(ContractError):
        T.elementwise(x, "cosh")


@pytest.mark.parametrize("fn", ["square", "softplus", "sigmoid", "exp", "neg", "tanh"])
def test_elementwise_grads(fn):
    rng = np.random.default_rng(2)
    x = rand(rng, 3, 4)
    op = getattr(T, fn)
    c = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda: (op(x) * c).sum(), [x]) < 1e-6


def test_positive_domain_grads():
    rng = np.random.default_rng(3)
    x = Tensor(rng.uniform(0.2, 4.0, size=(5,)), requires_grad=True)
    for op in (T.log, T.reciprocal, T.sqrt, T.digamma, T.lgamma):
        assert grad_check(lambda: op(x).sum(), [x]) < 1e-6, op.__name__


@given(st.floats(-700, 700))
def test_softplus_positive_and_sigmoid_open_interval(v):
    assert T.softplus(Tensor(v)).item() > 0
    s = T.sigmoid(Tensor(min(max(v, -30), 30))).item()
    assert 0 < s < 1


# ---------------------------------------------------------------- reductions


def test_mean_hand():
    assert T.reduce(Tensor([0.2, 0.4]), "mean", 0).item() == pytest.approx(0.3, abs=1e-15)


def test_sum_zeros():
    assert T.reduce(T.zeros(3, 4), "sum").item() == 0.0


def test_mean_constant():
    assert T.reduce(Tensor(np.full((2, 5), 1.7)), "mean").item() == pytest.approx(1.7, abs=1e-15)


def test_invalid_axis():
    with pytest.raises(DimensionError):
        T.reduce(T.zeros(3, 4), "sum", axis=2)


def test_reduce_grads_keepdims():
    rng = np.random.default_rng(4)
    x = rand(rng, 2, 3, 4)
    w = Tensor(rng.normal(size=(2, 1, 4)))
    assert grad_check(lambda: (x.mean(axis=1, keepdims=True) * w).sum(), [x]) < 1e-6
    assert grad_check(lambda: T.square(x.sum(axis=(0, 2))).sum(), [x]) < 1e-6


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with GradTape() as tape:
        loss = x.sum()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_backward_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with GradTape() as tape:
        loss = T.square(x).sum()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_sigmoid_at_zero():
    x = Tensor([[1.0], [-2.0], [0.5]])
    w = Tensor([[0.0, 0.0, 0.0]], requires_grad=True)
    with GradTape() as tape:
        loss = T.sigmoid(T.matmul(w, x)).sum()
    backward(loss, tape)
    np.testing.assert_allclose(w.grad, 0.25 * x.data.T, atol=1e-15)


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        backward(y, tape)


def test_backward_accumulates_and_is_deterministic():
    rng = np.random.default_rng(5)
    x = rand(rng, 4)
    with GradTape() as tape:
        loss = T.softplus(x * x).sum()
    backward(loss, tape)
    first = x.grad.copy()
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 2 * first, rtol=1e-15)
    x.zero_grad()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, first)


def test_tape_is_topologically_ordered():
    rng = np.random.default_rng(6)
    x = rand(rng, 3)
    with GradTape() as tape:
        y = T.exp(x) * x
        z = (y + x).sum()
    seen = {id(x)}
    for node in tape.nodes:
        assert all(id(i) in seen or not i.requires_grad for i in node.inputs)
        seen.add(id(node.out))
    assert tape.nodes[-1].out is z


def test_no_tape_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    y = x * 2.0
    assert not y.requires_grad


# ---------------------------------------------------------------- broadcasting


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([((3, 4), (4,)), ((3, 4), (3, 1)), ((2, 3, 4), (1, 3, 1)), ((2, 1, 4), (3, 1)), ((), (2, 3))]),
    st.sampled_from(["add", "sub", "mul", "div"]),
    st.integers(0, 2**16),
)
def test_broadcast_grads_reduce_to_input_shapes(shapes, op, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.uniform(0.5, 2.0, size=shapes[0]), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 2.0, size=shapes[1]), requires_grad=True)
    f = getattr(T, op)
    assert grad_check(lambda: T.square(f(a, b)).sum(), [a, b]) < 1e-6
    assert a.grad is None and b.grad is None


# ---------------------------------------------------------------- composite ops


def test_softmax_layer_norm_gelu_grads():
    rng = np.random.default_rng(7)
    x = rand(rng, 2, 3, 5)
    w, b = rand(rng, 5), rand(rng, 5)
    c = Tensor(rng.normal(size=(2, 3, 5)))
    assert grad_check(lambda: (T.softmax(x, -1) * c).sum(), [x]) < 1e-6
    assert grad_check(lambda: (T.log_softmax(x, -1) * c).sum(), [x]) < 1e-6
    assert grad_check(lambda: (T.layer_norm(x, w, b) * c).sum(), [x, w, b]) < 1e-6
    assert grad_check(lambda: (T.gelu(x) * c).sum(), [x]) < 1e-6


def test_indexing_and_reshape_grads():
    rng = np.random.default_rng(8)
    x = rand(rng, 3, 4, 2)
    c = Tensor(rng.normal(size=(3, 2)))
    idx = np.array([3, 0, 3])
    assert grad_check(lambda: (x[np.arange(3), idx] * c).sum(), [x]) < 1e-6
    assert grad_check(lambda: T.square(x[..., :1].reshape(4, 3)).sum(), [x]) < 1e-6
    assert grad_check(lambda: T.square(T.concat([x, x * 2.0], axis=-1)).sum(), [x]) < 1e-6


# ---------------------------------------------------------------- grad_check itself


def test_grad_check_quadratic_is_tight():
    rng = np.random.default_rng(9)
    theta = rand(rng, 7)
    assert grad_check(lambda: T.mul_scalar(T.square(theta).sum(), 0.5), [theta]) < 1e-9


def test_grad_check_detects_wrong_gradient():
    x = Tensor([0.3, -1.2], requires_grad=True)

    def bad_square(t):
        return T._result(t.data**2, (t,), lambda g: (g * 3.0 * t.data,))

    assert grad_check(lambda: bad_square(x).sum(), [x]) > 0.1


def test_grad_check_nan_names_entry():
    x = Tensor([1.0, 2.0], requires_grad=True)

    def f():
        return Tensor(np.nan) if x.data[1] > 2.0 else x.sum()

    with pytest.raises(EvaluationError, match=r"entry \(1,\)"):
        grad_check(f, [x])


def test_grad_check_restores_params():
    x = Tensor([1.0, 2.0], requires_grad=False)
    before = x.data.copy()
    grad_check(lambda: T.square(x).sum(), [x])
    np.testing.assert_array_equal(x.data, before)
    assert not x.requires_grad and x.grad is None
