import numpy as np
import pytest

from app.core import tensor as tn
from app.core.errors import ContractError, DimensionError, GraphStateError, NumericalError
from app.utils.gradcheck import check_gradients


def test_matmul_identity_and_hand_example():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(tn.matmul(tn.tensor(np.eye(3)), tn.tensor(a)).data, a)
    out = tn.matmul(tn.tensor([[1.0, 2.0]]), tn.tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        tn.matmul(tn.tensor(np.ones((2, 3))), tn.tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences(float64, rng):
    a, b = tn.parameter(rng.standard_normal((3, 4))), tn.parameter(rng.standard_normal((4, 2)))
    result = check_gradients("matmul", lambda: tn.sum_(tn.matmul(a, b)), {"a": a, "b": b})
    assert result.max_rel_error < 1e-6


def test_softmax_rows():
    assert np.allclose(tn.softmax_rows(tn.tensor([0.0, 0.0, 0.0])).data, 1 / 3)
    out = tn.softmax_rows(tn.tensor([1000.0, 0.0])).data
    assert np.isfinite(out).all()
    assert out[0] == pytest.approx(1.0)
    assert out[1] == pytest.approx(0.0, abs=1e-12)


def test_softmax_gradient(float64, rng):
    x = tn.parameter(rng.standard_normal((2, 5)))
    w = tn.tensor(rng.standard_normal((2, 5)))
    result = check_gradients("softmax", lambda: tn.sum_(tn.softmax_rows(x) * w), {"x": x})
    assert result.max_rel_error < 1e-6


def test_layer_norm_constant_row_and_moments(float64, rng):
    gain, bias = tn.tensor(np.ones(4)), tn.tensor(np.zeros(4))
    assert np.array_equal(tn.layer_norm(tn.tensor(np.full((1, 4), 3.0)), gain, bias).data, np.zeros((1, 4)))
    x = rng.standard_normal((5, 64))
    out = tn.layer_norm(tn.tensor(x), tn.tensor(np.ones(64)), tn.tensor(np.zeros(64))).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    # eps = 1e-5 shifts the variance slightly below one.
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-3


def test_layer_norm_zero_length_axis():
    with pytest.raises(DimensionError):
        tn.layer_norm(tn.tensor(np.ones((2, 0))), tn.tensor(np.ones(0)), tn.tensor(np.zeros(0)))


def test_conv3d_identity_and_counting():
    x = np.random.default_rng(1).standard_normal((1, 1, 2, 4, 4))
    out = tn.conv3d(tn.tensor(x), tn.tensor(np.ones((1, 1, 1, 1, 1))))
    assert np.allclose(out.data, x)

    ones = tn.tensor(np.ones((1, 1, 4, 4, 4)))
    out = tn.conv3d(ones, tn.tensor(np.ones((1, 1, 3, 3, 3))), padding=1)
    assert out.shape == (1, 1, 4, 4, 4)
    assert np.all(out.data[0, 0, 1:3, 1:3, 1:3] == 27.0)


def test_conv3d_kernel_larger_than_input():
    with pytest.raises(DimensionError):
        tn.conv3d(tn.tensor(np.ones((1, 1, 2, 2, 2))), tn.tensor(np.ones((1, 1, 3, 3, 3))))


def test_conv3d_kernel_gradient(float64, rng):
    x = tn.tensor(rng.standard_normal((1, 2, 3, 4, 4)))
    k = tn.parameter(rng.standard_normal((2, 2, 3, 3, 3)))
    w = tn.tensor(rng.standard_normal((1, 2, 3, 4, 4)))
    result = check_gradients("conv3d", lambda: tn.sum_(tn.conv3d(x, k, padding=1) * w), {"kernel": k})
    assert result.max_rel_error < 1e-5


def test_conv1x1_identity_and_channel_sum(float64, rng):
    x = rng.standard_normal((2, 3, 4, 4))
    assert np.allclose(tn.conv1x1(tn.tensor(x), tn.tensor(np.eye(3))).data, x)
    two = rng.standard_normal((1, 2, 3, 3))
    summed = tn.conv1x1(tn.tensor(two), tn.tensor([[1.0, 1.0]])).data
    assert np.allclose(summed[:, 0], two[:, 0] + two[:, 1])
    with pytest.raises(DimensionError):
        tn.conv1x1(tn.tensor(x), tn.tensor(np.ones((1, 2))))


def test_conv1x1_gradient(float64, rng):
    x = tn.parameter(rng.standard_normal((2, 3, 2, 2)))
    k = tn.parameter(rng.standard_normal((2, 3)))
    w = tn.tensor(rng.standard_normal((2, 2, 2, 2)))
    result = check_gradients("conv1x1", lambda: tn.sum_(tn.conv1x1(x, k) * w), {"x": x, "kernel": k})
    assert result.max_rel_error < 1e-6


def test_backward_sum_and_square():
    x = tn.parameter(np.array([1.0, -2.0, 3.0]))
    tn.backward(tn.sum_(x))
    assert np.array_equal(x.grad, np.ones(3))

    y = tn.parameter(np.array([1.0, -2.0, 3.0]))
    tn.backward(tn.sum_(y * y))
    assert np.array_equal(y.grad, 2 * y.data)


def test_reductions_and_constants_stay_zero_dimensional():
    x = tn.parameter(np.arange(4.0).reshape(2, 2))
    assert tn.sum_(x).data.shape == ()
    assert tn.tensor(0.5).shape == ()
    assert np.array_equal((x * 0.5).data, 0.5 * x.data)
    tn.backward(tn.sum_(x * 3.0))
    assert np.array_equal(x.grad, np.full((2, 2), 3.0))


def test_backward_rejects_non_scalar_and_second_call():
    x = tn.parameter(np.ones(3))
    with pytest.raises(ContractError):
        tn.backward(x * 2.0)
    loss = tn.sum_(x * 2.0)
    tn.backward(loss)
    with pytest.raises(GraphStateError):
        tn.backward(loss)


def test_no_silent_broadcasting():
    with pytest.raises(DimensionError):
        tn.tensor(np.ones((2, 3))) + tn.tensor(np.ones(3))
    # Scalars and explicit expand are allowed.
    assert (tn.tensor(np.ones((2, 3))) * 2.0).shape == (2, 3)
    assert tn.expand(tn.tensor(np.ones((1, 3))), (2, 3)).shape == (2, 3)


def test_non_finite_forward_raises():
    with pytest.raises(NumericalError):
        tn.log(tn.tensor(np.array([0.0, 1.0])))


def test_abs_subgradient_at_zero_is_zero():
    x = tn.parameter(np.array([0.0, 2.0, -1.0]))
    tn.backward(tn.sum_(tn.abs_(x)))
    assert x.grad.tolist() == [0.0, 1.0, -1.0]


def test_precision_switch():
    with tn.precision("float64"):
        assert tn.tensor([1.0]).data.dtype == np.float64
    assert tn.tensor([1.0]).data.dtype == np.float32


def test_determinism(rng):
    data = rng.standard_normal((3, 4))
    w = np.random.default_rng(5).standard_normal((4, 2))
    first = tn.softmax_rows(tn.matmul(tn.tensor(data), tn.tensor(w))).data
    second = tn.softmax_rows(tn.matmul(tn.tensor(data), tn.tensor(w))).data
    assert np.array_equal(first, second)
