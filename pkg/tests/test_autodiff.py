import numpy as np
import pytest

from jgcount import autodiff as ad
from jgcount.autodiff import SGD, Adam, ShapeError, Tensor, make_optimizer
from jgcount.checks import GRADCHECK_EPS, GRADCHECK_TOL, check_ops, op_cases


def test_matmul_identity():
    m = Tensor(np.arange(6.0).reshape(3, 2))
    assert np.array_equal(ad.matmul(Tensor(np.eye(3)), m).data, m.data)


def test_softmax_uniform():
    assert np.allclose(ad.softmax(Tensor(np.zeros((1, 3)))).data, 1 / 3)


def test_sigmoid_zero():
    assert ad.sigmoid(Tensor([[0.0]])).item() == 0.5


def test_matmul_shape_error_reports_dims():
    with pytest.raises(ShapeError, match=r"\(2, 3\) @ \(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))


def test_tensors_are_2d():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 2, 2)))


def test_sum_grad_all_ones():
    w = Tensor(np.array([[1.0, -2.0], [3.0, 0.5]]), requires_grad=True)
    ad.backward(ad.sum(w))
    assert np.array_equal(w.grad, np.ones((2, 2)))


def test_sigmoid_grad_quarter():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    ad.sum(ad.sigmoid(x)).backward()
    assert np.allclose(x.grad, 0.25)


def test_backward_needs_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        ad.backward(x * 2.0)


def test_backward_before_forward():
    with pytest.raises(RuntimeError):
        ad.backward(Tensor([[1.0]], requires_grad=True))


def test_grads_accumulate_over_shared_use():
    x = Tensor([[2.0]], requires_grad=True)
    ad.backward(x * x + x)
    assert x.grad[0, 0] == pytest.approx(5.0)


def test_log_of_nonpositive():
    with pytest.raises(FloatingPointError):
        ad.log(Tensor([[0.0]]))


@pytest.mark.parametrize("name", sorted(op_cases()))
def test_op_gradcheck(name):
    fn, params = op_cases()[name]
    assert ad.gradcheck(fn, params, GRADCHECK_EPS) < GRADCHECK_TOL


def test_check_ops_covers_every_case():
    assert set(check_ops()) == set(op_cases())


def test_segment_softmax_sums_to_one_per_segment():
    x = Tensor(np.random.default_rng(0).normal(size=(6, 2)))
    seg = np.array([0, 0, 1, 2, 2, 2])
    out = ad.segment_softmax(x, seg, 3).data
    for s in range(3):
        assert np.allclose(out[seg == s].sum(axis=0), 1.0)


def test_segment_sum_empty_segment_is_zero():
    out = ad.segment_sum(Tensor(np.ones((2, 1))), [0, 0], 3).data
    assert out.tolist() == [[2.0], [0.0], [0.0]]


def test_sgd_step():
    p = Tensor([[1.0]], requires_grad=True)
    p.grad[...] = 2.0
    SGD([p], 0.1).step()
    assert p.item() == pytest.approx(0.8)


@pytest.mark.parametrize("scheme", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters(scheme):
    p = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    before = p.data.copy()
    make_optimizer(scheme, [p], 0.1).step()
    assert np.array_equal(p.data, before)


def test_adam_first_step_magnitude_is_lr():
    p = Tensor(np.zeros((3, 2)), requires_grad=True)
    p.grad[...] = 1.0
    Adam([p], lr=0.01).step()
    assert np.allclose(p.data, -0.01, rtol=1e-6)


def test_nonfinite_gradient_aborts_step():
    p = Tensor([[1.0]], requires_grad=True, name="w")
    p.grad[...] = np.nan
    with pytest.raises(FloatingPointError, match="w"):
        SGD([p], 0.1).step()
    assert p.item() == 1.0


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", [], 0.1)
