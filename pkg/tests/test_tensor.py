import numpy as np
import pytest

from frpose import ops
from frpose.tensor import Graph, ShapeError, Tensor, active_graph, precision


def test_tensors_are_strictly_4d():
    Tensor(np.zeros((1, 1, 1, 1)))
    Tensor(np.zeros((2, 3, 4, 5)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((3, 4, 5)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 2, 3, 4, 5)))


def test_zero_extent_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 0, 4, 4)))


def test_default_dtype_and_precision_context():
    assert Tensor([[[[1.0]]]]).dtype == np.float32
    with precision("double"):
        assert Tensor([[[[1.0]]]]).dtype == np.float64
    assert Tensor([[[[1.0]]]]).dtype == np.float32
    # explicit float64 payloads keep their dtype either way
    assert Tensor(np.zeros((1, 1, 1, 1), dtype=np.float64)).dtype == np.float64
    with pytest.raises(ValueError):
        with precision("half"):
            pass


def test_item_requires_single_element():
    assert Tensor(np.full((1, 1, 1, 1), 2.5)).item() == 2.5
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 2, 1, 1))).item()


def test_ops_do_not_record_without_graph():
    x = Tensor(np.ones((1, 1, 3, 3)), requires_grad=True)
    y = ops.relu(x)
    assert y.requires_grad is False  # nothing listening
    assert active_graph() is None


def test_ops_do_not_record_without_requires_grad():
    with Graph() as g:
        x = Tensor(np.ones((1, 1, 3, 3)))
        ops.relu(x)
        assert len(g) == 0


def test_requires_grad_propagates_through_ops():
    with Graph() as g:
        x = Tensor(np.ones((1, 1, 3, 3)), requires_grad=True)
        y = ops.relu(x)
        z = ops.relu(y)
        assert y.requires_grad and z.requires_grad
        assert len(g) == 2


def test_backward_reaches_only_the_path_to_the_loss():
    rng = np.random.default_rng(0)
    with Graph() as g:
        x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        on_path = ops.relu(x)
        off_path = ops.sigmoid(x)  # recorded but never fed to the loss
        loss = ops.weighted_mse(on_path, Tensor(np.zeros_like(on_path.data)),
                                np.ones((1, 2)))
        g.backward(loss)
        assert x.grad is not None
        assert off_path.grad is None


def test_grads_accumulate_across_uses():
    with Graph() as g:
        x = Tensor(np.full((1, 1, 2, 2), 3.0), requires_grad=True)
        y = ops.add(x, x)
        g.backward(y, seed=np.ones_like(y.data))
    np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 2.0))


def test_graph_clears_on_exit():
    with Graph() as g:
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        ops.relu(x)
        assert len(g) == 1
    assert len(g) == 0


def test_gradient_shape_mismatch_rejected():
    t = Tensor(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ShapeError):
        t.accumulate_grad(np.zeros((1, 1, 3, 3)))
