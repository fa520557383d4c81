import numpy as np
import pytest

from molex import rng
from molex import tensor as T
from molex.tensor import Tensor

from helpers import assert_grads_close, finite_difference_grad


class TestMatmul:
    def test_identity(self):
        m = Tensor(np.arange(9.0).reshape(3, 3))
        out = T.matmul(Tensor(np.eye(3)), m)
        assert np.array_equal(out.data, m.data)

    def test_hand_multiplication(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        assert np.array_equal(out.data, [[17.0], [39.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(T.ShapeError) as err:
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)

    def test_batched_broadcast_gradient(self):
        a = Tensor(rng.gaussian(1, (2, 3, 4, 5)), requires_grad=True)
        b = Tensor(rng.gaussian(2, (5, 6)), requires_grad=True)
        out = T.matmul(a, b).sum()
        out.backward()
        fd = finite_difference_grad(lambda: T.matmul(a, b).sum(), [a, b])
        assert_grads_close(a.grad, fd[0], label="a")
        assert_grads_close(b.grad, fd[1], label="b")


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_stabilized_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        assert np.isfinite(out.data).all()
        assert out.data[0] > 1.0 - 1e-12 and out.data[1] < 1e-12

    def test_closed_form(self):
        out = T.softmax(Tensor([np.log(1.0), np.log(2.0), np.log(3.0)]))
        assert np.allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)

    def test_rows_sum_to_one(self):
        x = Tensor(rng.gaussian(3, (20, 7), 4.0))
        out = T.softmax(x, axis=-1)
        assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-12


class TestBackwardContracts:
    def test_sum_gives_ones(self):
        p = Tensor(rng.gaussian(4, (3, 5)), requires_grad=True)
        p.sum().backward()
        assert np.array_equal(p.grad, np.ones((3, 5)))

    def test_quadratic(self):
        p = Tensor(rng.gaussian(5, (7,)), requires_grad=True)
        ((p * p).sum() * 0.5).backward()
        assert np.allclose(p.grad, p.data, atol=1e-15)

    def test_non_scalar_loss_rejected(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (p * 2.0).backward()

    def test_untracked_never_allocates_grad(self):
        frozen = Tensor(rng.gaussian(6, (4, 4)))
        live = Tensor(rng.gaussian(7, (4, 4)), requires_grad=True)
        (T.matmul(frozen, live).sum()).backward()
        assert frozen.grad is None
        assert live.grad is not None

    def test_no_grad_blocks_graph(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            out = (p * 2.0).sum()
        assert out.requires_grad is False and out._backward is None


def _random_graph(seed):
    """A composed graph touching every primitive the backbone uses."""
    g = rng.stream(seed, "graph")
    w1 = Tensor(g.normal(0, 0.7, (4, 5)), requires_grad=True)
    w2 = Tensor(g.normal(0, 0.7, (5, 3)), requires_grad=True)
    bias = Tensor(g.normal(0, 0.5, (3,)), requires_grad=True)
    gain = Tensor(g.normal(1.0, 0.1, (5,)), requires_grad=True)
    x = Tensor(g.normal(0, 1.0, (6, 4)))

    def forward():
        h = T.matmul(x, w1)
        h = T.layer_norm(h, gain, Tensor(np.zeros(5)))
        h = T.gelu(h)
        h = T.matmul(h, w2) + bias
        h = T.softmax(h, axis=-1)
        picked = T.take(h, [0, 2], axis=1)
        joined = T.concat([picked, T.sigmoid(h)], axis=1)
        z = T.log(T.clip(joined, 1e-9, 1.0)) * -1.0
        z = T.reshape(z, (-1,))
        return (z.mean() + T.softplus(h.sum()) + T.sqrt((h * h).sum() + 1.0)
                + T.exp(h.mean() * 0.1) + (h.mean() ** 2.0)
                + T.transpose(T.matmul(w2, T.transpose(h))).sum() * 0.01)

    return forward, [w1, w2, bias, gain]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composed_graph_matches_finite_differences(seed):
    forward, params = _random_graph(seed)
    loss = forward()
    loss.backward()
    numeric = finite_difference_grad(forward, params)
    for p, fd in zip(params, numeric):
        assert_grads_close(p.grad, fd)


def test_backward_visits_shared_subgraph_once():
    # y is consumed twice; the gradient must be the sum of both paths.
    p = Tensor(np.array([2.0]), requires_grad=True)
    y = p * 3.0
    loss = (y * y).sum()
    loss.backward()
    assert np.allclose(p.grad, [36.0])  # d/dp (3p)^2 = 18p


def test_determinism_same_seed_bitwise():
    def run():
        x = Tensor(rng.gaussian(11, (8, 8)), requires_grad=True)
        y = T.softmax(T.gelu(T.matmul(x, Tensor(rng.gaussian(12, (8, 8))))), axis=-1)
        loss = y.sum()
        loss.backward()
        return y.data.copy(), x.grad.copy()

    out1, grad1 = run()
    out2, grad2 = run()
    assert np.array_equal(out1, out2)
    assert np.array_equal(grad1, grad2)


def test_take_scatter_gradient():
    p = Tensor(rng.gaussian(13, (5, 3)), requires_grad=True)
    out = T.take(p, [0, 0, 4], axis=0).sum()
    out.backward()
    expected = np.zeros((5, 3))
    expected[0] = 2.0
    expected[4] = 1.0
    assert np.array_equal(p.grad, expected)


@pytest.mark.parametrize("shape_a,shape_b", [
    ((3, 1, 5), (2, 5)),
    ((4, 1), (1, 6)),
    ((2, 3), ()),
    ((5,), (4, 5)),
])
def test_broadcast_gradients_reduce_to_operand_shapes(shape_a, shape_b):
    a = Tensor(rng.gaussian(20, shape_a), requires_grad=True)
    b = Tensor(rng.gaussian(21, shape_b), requires_grad=True)
    (T.mul(a, b).sum() + T.add(a, b).mean()).backward()
    assert a.grad.shape == a.data.shape
    assert b.grad.shape == b.data.shape
    fd = finite_difference_grad(lambda: T.mul(a, b).sum() + T.add(a, b).mean(), [a, b])
    assert_grads_close(a.grad, fd[0], label="a")
    assert_grads_close(b.grad, fd[1], label="b")


def test_layer_norm_rows_standardized():
    x = Tensor(rng.gaussian(14, (6, 10), 3.0))
    y = T.layer_norm(x, Tensor(np.ones(10)), Tensor(np.zeros(10)))
    assert np.abs(y.data.mean(axis=-1)).max() < 1e-12
    assert np.abs(y.data.std(axis=-1) - 1.0).max() < 1e-4
