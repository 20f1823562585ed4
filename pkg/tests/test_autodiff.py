import numpy as np
import pytest

from kgmlsm import autodiff as ad
from kgmlsm.errors import GraphError, NonFiniteError, ShapeError
from kgmlsm.gradcheck import check_param_gradients, relative_error


class TestPrimitives:
    def test_matmul_identity(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 3))
        out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_softmax_symmetry(self):
        out = ad.softmax_last(ad.Tensor([0.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.25, 0.25, 0.25, 0.25], atol=1e-15)

    def test_relu_definition(self):
        out = ad.relu(ad.Tensor([-1.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])
        assert ad.max_with_zero is ad.relu

    def test_softmax_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            z = rng.normal(scale=5.0, size=(4, 7))
            y = ad.softmax_last(ad.Tensor(z)).data
            np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
            assert (y > 0).all()

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(3, 5))
        base = ad.softmax_last(ad.Tensor(z)).data
        shifted = ad.softmax_last(ad.Tensor(z + 7.3)).data
        np.testing.assert_allclose(base, shifted, atol=1e-14)

    def test_pool_and_upsample_are_inverse_in_shape(self):
        rng = np.random.default_rng(3)
        x = ad.Tensor(rng.normal(size=(2, 8, 3)))
        down = ad.pool_mean2(x)
        assert down.shape == (2, 4, 3)
        up = ad.upsample_repeat2(down)
        assert up.shape == (2, 8, 3)
        np.testing.assert_allclose(up.data[:, 0::2], down.data)

    def test_concat_and_slice_round_trip(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
        cat = ad.concat([ad.Tensor(a), ad.Tensor(b)], axis=1)
        np.testing.assert_array_equal(cat.data[:, :3], a)
        np.testing.assert_array_equal(cat.data[:, 3:], b)


class TestErrors:
    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 2))))

    def test_concat_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat([ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((3, 3)))], axis=1)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_rejected(self):
        big = ad.Tensor(np.full(3, 1e308))
        with pytest.raises(NonFiniteError):
            ad.square(big)

    def test_backward_requires_scalar(self):
        t = ad.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(GraphError):
            ad.backward(ad.relu(t))

    def test_mean_empty(self):
        with pytest.raises(ShapeError):
            ad.mean(ad.Tensor(np.zeros((0,))))


class TestBackward:
    def test_square_at_three(self):
        store = ad.ParamStore()
        x = store.add("x", 3.0)
        loss = ad.square(x)
        grads = ad.gradients(loss, store)
        assert grads["x"] == pytest.approx(6.0)

    def test_mse_gradient(self):
        store = ad.ParamStore()
        y_hat = store.add("y_hat", [0.0])
        loss = ad.mean(ad.square(ad.Tensor([1.0]) - y_hat))
        grads = ad.gradients(loss, store)
        assert grads["y_hat"][0] == pytest.approx(-2.0)

    def test_untouched_parameter_gets_zero_gradient(self):
        store = ad.ParamStore()
        x = store.add("x", 2.0)
        store.add("unused", np.ones(4))
        grads = ad.gradients(ad.square(x), store)
        np.testing.assert_array_equal(grads["unused"], np.zeros(4))

    def test_shared_subgraph_accumulates(self):
        store = ad.ParamStore()
        x = store.add("x", 2.0)
        loss = ad.mul(x, x + 1.0)  # x^2 + x -> 2x + 1 = 5
        grads = ad.gradients(loss, store)
        assert grads["x"] == pytest.approx(5.0)

    def test_linearity_of_backward(self):
        rng = np.random.default_rng(5)
        store = ad.ParamStore()
        w = store.add("w", rng.normal(size=(3, 2)))
        x = ad.Tensor(rng.normal(size=(4, 3)))

        def build(scale_a, scale_b):
            h = ad.matmul(x, w)
            l1 = ad.mean(ad.square(h)) * scale_a
            l2 = ad.mean(ad.relu(h)) * scale_b
            return l1, l2

        l1, l2 = build(1.0, 1.0)
        g1 = ad.gradients(l1, store)["w"]
        l1, l2 = build(1.0, 1.0)
        g2 = ad.gradients(l2, store)["w"]
        l1, l2 = build(1.0, 1.0)
        g_sum = ad.gradients(l1 + l2, store)["w"]
        np.testing.assert_allclose(g_sum, g1 + g2, rtol=1e-12, atol=1e-12)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(6)
            store = ad.ParamStore()
            w = store.add("w", rng.normal(size=(5, 4)))
            x = ad.Tensor(rng.normal(size=(7, 5)))
            loss = ad.mean(ad.square(ad.relu(ad.matmul(x, w))))
            return loss.data.copy(), ad.gradients(loss, store)["w"]

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(g1, g2)


def _random_three_layer(seed):
    """3-layer graph with exactly 20 parameter values."""
    rng = np.random.default_rng(seed)
    store = ad.ParamStore()
    w1 = store.add("w1", rng.normal(size=(2, 2)))  # 4
    b1 = store.add("b1", rng.normal(size=(2,)))  # 2
    w2 = store.add("w2", rng.normal(size=(2, 3)))  # 6
    b2 = store.add("b2", rng.normal(size=(3,)))  # 3
    w3 = store.add("w3", rng.normal(size=(3, 1)))  # 3
    b3 = store.add("b3", rng.normal(size=(1,)))  # 1
    gain = store.add("gain", rng.normal(size=(1,)))  # 1 -> total 20
    x = rng.normal(size=(5, 2))
    y = rng.normal(size=(5, 1))

    def loss_tensor():
        h1 = ad.relu(ad.matmul(ad.Tensor(x), w1) + b1)
        h2 = ad.relu(ad.matmul(h1, w2) + b2)
        out = ad.mul(ad.matmul(h2, w3) + b3, gain)
        return ad.mean(ad.square(out - ad.Tensor(y)))

    assert store.n_values() == 20
    return store, loss_tensor


class TestFiniteDifferenceOracle:
    def test_random_three_layer_graphs(self):
        for seed in range(10):
            store, loss_tensor = _random_three_layer(seed)
            analytic = ad.gradients(loss_tensor(), store)
            worst = check_param_gradients(lambda: loss_tensor().data, store, analytic, h=1e-5)
            assert worst < 1e-4, f"seed {seed}: worst rel err {worst}"

    def test_relative_error_floor(self):
        assert relative_error(1e-9, 2e-9) < 1e-8  # tiny grads compare absolutely
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)


class TestParamStore:
    def test_duplicate_rejected(self):
        store = ad.ParamStore()
        store.add("w", 1.0)
        with pytest.raises(ValueError):
            store.add("w", 2.0)

    def test_load_shape_mismatch(self):
        store = ad.ParamStore()
        store.add("w", np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            store.load_arrays({"w": np.zeros(3)})
