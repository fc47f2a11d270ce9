"""Layers, network mechanics, losses, and the finite-difference helper."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dregnet.dreg import attach_dreg, compute_gradients
from dregnet.nn import (AvgPool2d, Conv2d, Dense, Flatten, LayerError,
                        LossBreakdown, Network, PairedLogits, ReLU,
                        ResidualBlock, cross_entropy, cross_entropy_grad,
                        finite_diff_grad, softmax)
from dregnet.tensor import ShapeError, Tensor


def mlp(dims, ws=None):
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        w = None if ws is None else ws[i]
        layers.append(Dense(a, b, bias=True, w=w))
    return Network(layers)


class TestForward:
    def test_identity_dense_chain(self):
        net = mlp([3, 3, 3], ws=[np.eye(3), np.eye(3)])
        x = Tensor([[0.5, -1.0, 2.0], [1.0, 1.0, 1.0]])
        assert_array_equal(net.forward(x).data, x.data)

    def test_single_dense_hand_value(self):
        net = Network([Dense(1, 1, bias=True, w=[[2.0]])])
        assert_array_equal(net.forward(Tensor([[3.0]])).data, [[6.0]])

    def test_equal_weight_pair_gives_equal_logits(self):
        base = Network([Dense(4, 3, bias=True, w=np.arange(12.0).reshape(3, 4)),
                        ReLU(), Dense(3, 2, bias=True, w=np.ones((2, 3)))])
        dual = attach_dreg(base, "Block-R1", 1e-3, 0)
        i = dual.dual_index
        dual.set_param(f"{i}.w_l", Tensor(dual.layers[i].w_r))
        out = dual.forward(Tensor([[1.0, 2.0, 3.0, 4.0]]))
        assert isinstance(out, PairedLogits)
        assert_array_equal(out.r.data, out.l.data)

    def test_shape_mismatch_raises(self):
        net = mlp([3, 2])
        with pytest.raises(ShapeError):
            net.forward(Tensor([[1.0, 2.0]]))

    def test_relu(self):
        layer = ReLU()
        assert_array_equal(layer.forward(np.array([[-1.0, 0.0, 2.0]])),
                           [[0.0, 0.0, 2.0]])

    def test_avgpool_mean(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = AvgPool2d(2).forward(x)
        assert_array_equal(out, [[[[2.5, 4.5], [10.5, 12.5]]]])

    def test_flatten_roundtrip(self):
        layer = Flatten()
        x = np.arange(24.0).reshape(2, 3, 2, 2)
        y = layer.forward(x, cache=True)
        assert y.shape == (2, 12)
        assert_array_equal(layer.backward(y), x)

    def test_residual_adds_skip(self):
        block = ResidualBlock([Dense(2, 2, bias=False, w=np.zeros((2, 2)))])
        x = np.array([[1.0, 2.0]])
        assert_array_equal(block.forward(x), x)

    def test_residual_shape_change_rejected(self):
        block = ResidualBlock([Dense(2, 3, bias=False)])
        with pytest.raises(ShapeError):
            block.forward(np.ones((1, 2)))


class TestCrossEntropy:
    def test_uniform_logits_four_classes(self):
        logits = Tensor(np.zeros((3, 4)))
        assert_allclose(cross_entropy(logits, [0, 1, 3]), np.log(4.0),
                        rtol=1e-15)

    def test_saturated_margin(self):
        logits = Tensor([[40.0, 0.0]])
        assert cross_entropy(logits, [0]) < 1e-6

    def test_mean_of_identical_rows(self):
        row = np.array([1.0, -0.5, 2.0])
        single = cross_entropy(Tensor(row[None, :]), [2])
        double = cross_entropy(Tensor(np.stack([row, row])), [2, 2])
        assert_allclose(double, single, rtol=1e-15)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 3))), [3])
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 3))), [-1])

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            logits = Tensor(rng.standard_normal((4, 5)))
            labels = rng.integers(0, 5, size=4)
            assert cross_entropy(logits, labels) >= 0.0

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        p = softmax(Tensor(rng.standard_normal((50, 6)) * 30)).data
        assert_allclose(p.sum(axis=1), np.ones(50), rtol=0, atol=1e-12)

    def test_grad_matches_probability_shift(self):
        logits = Tensor([[1.0, 2.0]])
        _, g = cross_entropy_grad(logits, [1])
        p = softmax(logits).data[0]
        assert_allclose(g.data, [[p[0], p[1] - 1.0]], rtol=1e-15)


class TestBackwardContracts:
    def test_backward_without_forward(self):
        net = mlp([2, 2])
        with pytest.raises(LayerError):
            net.backward(Tensor([[1.0, 0.0]]))

    def test_scalar_chain_rule_hand_value(self):
        # y = w*x, squared error vs 0: dL/dw = 2*y*x = 2*6*3 = 36
        layer = Dense(1, 1, bias=False, w=[[2.0]])
        y = layer.forward(np.array([[3.0]]), cache=True)
        layer.backward(2.0 * y)
        assert layer.grads()["w"].data[0, 0] == 36.0

    def test_constant_loss_gives_zero_grad(self):
        net = mlp([3, 2])
        logits = net.forward(Tensor(np.ones((2, 3))), cache=True)
        net.backward(Tensor(np.zeros(logits.shape)))
        for _, g in net.grad_items():
            assert_array_equal(g.data, np.zeros(g.shape))

    def test_grads_accumulate_until_zeroed(self):
        layer = Dense(2, 2, bias=False, w=np.eye(2))
        x = np.ones((1, 2))
        g = np.ones((1, 2))
        layer.forward(x, cache=True)
        layer.backward(g)
        first = np.array(layer.grads()["w"].data)
        layer.forward(x, cache=True)
        layer.backward(g)
        assert_array_equal(layer.grads()["w"].data, 2.0 * first)
        layer.zero_grads()
        assert_array_equal(layer.grads()["w"].data, np.zeros((2, 2)))

    def test_cache_is_a_stack(self):
        # two forwards at different inputs unwind in reverse order
        layer = Dense(1, 1, bias=False, w=[[1.0]])
        layer.forward(np.array([[2.0]]), cache=True)
        layer.forward(np.array([[5.0]]), cache=True)
        layer.backward(np.array([[1.0]]))
        assert layer.grads()["w"].data[0, 0] == 5.0
        layer.backward(np.array([[1.0]]))
        assert layer.grads()["w"].data[0, 0] == 7.0


class TestDualPathGradients:
    def setup_method(self):
        rng = np.random.default_rng(31)
        base = Network([Dense(5, 4, bias=True, rng=rng), ReLU(),
                        Dense(4, 4, bias=True, rng=rng), ReLU(),
                        Dense(4, 3, bias=True, rng=rng)])
        self.dual = attach_dreg(base, "Block-R1", 1e-2, 1)
        self.x = Tensor(rng.standard_normal((6, 5)))
        self.labels = rng.integers(0, 3, size=6)

    def test_equal_paths_double_the_shared_gradient(self):
        i = self.dual.dual_index
        self.dual.set_param(f"{i}.w_l", Tensor(self.dual.layers[i].w_r))
        compute_gradients(self.dual, self.x, self.labels, lam=0.0)
        dual_grads = {k: np.array(g.data) for k, g in self.dual.grad_items()}

        single = Network([layer.clone() if not layer.is_dual else layer.to_single("r")
                          for layer in self.dual.layers])
        compute_gradients(single, self.x, self.labels)
        for key, g in single.grad_items():
            if key.startswith(f"{i}."):
                continue
            assert_array_equal(dual_grads[key], 2.0 * g.data)

    def test_cross_path_gradients_identically_zero(self):
        i = self.dual.dual_index
        self.dual.zero_grads()
        out = self.dual.forward(self.x, cache=True)
        _, d_l = cross_entropy_grad(out.l, self.labels)
        self.dual.backward_dual(Tensor(np.zeros(out.r.shape)), d_l)
        grads = dict(self.dual.grad_items())
        assert np.abs(grads[f"{i}.w_r"].data).max() == 0.0
        assert np.abs(grads[f"{i}.w_l"].data).max() > 0.0

    def test_branch_gradients_equal_for_equal_paths(self):
        i = self.dual.dual_index
        self.dual.set_param(f"{i}.w_l", Tensor(self.dual.layers[i].w_r))
        compute_gradients(self.dual, self.x, self.labels, lam=0.0)
        grads = dict(self.dual.grad_items())
        assert_array_equal(grads[f"{i}.w_r"].data, grads[f"{i}.w_l"].data)


class TestLossBreakdown:
    def test_single(self):
        b = LossBreakdown.single(1.5)
        assert (b.l_r, b.l_l, b.l_dreg_raw, b.total) == (1.5, None, None, 1.5)

    def test_dual_composition(self):
        b = LossBreakdown.dual(1.0, 2.0, 4.0, lam=0.25)
        assert b.total == 1.0 + 2.0 - 0.25 * 4.0

    def test_negative_raw_rejected(self):
        with pytest.raises(ValueError):
            LossBreakdown.dual(1.0, 1.0, -0.1, 0.1)


class TestNetworkPlumbing:
    def test_at_most_one_dual_layer(self):
        base = Network([Dense(3, 3, bias=False), ReLU(), Dense(3, 3, bias=False),
                        ReLU(), Dense(3, 2, bias=False)])
        dual = attach_dreg(base, "Block-R1", 1e-3, 0)
        with pytest.raises(ValueError):
            attach_dreg(dual, "Block-R2", 1e-3, 0)

    def test_check_shapes_composes(self):
        net = Network([Conv2d(1, 3, 3, padding=1), ReLU(), AvgPool2d(2),
                       Flatten(), Dense(12, 2)])
        assert net.check_shapes((1, 4, 4)) == (2,)

    def test_check_shapes_rejects_mismatch(self):
        net = Network([Conv2d(1, 3, 3), Flatten(), Dense(99, 2)])
        with pytest.raises(ShapeError):
            net.check_shapes((1, 4, 4))

    def test_clone_is_independent(self):
        net = mlp([2, 2], ws=[np.eye(2)])
        dup = net.clone()
        dup.set_param("0.w", Tensor(np.zeros((2, 2))))
        assert_array_equal(net.get_param("0.w").data, np.eye(2))

    def test_count_params(self):
        net = mlp([3, 4, 2])
        assert net.count_params() == (3 * 4 + 4) + (4 * 2 + 2)


class TestFiniteDiff:
    def test_linear_slope(self):
        net = Network([Dense(1, 1, bias=False, w=[[1.0]])])
        grad = finite_diff_grad(
            net, lambda m: 3.0 * float(m.get_param("0.w").data[0, 0]), "0.w",
            epsilon=1e-4)
        assert_allclose(grad.data, [[3.0]], rtol=0, atol=1e-8)

    def test_quadratic(self):
        net = Network([Dense(1, 1, bias=False, w=[[1.0]])])
        grad = finite_diff_grad(
            net, lambda m: float(m.get_param("0.w").data[0, 0]) ** 2, "0.w",
            epsilon=1e-4)
        assert_allclose(grad.data, [[2.0]], rtol=0, atol=1e-6)

    def test_constant(self):
        net = Network([Dense(1, 1, bias=False, w=[[1.0]])])
        grad = finite_diff_grad(net, lambda m: 7.0, "0.w", epsilon=1e-4)
        assert_array_equal(grad.data, [[0.0]])

    def test_epsilon_must_be_positive(self):
        net = Network([Dense(1, 1, bias=False)])
        with pytest.raises(ValueError):
            finite_diff_grad(net, lambda m: 0.0, "0.w", epsilon=0.0)

    def test_restores_parameters(self):
        net = Network([Dense(2, 2, bias=False, w=np.eye(2))])
        finite_diff_grad(net, lambda m: 1.0, "0.w")
        assert_array_equal(net.get_param("0.w").data, np.eye(2))
