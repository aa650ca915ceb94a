"""Hand-rolled MLP: forward/backward correctness and the Adam update."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qchip import neural
from qchip.errors import ShapeMismatch


def small_spec(act="tanh"):
    return neural.MlpSpec((4, 6, 5), ("tanh", act),
                          softmax_group_size=5 if act == "softmax_group" else None)


class TestSpecAndInit:
    def test_param_count(self):
        spec = neural.MlpSpec((4, 50, 100, 18), ("tanh", "tanh", "linear"))
        assert spec.n_params == 4 * 50 + 50 + 50 * 100 + 100 + 100 * 18 + 18

    def test_glorot_bounds_and_zero_bias(self):
        spec = neural.MlpSpec((4, 50, 100, 18), ("tanh", "tanh", "linear"))
        w = neural.init_weights(spec, seed=0)
        for W, (n_in, n_out) in zip(w.matrices, ((4, 50), (50, 100), (100, 18))):
            lim = np.sqrt(6 / (n_in + n_out))
            assert np.max(np.abs(W)) <= lim
            assert W.shape == (n_out, n_in)
        assert all(np.all(b == 0) for b in w.biases)

    def test_init_deterministic(self):
        spec = small_spec()
        a = neural.init_weights(spec, seed=7).to_vector()
        b = neural.init_weights(spec, seed=7).to_vector()
        assert np.array_equal(a, b)
        assert not np.array_equal(a, neural.init_weights(spec, seed=8).to_vector())

    def test_vector_round_trip(self):
        spec = small_spec()
        w = neural.init_weights(spec, seed=3)
        v = w.to_vector()
        w2 = neural.MlpWeights.from_vector(spec, v)
        assert np.array_equal(w2.to_vector(), v)

    def test_bad_architectures_rejected(self):
        with pytest.raises(ShapeMismatch):
            neural.MlpSpec((4,), ())
        with pytest.raises(ShapeMismatch):
            neural.MlpSpec((4, 5), ("tanh", "tanh"))
        with pytest.raises(ShapeMismatch):
            neural.MlpSpec((4, 5), ("relu",))
        with pytest.raises(ShapeMismatch):
            neural.MlpSpec((4, 7), ("softmax_group",), softmax_group_size=3)


class TestForward:
    def test_single_and_batch_agree(self, rng):
        spec = small_spec()
        w = neural.init_weights(spec, seed=1)
        X = rng.normal(size=(6, 4))
        Y, _ = neural.mlp_forward(w, spec, X)
        for k in range(6):
            yk, _ = neural.mlp_forward(w, spec, X[k])
            assert np.allclose(yk, Y[k], atol=1e-15)

    def test_linear_head_is_affine_in_last_layer(self, rng):
        spec = neural.MlpSpec((4, 3), ("linear",))
        w = neural.MlpWeights([rng.normal(size=(3, 4))], [rng.normal(size=3)])
        x = rng.normal(size=4)
        y, _ = neural.mlp_forward(w, spec, x)
        assert np.allclose(y, w.matrices[0] @ x + w.biases[0], atol=1e-15)

    def test_softmax_groups_sum_to_one(self, rng):
        spec = neural.MlpSpec((4, 9), ("softmax_group",), softmax_group_size=3)
        w = neural.MlpWeights([rng.normal(size=(9, 4))], [rng.normal(size=9)])
        y, _ = neural.mlp_forward(w, spec, rng.normal(size=(5, 4)))
        sums = y.reshape(5, 3, 3).sum(axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-12)
        assert np.all(y > 0)

    def test_softmax_overflow_guard(self):
        spec = neural.MlpSpec((1, 3), ("softmax_group",), softmax_group_size=3)
        w = neural.MlpWeights([np.array([[1e4], [0.0], [-1e4]])], [np.zeros(3)])
        y, _ = neural.mlp_forward(w, spec, np.array([100.0]))
        assert np.all(np.isfinite(y))
        assert y.sum() == pytest.approx(1.0)

    def test_sigmoid_range(self, rng):
        spec = neural.MlpSpec((4, 8), ("sigmoid",))
        w = neural.MlpWeights([rng.normal(size=(8, 4)) * 3], [rng.normal(size=8)])
        y, _ = neural.mlp_forward(w, spec, rng.normal(size=(10, 4)))
        assert np.all((y > 0) & (y < 1))

    def test_rejects_wrong_input_width(self, rng):
        spec = small_spec()
        w = neural.init_weights(spec, seed=0)
        with pytest.raises(ShapeMismatch):
            neural.mlp_forward(w, spec, np.zeros(5))


class TestBackward:
    @pytest.mark.parametrize("act", ["linear", "tanh", "sigmoid", "softmax_group"])
    def test_gradient_matches_fd(self, rng, act):
        spec = small_spec(act)
        w = neural.init_weights(spec, seed=2)
        X = rng.normal(size=(4, 4))
        up = rng.normal(size=(4, 5))
        _, tape = neural.mlp_forward(w, spec, X)
        g = neural.mlp_backward(w, spec, tape, up)
        v0 = w.to_vector()
        eps = 1e-6
        for i in rng.choice(v0.size, 12, replace=False):
            vp, vm = v0.copy(), v0.copy()
            vp[i] += eps
            vm[i] -= eps
            yp, _ = neural.mlp_forward(neural.MlpWeights.from_vector(spec, vp), spec, X)
            ym, _ = neural.mlp_forward(neural.MlpWeights.from_vector(spec, vm), spec, X)
            fd = np.sum(up * (yp - ym)) / (2 * eps)
            assert abs(g[i] - fd) < 1e-6 * max(1.0, abs(fd))

    def test_input_gradient_matches_fd(self, rng):
        spec = small_spec()
        w = neural.init_weights(spec, seed=4)
        X = rng.normal(size=(3, 4))
        up = rng.normal(size=(3, 5))
        _, tape = neural.mlp_forward(w, spec, X)
        _, gx = neural.mlp_backward(w, spec, tape, up, input_grad=True)
        eps = 1e-6
        for b in range(3):
            for j in range(4):
                Xp, Xm = X.copy(), X.copy()
                Xp[b, j] += eps
                Xm[b, j] -= eps
                fd = np.sum(up * (neural.mlp_forward(w, spec, Xp)[0]
                                  - neural.mlp_forward(w, spec, Xm)[0])) / (2 * eps)
                assert abs(gx[b, j] - fd) < 1e-7 * max(1.0, abs(fd))

    def test_batch_gradient_sums_per_example(self, rng):
        spec = small_spec()
        w = neural.init_weights(spec, seed=5)
        X = rng.normal(size=(3, 4))
        up = rng.normal(size=(3, 5))
        _, tape = neural.mlp_forward(w, spec, X)
        g = neural.mlp_backward(w, spec, tape, up)
        parts = []
        for k in range(3):
            _, tk = neural.mlp_forward(w, spec, X[k])
            parts.append(neural.mlp_backward(w, spec, tk, up[k]))
        assert np.allclose(g, np.sum(parts, axis=0), atol=1e-12)


class TestAdam:
    def test_first_step_size(self):
        # with bias correction the first update is lr * g / (|g| + eps)
        st0 = neural.init_adam(3, learning_rate=0.1)
        p, st1 = neural.adam_step(st0, np.zeros(3), np.array([1.0, -2.0, 0.5]))
        assert np.allclose(p, [-0.1, 0.1, -0.1], atol=1e-6)
        assert st1.step == 1

    def test_zero_gradient_fixed_point(self):
        st0 = neural.init_adam(4, learning_rate=0.05)
        p0 = np.ones(4)
        p, st1 = neural.adam_step(st0, p0, np.zeros(4))
        assert np.array_equal(p, p0)

    def test_state_not_mutated(self):
        st0 = neural.init_adam(2)
        neural.adam_step(st0, np.ones(2), np.ones(2))
        assert st0.step == 0
        assert np.all(st0.m == 0)

    def test_converges_on_quadratic(self):
        # minimize |x - 3|^2; Adam should land near 3
        st0 = neural.init_adam(1, learning_rate=0.1)
        x = np.array([0.0])
        for _ in range(500):
            x, st0 = neural.adam_step(st0, x, 2 * (x - 3.0))
        assert abs(x[0] - 3.0) < 1e-3

    def test_shape_check(self):
        st0 = neural.init_adam(3)
        with pytest.raises(ShapeMismatch):
            neural.adam_step(st0, np.zeros(2), np.zeros(2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_update_is_deterministic(self, seed):
        g = np.random.default_rng(seed).normal(size=5)
        s = neural.init_adam(5)
        p1, _ = neural.adam_step(s, np.zeros(5), g)
        p2, _ = neural.adam_step(s, np.zeros(5), g)
        assert np.array_equal(p1, p2)
