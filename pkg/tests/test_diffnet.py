import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpac import diffnet
from mpac.diffnet import GradSet, ParamSet, apply_step, backward, forward, init_mlp, make_optimizer
from mpac.errors import InvalidArgument, InvalidState

from conftest import assert_grad_close, central_diff


def net(weights, biases):
    return ParamSet([np.array(w, dtype=float) for w in weights], [np.array(b, dtype=float) for b in biases])


class TestInit:
    def test_shapes_and_zero_bias(self):
        p = init_mlp([3, 2], seed=0)
        assert p.weights[0].shape == (2, 3)
        assert p.biases[0].shape == (2,)
        assert np.array_equal(p.biases[0], [0.0, 0.0])

    def test_deterministic(self):
        a, b = init_mlp([3, 2], seed=0), init_mlp([3, 2], seed=0)
        assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))

    @pytest.mark.parametrize("seed", [0, 1, 99])
    def test_weight_scale(self, seed):
        p = init_mlp([4, 512, 512, 5], seed=seed)
        for w in p.weights:
            target = 1 / np.sqrt(w.shape[1])
            assert 0.5 * target <= w.std() <= 2.0 * target

    @pytest.mark.parametrize("sizes", [[], [3], [3, 0], [0, 2]])
    def test_rejects_bad_sizes(self, sizes):
        with pytest.raises(InvalidArgument):
            init_mlp(sizes)

    def test_layers_must_chain(self):
        with pytest.raises(InvalidArgument):
            net([np.zeros((2, 3)), np.zeros((2, 3))], [np.zeros(2), np.zeros(2)])


class TestForward:
    def test_zero_network(self):
        p = init_mlp([3, 4, 2], seed=1)
        for a in p.arrays():
            a[...] = 0
        out, _ = forward(p, [1.0, -2.0, 3.0])
        assert np.array_equal(out, [0.0, 0.0])

    def test_single_affine(self):
        out, _ = forward(net([[[2.0]]], [[1.0]]), [3.0])
        assert out.tolist() == [7.0]

    def test_two_layer_by_hand(self):
        w1 = [[1.0, 2.0], [-1.0, 0.5], [0.0, -3.0]]
        b1 = [0.5, 0.0, 1.0]
        w2 = [[1.0, -1.0, 2.0], [0.5, 0.5, 0.5]]
        b2 = [0.0, -1.0]
        x = [1.0, -1.0]
        # hidden pre-activations: [1-2+0.5, -1-0.5+0, 0+3+1] = [-0.5, -1.5, 4]; relu -> [0, 0, 4]
        # output: [0 - 0 + 8 + 0, 0 + 0 + 2 - 1] = [8, 1]
        out, _ = forward(net([w1, w2], [b1, b2]), x)
        assert out.tolist() == [8.0, 1.0]

    def test_batch_matches_rows(self, rng):
        p = init_mlp([3, 8, 2], seed=2)
        x = rng.standard_normal((5, 3))
        batch, _ = forward(p, x)
        for row, xi in zip(batch, x):
            np.testing.assert_allclose(forward(p, xi)[0], row, rtol=0, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            forward(init_mlp([3, 2]), [1.0, 2.0])

    def test_dropout_needs_rng_and_is_off_by_default(self, rng):
        p = init_mlp([3, 16, 2], seed=3)
        x = rng.standard_normal((4, 3))
        with pytest.raises(InvalidArgument):
            forward(p, x, training=True, dropout_rate=0.2)
        plain, _ = forward(p, x)
        eval_mode, _ = forward(p, x, training=False, dropout_rate=0.2, rng=rng)
        assert np.array_equal(plain, eval_mode)
        dropped, tape = forward(p, x, training=True, dropout_rate=0.5, rng=rng)
        assert set(np.unique(tape.masks[0])) <= {0.0, 2.0}


class TestBackward:
    def test_zero_seed(self, rng):
        p = init_mlp([3, 5, 2], seed=4)
        _, tape = forward(p, rng.standard_normal(3))
        g = backward(p, tape, np.zeros(2))
        assert all(not a.any() for a in g.arrays())

    def test_linear_scalar(self):
        p = net([[[0.7]]], [[0.0]])
        _, tape = forward(p, [3.0])
        g = backward(p, tape, [1.0])
        assert g.weights[0][0, 0] == 3.0
        assert g.biases[0][0] == 1.0

    def test_stale_tape(self):
        p = init_mlp([2, 2])
        _, tape = forward(p, [1.0, 1.0])
        apply_step(p, GradSet.zeros_like(p), make_optimizer(p, "sgd", 0.1))
        with pytest.raises(InvalidState):
            backward(p, tape, [1.0, 1.0])
        with pytest.raises(InvalidState):
            backward(init_mlp([2, 2]), forward(p, [1.0, 1.0])[1], [1.0, 1.0])

    def test_squared_error_matches_finite_differences(self, rng):
        p = init_mlp([4, 6, 3], seed=5)
        x = rng.standard_normal((7, 4))
        y = rng.standard_normal((7, 3))

        def loss():
            return 0.5 * np.sum((forward(p, x)[0] - y) ** 2)

        out, tape = forward(p, x)
        analytic = backward(p, tape, out - y).flat()
        (numeric,) = central_diff(loss, [p])
        assert_grad_close(analytic, numeric)

    def test_gradient_correctness_random_nets(self):
        """<= 3 layers and <= 64 units, 100 seeds."""
        for seed in range(100):
            r = np.random.default_rng(seed)
            depth = int(r.integers(1, 4))
            sizes = [int(r.integers(1, 5))] + [int(r.integers(1, 65)) for _ in range(depth - 1)] \
                + [int(r.integers(1, 4))]
            p = init_mlp(sizes, seed=seed)
            for b in p.biases:
                b[...] = r.normal(scale=0.1, size=b.shape)
            x = r.standard_normal((3, sizes[0]))
            y = r.standard_normal((3, sizes[-1]))

            def loss():
                return 0.5 * np.sum((forward(p, x)[0] - y) ** 2)

            out, tape = forward(p, x)
            analytic = backward(p, tape, out - y).flat()
            (numeric,) = central_diff(loss, [p])
            assert_grad_close(analytic, numeric)

    def test_batch_gradient_is_sum_of_rows(self, rng):
        p = init_mlp([3, 5, 2], seed=6)
        x = rng.standard_normal((4, 3))
        gy = rng.standard_normal((4, 2))
        total = backward(p, forward(p, x)[1], gy).flat()
        rows = sum(backward(p, forward(p, xi)[1], gi).flat() for xi, gi in zip(x, gy))
        np.testing.assert_allclose(total, rows, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
    def test_linearity(self, a, b, seed):
        r = np.random.default_rng(seed)
        p = init_mlp([3, 8, 4], seed=seed)
        _, tape = forward(p, r.standard_normal((2, 3)))
        u, v = r.standard_normal((2, 4)), r.standard_normal((2, 4))
        lhs = backward(p, tape, a * u + b * v).flat()
        rhs = a * backward(p, tape, u).flat() + b * backward(p, tape, v).flat()
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


class TestApplyStep:
    def test_sgd_arithmetic(self):
        p = net([[[1.0]]], [[0.0]])
        g = GradSet([np.array([[0.5]])], [np.array([0.0])])
        apply_step(p, g, make_optimizer(p, "sgd", 0.1))
        assert p.weights[0][0, 0] == pytest.approx(0.95, abs=1e-15)

    def test_zero_gradient_adam(self):
        p = init_mlp([3, 2], seed=0)
        before = p.flat().copy()
        opt = make_optimizer(p, "adam", 1e-3)
        apply_step(p, GradSet.zeros_like(p), opt)
        assert np.array_equal(p.flat(), before)
        assert opt.t == 1

    def test_adam_matches_scalar_recurrence(self):
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        p = net([[[0.5]]], [[0.0]])
        opt = make_optimizer(p, "adam", lr)
        g = GradSet([np.array([[1.0]])], [np.array([0.0])])
        # hand recurrence for the single weight
        theta, m, v = 0.5, 0.0, 0.0
        for t in (1, 2, 3):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            theta -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
            apply_step(p, g, opt)
            assert p.weights[0][0, 0] == pytest.approx(theta, rel=1e-12)
        # with a constant gradient every bias-corrected step has size lr / (1 + eps)
        assert theta == pytest.approx(0.5 - 3 * lr / (1 + eps), rel=1e-12)

    def test_rejects_non_finite(self):
        p = init_mlp([2, 2], seed=0)
        before = p.flat().copy()
        opt = make_optimizer(p, "adam", 1e-3)
        g = GradSet.zeros_like(p)
        g.weights[0][0, 0] = np.nan
        with pytest.raises(InvalidState):
            apply_step(p, g, opt)
        assert np.array_equal(p.flat(), before) and opt.t == 0

    def test_rejects_shape_mismatch(self):
        p = init_mlp([2, 2])
        with pytest.raises(InvalidArgument):
            apply_step(p, GradSet.zeros_like(init_mlp([2, 3])), make_optimizer(p, "sgd", 0.1))


def test_params_round_trip(tmp_path):
    p = init_mlp([3, 7, 2], seed=11)
    p.biases[0][...] = np.random.default_rng(0).standard_normal(7)
    path = diffnet.save_params(p, tmp_path / "p.npz")
    q = diffnet.load_params(path)
    assert q.seed == 11 and q.activation == "relu"
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))


def test_load_rejects_foreign_archive(tmp_path):
    np.savez(tmp_path / "x.npz", W0=np.zeros((1, 1)))
    with pytest.raises(InvalidArgument):
        diffnet.load_params(tmp_path / "x.npz")
