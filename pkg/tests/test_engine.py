"""Gradient engine verification.

Every primitive is checked two ways: against a frozen hand-derived value
on a small fixed input, and against the central finite-difference oracle
on random inputs. The oracle itself is validated on a function with a
known closed-form gradient.
"""

import numpy as np
import pytest

from groto import engine
from groto.errors import DegenerateInputError, DimensionError, EngineError, NonFiniteError

H = 1e-5
REL_TOL = 1e-6


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def check_grads(build, params, tol=REL_TOL):
    """Compare tape gradients with finite differences for one loss."""
    _, grads = engine.value_and_grad(build, params)

    def fn(work):
        tape = engine.Tape()
        nodes = [tape.param(p) for p in work]
        return float(build(*nodes).value)

    fd = engine.finite_difference_gradient(fn, params, h=H)
    for g, f in zip(grads, fd):
        assert rel_err(g, f) < tol


class TestTapeMechanics:
    def test_backward_requires_scalar_root(self):
        tape = engine.Tape()
        x = tape.param(np.ones((2, 2)))
        y = engine.relu(x)
        with pytest.raises(EngineError):
            tape.backward(y)

    def test_unused_leaf_gets_zero_gradient(self):
        def build(a, b):
            return engine.reduce_sum(a)

        _, grads = engine.value_and_grad(build, [np.ones(3), np.ones(2)])
        np.testing.assert_array_equal(grads[1], np.zeros(2))

    def test_apply_dispatch(self):
        def build(a):
            return engine.apply("sum", engine.apply("relu", a))

        val, grads = engine.value_and_grad(build, [np.array([-1.0, 2.0])])
        assert val == pytest.approx(2.0)
        np.testing.assert_array_equal(grads[0], [0.0, 1.0])

    def test_apply_rejects_unknown_primitive(self):
        with pytest.raises(EngineError):
            engine.apply("conv2d", None)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_nonfinite_forward_raises(self):
        def build(a):
            return engine.reduce_sum(engine.exp(a))

        with pytest.raises(NonFiniteError):
            engine.value_and_grad(build, [np.array([1000.0])])

    def test_constant_only_operation_rejected(self):
        with pytest.raises(EngineError):
            engine.add(np.ones(2), np.ones(2))


class TestAddScaleMul:
    def test_add_gradient_is_ones(self):
        def build(a):
            return engine.reduce_sum(engine.add(a, np.arange(3.0)))

        _, grads = engine.value_and_grad(build, [np.zeros(3)])
        np.testing.assert_array_equal(grads[0], np.ones(3))

    def test_add_unbroadcasts_row_leaf(self):
        # (4, 3) + (3,) sums the gradient over the broadcast axis
        def build(a, b):
            return engine.reduce_sum(engine.add(a, b))

        _, grads = engine.value_and_grad(build, [np.zeros((4, 3)), np.zeros(3)])
        np.testing.assert_array_equal(grads[1], 4.0 * np.ones(3))

    def test_scale_by_array_constant(self, rng):
        c = rng.standard_normal((3, 4))

        def build(a):
            return engine.reduce_sum(engine.scale(a, c))

        x = rng.standard_normal((3, 4))
        _, grads = engine.value_and_grad(build, [x])
        np.testing.assert_allclose(grads[0], c, atol=1e-15)

    def test_scale_rejects_node_factor(self):
        tape = engine.Tape()
        a = tape.param(np.ones(2))
        b = tape.param(np.ones(2))
        with pytest.raises(EngineError):
            engine.scale(a, b)

    def test_mul_fd(self, rng):
        x = rng.standard_normal((3, 3))
        y = rng.standard_normal((3, 3))
        check_grads(lambda a, b: engine.reduce_sum(engine.mul(a, b)), [x, y])

    def test_mul_broadcast_fd(self, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((1, 3))
        check_grads(lambda a, b: engine.reduce_sum(engine.mul(a, b)), [x, y])


class TestMatmul:
    def test_frozen_quadratic_form(self):
        # loss = w w^T = |w|^2 for the row vector [1, 2]; gradient 2w
        def build(w):
            return engine.reduce_sum(engine.matmul(w, w, transpose_b=True))

        val, grads = engine.value_and_grad(build, [np.array([[1.0, 2.0]])])
        assert val == pytest.approx(5.0)
        np.testing.assert_allclose(grads[0], [[2.0, 4.0]], atol=1e-12)

    @pytest.mark.parametrize("ta", [False, True])
    @pytest.mark.parametrize("tb", [False, True])
    def test_transpose_flags_fd(self, rng, ta, tb):
        a = rng.standard_normal((4, 3) if not ta else (3, 4))
        b = rng.standard_normal((3, 2) if not tb else (2, 3))
        check_grads(
            lambda x, y: engine.reduce_sum(
                engine.matmul(x, y, transpose_a=ta, transpose_b=tb)
            ),
            [a, b],
        )

    def test_constant_operand(self, rng):
        c = rng.standard_normal((3, 2))
        x = rng.standard_normal((4, 3))
        check_grads(lambda a: engine.reduce_sum(engine.matmul(a, c)), [x])

    def test_rejects_non_2d(self):
        tape = engine.Tape()
        a = tape.param(np.ones(3))
        with pytest.raises(DimensionError):
            engine.matmul(a, np.ones((3, 2)))


class TestElementwise:
    def test_exp_fd(self, rng):
        x = rng.standard_normal((3, 4))
        check_grads(lambda a: engine.reduce_sum(engine.exp(a)), [x])

    def test_log_fd(self, rng):
        x = rng.uniform(0.5, 3.0, size=(3, 4))
        check_grads(lambda a: engine.reduce_sum(engine.log(a)), [x])

    def test_relu_fd_away_from_kink(self, rng):
        x = rng.standard_normal((4, 4))
        x[np.abs(x) < 0.1] = 0.5
        check_grads(lambda a: engine.reduce_sum(engine.relu(a)), [x])

    def test_relu_zero_subgradient(self):
        def build(a):
            return engine.reduce_sum(engine.relu(a))

        _, grads = engine.value_and_grad(build, [np.array([-1.0, 0.0, 2.0])])
        np.testing.assert_array_equal(grads[0], [0.0, 0.0, 1.0])


class TestReduceSum:
    def test_axis_none_scalar(self, rng):
        x = rng.standard_normal((3, 5))
        val, grads = engine.value_and_grad(
            lambda a: engine.reduce_sum(a), [x]
        )
        assert val == pytest.approx(x.sum())
        np.testing.assert_array_equal(grads[0], np.ones((3, 5)))

    @pytest.mark.parametrize("axis", [0, 1])
    def test_axis_keepdims_fd(self, rng, axis):
        x = rng.standard_normal((3, 4))
        check_grads(
            lambda a: engine.reduce_sum(
                engine.mul(engine.reduce_sum(a, axis=axis), engine.reduce_sum(a, axis=axis))
            ),
            [x],
        )

    def test_axis_keepdims_shape(self):
        tape = engine.Tape()
        a = tape.param(np.ones((3, 4)))
        assert engine.reduce_sum(a, axis=0).value.shape == (1, 4)
        assert engine.reduce_sum(a, axis=1).value.shape == (3, 1)


class TestSoftmaxXent:
    def test_frozen_two_logit_case(self):
        # uniform logits, one-hot target: loss ln 2, gradient [p - t] / rows
        t = np.array([[1.0, 0.0]])

        def build(z):
            return engine.softmax_xent(z, t)

        val, grads = engine.value_and_grad(build, [np.zeros((1, 2))])
        assert val == pytest.approx(np.log(2.0), abs=1e-12)
        np.testing.assert_allclose(grads[0], [[-0.5, 0.5]], atol=1e-12)

    def test_uniform_target_loss_is_log_k(self):
        k = 7
        t = np.full((3, k), 1.0 / k)
        val, _ = engine.value_and_grad(
            lambda z: engine.softmax_xent(z, t), [np.zeros((3, k))]
        )
        assert val == pytest.approx(np.log(k), abs=1e-12)

    def test_row_shift_invariance(self, rng):
        z = rng.standard_normal((4, 5))
        t = np.eye(5)[rng.integers(0, 5, size=4)]
        v1, _ = engine.value_and_grad(lambda a: engine.softmax_xent(a, t), [z])
        v2, _ = engine.value_and_grad(
            lambda a: engine.softmax_xent(a, t), [z + 100.0]
        )
        assert v1 == pytest.approx(v2, abs=1e-9)

    def test_fd(self, rng):
        z = rng.standard_normal((4, 6))
        t = np.eye(6)[rng.integers(0, 6, size=4)]
        check_grads(lambda a: engine.softmax_xent(a, t), [z])

    def test_soft_targets_fd(self, rng):
        z = rng.standard_normal((3, 5))
        t = rng.uniform(0.1, 1.0, size=(3, 5))
        t /= t.sum(axis=1, keepdims=True)
        check_grads(lambda a: engine.softmax_xent(a, t), [z])

    def test_shape_mismatch_rejected(self):
        tape = engine.Tape()
        z = tape.param(np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            engine.softmax_xent(z, np.zeros((2, 4)))


class TestL2Norm:
    def test_value_and_fd(self, rng):
        x = rng.standard_normal(6)
        val, _ = engine.value_and_grad(lambda a: engine.l2_norm(a), [x])
        assert val == pytest.approx(np.linalg.norm(x), abs=1e-12)
        check_grads(lambda a: engine.l2_norm(a), [x])

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateInputError):
            engine.value_and_grad(lambda a: engine.l2_norm(a), [np.zeros(3)])


class TestCosineSimilarity:
    def test_vector_value(self):
        val, _ = engine.value_and_grad(
            lambda a: engine.cosine_similarity(a, np.array([0.0, 1.0])),
            [np.array([1.0, 1.0])],
        )
        assert val == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_vector_fd_both_operands(self, rng):
        a = rng.standard_normal(5)
        b = rng.standard_normal(5)
        check_grads(lambda x, y: engine.cosine_similarity(x, y), [a, b])

    def test_pairwise_fd(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((5, 4))
        check_grads(
            lambda x, y: engine.reduce_sum(engine.cosine_similarity(x, y)), [a, b]
        )

    def test_gradient_orthogonal_to_input(self, rng):
        # cos(a, b) is scale-free in a, so da . a = 0
        a = rng.standard_normal(6)
        b = rng.standard_normal(6)
        _, grads = engine.value_and_grad(
            lambda x: engine.cosine_similarity(x, b), [a]
        )
        assert float(grads[0] @ a) == pytest.approx(0.0, abs=1e-12)

    def test_zero_row_rejected(self):
        with pytest.raises(DegenerateInputError):
            engine.value_and_grad(
                lambda x: engine.cosine_similarity(x, np.zeros(3)), [np.ones(3)]
            )


class TestFiniteDifferenceOracle:
    def test_matches_closed_form(self):
        # f(x) = sum(x^2) has gradient 2x; central differences are O(h^2)
        x = np.array([1.0, -2.0, 3.0])
        fd = engine.finite_difference_gradient(
            lambda w: float((w[0] ** 2).sum()), [x], h=1e-5
        )
        np.testing.assert_allclose(fd[0], 2.0 * x, atol=1e-9)

    def test_rejects_bad_step(self):
        with pytest.raises(DimensionError):
            engine.finite_difference_gradient(lambda w: 0.0, [np.ones(2)], h=0.0)
