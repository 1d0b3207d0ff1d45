import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otn import tensor as T
from otn.tensor import (Tensor, Tape, DimensionError, NumericError, ConfigError,
                        gradient_check)


def finite_diff(f, x, eps=1e-6):
    """Central finite differences of scalar f over the flat components of x."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def check_pullback(build, *arrays, tol=1e-6, eps=1e-6):
    """Analytic grads of sum(build(*tensors)) vs central differences."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    tape = Tape()
    with tape:
        loss = T.tensor_sum(build(*tensors))
    tape.backward(loss)

    for t, a in zip(tensors, arrays):
        def f(t=t):
            consts = [Tensor(x.data) for x in tensors]
            return float(T.tensor_sum(build(*consts)).data)
        numeric = finite_diff(f, t.data, eps)
        assert np.allclose(t.grad, numeric, rtol=tol, atol=tol), \
            "pullback mismatch: %s vs %s" % (t.grad, numeric)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_zero_annihilator(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]]))
        assert np.array_equal(out.data, [[0.0]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        assert np.allclose(T.matmul(Tensor(a), Tensor(b)).data, expected,
                           rtol=0, atol=1e-12)

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_pullbacks(self):
        rng = np.random.default_rng(2)
        check_pullback(T.matmul, rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (4, 2)))
        check_pullback(T.matmul, rng.uniform(-2, 2, 4), rng.uniform(-2, 2, (4, 3)))
        check_pullback(T.matmul, rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, 4))


class TestElementwise:
    def test_tanh_zero(self):
        assert T.elementwise("tanh", Tensor(0.0)).data == 0.0

    def test_relu(self):
        out = T.elementwise("relu", Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_concat_last_axis(self):
        out = T.elementwise("concat_last_axis", Tensor([1.0, 2.0]), Tensor([3.0]))
        assert np.array_equal(out.data, [1.0, 2.0, 3.0])

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))))

    def test_unknown_op(self):
        with pytest.raises(ConfigError):
            T.elementwise("pow", Tensor(1.0))

    @pytest.mark.parametrize("op,arity", [("add", 2), ("mul", 2), ("tanh", 1),
                                          ("relu", 1)])
    def test_pullbacks(self, op, arity):
        rng = np.random.default_rng(3)
        arrays = [rng.uniform(-2, 2, (4, 3)) for _ in range(arity)]
        # keep relu inputs away from the kink
        arrays = [np.where(np.abs(a) < 0.05, 0.5, a) for a in arrays]
        check_pullback(lambda *ts: T.elementwise(op, *ts), *arrays)

    def test_concat_pullback(self):
        rng = np.random.default_rng(4)
        check_pullback(lambda a, b: T.concat([a, b], axis=1),
                       rng.uniform(-2, 2, (3, 2)), rng.uniform(-2, 2, (3, 4)))

    def test_relu_derivative_zero_at_zero(self):
        x = Tensor([0.0, 1.0], requires_grad=True)
        tape = Tape()
        with tape:
            loss = T.tensor_sum(T.relu(x))
        tape.backward(loss)
        assert np.array_equal(x.grad, [0.0, 1.0])


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_shift_invariance(self):
        v = np.array([0.3, -1.2, 2.0, 0.0])
        for c in (-100.0, 3.7, 250.0):
            assert np.allclose(T.softmax(Tensor(v)).data,
                               T.softmax(Tensor(v + c)).data, rtol=0, atol=1e-12)

    def test_reference_values(self):
        # direct evaluation: exp(v_i) / sum_j exp(v_j)
        expected = [math.exp(i) for i in (1, 2, 3)]
        total = sum(expected)
        expected = [e / total for e in expected]
        out = T.softmax(Tensor([1.0, 2.0, 3.0]))
        assert np.allclose(out.data, expected, rtol=0, atol=1e-12)
        assert np.allclose(out.data, [0.09003, 0.24473, 0.66524], atol=5e-6)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            T.softmax(Tensor([1.0, np.nan]))
        with pytest.raises(NumericError):
            T.softmax(Tensor([1.0, np.inf]))

    def test_masked(self):
        out = T.softmax(Tensor([5.0, 1.0, 2.0]), mask=np.array([False, True, True]))
        assert out.data[0] == 0.0
        assert abs(out.data.sum() - 1.0) < 1e-12

    def test_all_masked_rejected(self):
        with pytest.raises(NumericError):
            T.softmax(Tensor([1.0, 2.0]), mask=np.array([False, False]))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_sums_to_one_and_positive(self, values):
        out = T.softmax(Tensor(values))
        assert abs(out.data.sum() - 1.0) <= 1e-12
        assert np.all(out.data > 0)

    def test_pullback(self):
        rng = np.random.default_rng(5)
        check_pullback(T.softmax, rng.uniform(-2, 2, 5))

    def test_masked_pullback(self):
        rng = np.random.default_rng(6)
        mask = np.array([True, False, True, True, False])
        x = Tensor(rng.uniform(-2, 2, 5), requires_grad=True)
        w = rng.normal(size=5)
        tape = Tape()
        with tape:
            loss = T.tensor_sum(T.mul(T.softmax(x, mask=mask), Tensor(w)))
        tape.backward(loss)

        def f():
            return float((np.multiply(_masked_softmax(x.data, mask), w)).sum())
        assert np.allclose(x.grad, finite_diff(f, x.data), atol=1e-6)
        assert np.all(x.grad[~mask] == 0.0)


def _masked_softmax(v, mask):
    out = np.zeros_like(v)
    e = np.exp(v[mask] - v[mask].max())
    out[mask] = e / e.sum()
    return out


class TestSoftmaxRows:
    def test_rows_normalized(self):
        rng = np.random.default_rng(7)
        out = T.softmax_rows(Tensor(rng.normal(size=(6, 3))))
        assert np.allclose(out.data.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_pullback(self):
        rng = np.random.default_rng(8)
        check_pullback(T.softmax_rows, rng.uniform(-2, 2, (4, 3)))


class TestDropout:
    def test_eval_is_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(5, 4)))
        out = T.dropout(x, 0.5, "eval")
        assert out is x

    def test_p_zero_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        rng = np.random.default_rng(0)
        assert T.dropout(x, 0.0, "train", rng) is x

    def test_invalid_p(self):
        with pytest.raises(ConfigError):
            T.dropout(Tensor([1.0]), 1.0, "train", np.random.default_rng(0))
        with pytest.raises(ConfigError):
            T.dropout(Tensor([1.0]), -0.1, "train", np.random.default_rng(0))

    def test_inverted_scaling_preserves_mean(self):
        rng = np.random.default_rng(9)
        x = Tensor(np.ones(100_000))
        out = T.dropout(x, 0.5, "train", rng)
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_pullback_uses_mask(self):
        rng = np.random.default_rng(10)
        x = Tensor(np.ones(1000), requires_grad=True)
        tape = Tape()
        with tape:
            out = T.dropout(x, 0.5, "train", rng)
            loss = T.tensor_sum(out)
        tape.backward(loss)
        # gradient is 2 where kept, 0 where dropped
        assert set(np.unique(x.grad)) <= {0.0, 2.0}
        assert np.array_equal(x.grad > 0, out.data > 0)


class TestBackward:
    def test_sum_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        tape = Tape()
        with tape:
            loss = T.tensor_sum(x)
        tape.backward(loss)
        assert np.array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_quadratic_gradient(self):
        x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
        tape = Tape()
        with tape:
            loss = T.scale(T.tensor_sum(T.mul(x, x)), 0.5)
        tape.backward(loss)
        assert np.allclose(x.grad, x.data, rtol=0, atol=1e-15)

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tape = Tape()
        with tape:
            y = T.add(x, x)
        with pytest.raises(DimensionError):
            tape.backward(y)

    def test_accumulation_without_reset(self):
        x = Tensor([1.0, 1.0], requires_grad=True)
        tape = Tape()
        with tape:
            loss = T.tensor_sum(x)
        tape.backward(loss)
        tape.backward(loss)
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_unreachable_tensor_grad_all_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        other = Tensor([5.0], requires_grad=True)
        tape = Tape()
        with tape:
            loss = T.tensor_sum(x)
            T.scale(other, 3.0)  # recorded but not reachable from loss
        tape.backward(loss)
        assert np.array_equal(other.grad, [0.0])

    def test_determinism(self):
        rng = np.random.default_rng(11)
        a0 = rng.normal(size=(4, 4))

        def run():
            a = Tensor(a0, requires_grad=True)
            tape = Tape()
            with tape:
                loss = T.tensor_sum(T.tanh(T.matmul(a, a)))
            tape.backward(loss)
            return a.grad.copy()

        assert np.array_equal(run(), run())


class TestGradientCheck:
    def test_linear_is_exact(self):
        theta = Tensor([0.5, -1.0, 2.0], requires_grad=True)
        w = Tensor([3.0, 1.0, -2.0])
        err = gradient_check(lambda: T.tensor_sum(T.mul(theta, w)),
                             {"theta": theta})
        assert err < 1e-9

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(12)
        logits = Tensor(rng.normal(size=7), requires_grad=True)

        def f():
            probs = T.softmax(logits)
            return T.scale(T.log(T.pick(probs, 3)), -1.0)

        assert gradient_check(f, {"logits": logits}) < 1e-6

    def test_nonfinite_objective_rejected(self):
        theta = Tensor([1.0], requires_grad=True)
        with pytest.raises(NumericError):
            gradient_check(lambda: T.log(T.scale(theta, 0.0)), {"theta": theta})

    def test_bad_eps_rejected(self):
        theta = Tensor([1.0], requires_grad=True)
        with pytest.raises(ConfigError):
            gradient_check(lambda: T.tensor_sum(theta), {"theta": theta}, eps=0.0)


class TestStructuralOps:
    def test_rank_limit(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 2, 2, 2)))

    def test_slice_pad_take_pick_pullbacks(self):
        rng = np.random.default_rng(13)
        check_pullback(lambda a: T.slice_rows(a, 1, 3), rng.uniform(-2, 2, (5, 3)))
        check_pullback(lambda a: T.pad_rows(a, 2, 1), rng.uniform(-2, 2, (4, 3)))
        check_pullback(lambda a: T.take_rows(a, [0, 2, 2, 1]),
                       rng.uniform(-2, 2, (4, 3)))
        check_pullback(lambda a: T.pick(a, (1, 2)), rng.uniform(-2, 2, (3, 4)))
        check_pullback(lambda a: T.get_row(a, 2), rng.uniform(-2, 2, (4, 3)))
        check_pullback(T.mean_axis0, rng.uniform(-2, 2, (4, 3)))
        check_pullback(lambda a: T.tile_rows(a, 5), rng.uniform(-2, 2, 4))
        check_pullback(lambda a, b: T.stack_rows([a, b]),
                       rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3))

    def test_clip_min_gradient_zero_when_clamped(self):
        x = Tensor([0.5, 2.0], requires_grad=True)
        tape = Tape()
        with tape:
            loss = T.tensor_sum(T.clip_min(x, 1.0))
        tape.backward(loss)
        assert np.array_equal(x.grad, [0.0, 1.0])

    def test_nested_tape_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError):
                Tape().__enter__()
