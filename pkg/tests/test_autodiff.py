"""
Test suite for the reverse-mode engine and the Adam optimizer.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gagsl.autodiff import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    glorot_init,
    gradient_check,
    set_requires_grad,
    zero_grad,
)
from gagsl.exceptions import ContractViolation


def param(values) -> Tensor:
    return Tensor(np.array(values, dtype=float), requires_grad=True)


class TestPrimitives:
    """Test forward values of the primitives."""

    def test_relu(self):
        """Test relu([[-1, 2]]) = [[0, 2]]."""
        assert_array_equal(Tape().relu([[-1.0, 2.0]]).values, [[0.0, 2.0]])

    def test_uniform_softmax(self):
        """Test that a zero row softmaxes to 1/3 each."""
        assert_allclose(Tape().row_softmax([[0.0, 0.0, 0.0]]).values, [[1 / 3, 1 / 3, 1 / 3]])

    def test_softmax_rows_positive_and_normalized(self):
        """Test that softmax rows are positive and sum to one even for large logits."""
        logits = np.random.default_rng(0).standard_normal((6, 5)) * 50
        y = Tape().row_softmax(logits).values
        assert np.all(y > 0)
        assert_allclose(y.sum(axis=1), np.ones(6), atol=1e-9)

    def test_matmul_matches_triple_loop(self):
        """Test matmul against a naive triple loop."""
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 4))
        expected = np.zeros((2, 4))
        for i in range(2):
            for j in range(4):
                for k in range(3):
                    expected[i, j] += a[i, k] * b[k, j]
        assert_allclose(Tape().matmul(a, b).values, expected, atol=1e-12)

    def test_shape_mismatch(self):
        """Test that nonconforming shapes are contract violations."""
        with pytest.raises(ContractViolation):
            Tape().matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ContractViolation):
            Tape().add(np.ones((2, 3)), np.ones((3, 2)))

    def test_unknown_primitive(self):
        """Test that the primitive set is closed."""
        with pytest.raises(ContractViolation):
            Tape().apply("sigmoid", np.ones((1, 1)))

    def test_segment_softmax_groups(self):
        """Test that each segment sums to one independently."""
        values = np.array([[1.0], [2.0], [0.5], [0.5], [3.0]])
        y = Tape().segment_softmax(values, np.array([0, 0, 1, 1, 1]), 2).values[:, 0]
        assert_allclose([y[:2].sum(), y[2:].sum()], [1.0, 1.0])
        assert y[2] == y[3]

    def test_sym_normalize_matches_dense(self):
        """Test self-loop normalization of a single edge."""
        y = Tape().sym_normalize(np.array([[0.0, 1.0], [1.0, 0.0]])).values
        assert_allclose(y, [[0.5, 0.5], [0.5, 0.5]])


class TestDropout:
    """Test inverted dropout."""

    def test_eval_mode_is_identity(self):
        """Test that dropout does nothing outside training mode."""
        x = np.random.default_rng(0).random((4, 4))
        assert_array_equal(Tape(training=False).dropout(x, 0.5, 0, 1).values, x)

    def test_invalid_rate(self):
        """Test that p outside [0, 1) is rejected."""
        with pytest.raises(ContractViolation):
            Tape().dropout(np.ones((2, 2)), 1.0, 0)

    def test_expected_value_preserved(self):
        """Test that the mean over 10^4 entries stays within a 3 sigma band of the input."""
        p = 0.3
        out = Tape().dropout(np.ones((100, 100)), p, 7, "layer", 0).values
        sigma = np.sqrt(p / (1 - p)) / 100.0
        assert abs(out.mean() - 1.0) < 3 * sigma
        assert set(np.unique(out)) <= {0.0, 1.0 / (1 - p)}

    def test_same_counters_same_mask(self):
        """Test that masks are keyed by (seed, counters)."""
        x = np.ones((5, 5))
        first = Tape().dropout(x, 0.5, 3, 0, 1, 2).values
        assert_array_equal(first, Tape().dropout(x, 0.5, 3, 0, 1, 2).values)
        assert not np.array_equal(first, Tape().dropout(x, 0.5, 3, 0, 1, 3).values)


class TestBackward:
    """Test gradient accumulation."""

    def test_mean_gradient(self):
        """Test d mean(x) / dx = 0.25 for a 2x2 input."""
        x = param(np.zeros((2, 2)))
        tape = Tape()
        tape.backward(tape.reduce_mean(x))
        assert_allclose(x.grad, np.full((2, 2), 0.25))

    def test_relu_subgradient(self):
        """Test the relu gradient on the negative side is zero."""
        x = param([[-1.0, 3.0]])
        tape = Tape()
        tape.backward(tape.reduce_sum(tape.relu(x)))
        assert_array_equal(x.grad, [[0.0, 1.0]])

    def test_non_scalar_loss(self):
        """Test that backward on a non-scalar is a contract violation."""
        x = param(np.ones((2, 2)))
        tape = Tape()
        with pytest.raises(ContractViolation):
            tape.backward(tape.relu(x))

    def test_shared_subexpression_accumulates(self):
        """Test that reusing an intermediate matches the duplicated construction."""
        rng = np.random.default_rng(2)
        x_shared = param(rng.standard_normal((3, 3)))
        x_dup = param(x_shared.values.copy())

        tape = Tape()
        h = tape.relu(x_shared)
        tape.backward(tape.reduce_sum(tape.elementwise_mul(h, h)))

        tape = Tape()
        tape.backward(tape.reduce_sum(tape.elementwise_mul(tape.relu(x_dup), tape.relu(x_dup))))

        assert_allclose(x_shared.grad, x_dup.grad)

    def test_accumulates_until_zero_grad(self):
        """Test that two backward passes add up and zero_grad resets."""
        x = param([[1.0, 2.0]])
        for _ in range(2):
            tape = Tape()
            tape.backward(tape.reduce_sum(x))
        assert_array_equal(x.grad, [[2.0, 2.0]])
        zero_grad([x])
        assert_array_equal(x.grad, [[0.0, 0.0]])

    def test_frozen_group_gets_no_gradient(self):
        """Test that set_requires_grad(False) isolates a parameter group."""
        w = param(np.ones((2, 2)))
        v = param(np.ones((2, 2)))
        set_requires_grad({"v": v}, False)
        tape = Tape()
        tape.backward(tape.reduce_sum(tape.matmul(w, v)))
        assert np.any(w.grad != 0)
        assert_array_equal(v.grad, np.zeros((2, 2)))


class TestGradientCheck:
    """Test analytic gradients against central finite differences."""

    def test_quadratic(self):
        """Test ||x||^2 is exact to 1e-8."""
        x = param(np.random.default_rng(0).standard_normal((3, 2)))
        error = gradient_check(lambda t: t.reduce_sum(t.elementwise_mul(x, x)), {"x": x}, max_coords=None)
        assert error <= 1e-8

    def test_cross_entropy_head(self):
        """Test a log-softmax negative log-likelihood on random logits."""
        rng = np.random.default_rng(1)
        logits = param(rng.standard_normal((6, 4)))
        labels = rng.integers(0, 4, 6)

        def loss(t):
            return t.scale(t.reduce_mean(t.pick(t.log_softmax_rows(logits), np.arange(6), labels)), -1.0)

        assert gradient_check(loss, {"logits": logits}, max_coords=None) <= 1e-4

    def test_gcn_layer(self):
        """Test a GCN layer with differentiable structure, bias and softmax."""
        rng = np.random.default_rng(2)
        upper = np.triu(rng.random((6, 6)), k=1)
        a = param(upper + upper.T)
        x = rng.standard_normal((6, 3))
        w = param(rng.standard_normal((3, 4)))
        b = param(rng.standard_normal((1, 4)))

        def loss(t):
            h = t.add_row(t.matmul(t.matmul(t.sym_normalize(a), x), w), b)
            return t.reduce_mean(t.log(t.row_softmax(h)))

        assert gradient_check(loss, {"a": a, "w": w, "b": b}, max_coords=None) <= 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_composite_primitives(self, seed):
        """Test gather, concat, l2-normalize, transpose, segment softmax and scatter together."""
        rng = np.random.default_rng(seed)
        h = param(rng.standard_normal((5, 3)))
        rows = np.array([0, 0, 1, 2, 2, 2, 4])
        cols = np.array([1, 3, 0, 1, 3, 4, 2])

        def loss(t):
            pair = t.concat_cols(t.gather_rows(h, rows), t.gather_rows(h, cols))
            logits = t.matmul(t.l2_normalize_rows(pair), np.ones((6, 1)))
            s = t.scatter_pairs(t.segment_softmax(logits, rows, 5), rows, cols, (5, 5))
            sym = t.symmetrize(s)
            return t.reduce_sum(t.exp(t.matmul(sym, t.transpose(sym))))

        assert gradient_check(loss, {"h": h}, max_coords=None) <= 1e-4


class TestAdam:
    """Test the Adam update."""

    def test_zero_gradient_is_fixed_point(self):
        """Test that a zero gradient leaves parameters unchanged."""
        p = {"w": param([[1.0, -2.0]])}
        state = AdamState(p, lr=0.01)
        adam_step(state, p, {"w": np.zeros((1, 2))})
        assert_array_equal(p["w"].values, [[1.0, -2.0]])

    def test_first_step_moves_by_lr(self):
        """Test that step 1 with g=1 decreases the parameter by lr*g/(|g|+eps)."""
        p = {"w": param([[0.0]])}
        state = AdamState(p, lr=0.01)
        adam_step(state, p, {"w": np.ones((1, 1))})
        assert p["w"].values[0, 0] == pytest.approx(-0.01 / (1.0 + 1e-8), abs=1e-15)
        assert state.step_count == 1

    def test_monotone_on_quadratic(self):
        """Test that repeated steps on x^2 decrease the loss."""
        x = param([[3.0]])
        state = AdamState({"x": x}, lr=0.1)
        losses = []
        for _ in range(3):
            zero_grad([x])
            tape = Tape()
            loss = tape.reduce_sum(tape.elementwise_mul(x, x))
            losses.append(loss.item())
            tape.backward(loss)
            adam_step(state, {"x": x})
        assert losses[0] > losses[1] > losses[2]

    def test_decoupled_weight_decay(self):
        """Test that weight decay shrinks parameters even with a zero gradient."""
        p = {"w": param([[2.0]])}
        state = AdamState(p, lr=0.1, weight_decay=0.5)
        adam_step(state, p, {"w": np.zeros((1, 1))})
        assert p["w"].values[0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_state_dict_round_trip(self):
        """Test that moments and step survive state_dict/load_state_dict."""
        p = {"w": glorot_init(3, 2, np.random.default_rng(0))}
        state = AdamState(p, lr=0.01)
        adam_step(state, p, {"w": np.ones((3, 2))})
        restored = AdamState(p, lr=0.01)
        restored.load_state_dict(state.state_dict())
        assert restored.step_count == 1
        assert_array_equal(restored.m["w"], state.m["w"])


class TestGlorot:
    """Test parameter initialization."""

    def test_bounds(self):
        """Test that glorot values stay within +-sqrt(6/(rows+cols))."""
        w = glorot_init(30, 20, np.random.default_rng(0))
        assert np.abs(w.values).max() <= np.sqrt(6.0 / 50)
        assert w.requires_grad
