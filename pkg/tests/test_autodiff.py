import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cep3.autodiff import (MLP, Adam, AdamState, GRUCell, Linear, MultiHeadAttention,
                           ParameterSet, Tape, Tensor, adam_step, backward, clip_global_norm,
                           no_grad, ops)
from cep3.autodiff.params import MAGIC

from conftest import grad_check


def _param(rng, shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestForwardOps:
    def test_softplus_zero_is_ln2(self):
        assert ops.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)

    @given(st.floats(-50, 50))
    def test_softplus_bounds(self, x):
        y = ops.softplus(Tensor(x)).item()
        assert y >= 0 and y >= x

    def test_softplus_large_inputs_stay_finite(self):
        y = ops.softplus(Tensor([-800.0, 800.0])).value
        assert y[0] >= 0 and y[1] == 800.0

    @given(st.floats(-1e3, 1e3))
    def test_softmax_shift_invariance(self, c):
        p = ops.softmax(Tensor([c, c, c])).value
        np.testing.assert_allclose(p, [1 / 3] * 3, atol=1e-15)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
    def test_softmax_is_distribution(self, xs):
        p = ops.softmax(Tensor(xs)).value
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-9

    def test_softmax_rows(self):
        rng = np.random.default_rng(0)
        p = ops.softmax(Tensor(rng.normal(size=(4, 7)) * 100), axis=-1).value
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_cos_of_zero_plus_zero_bias(self):
        y = ops.cos(ops.add(Tensor(np.zeros(5)), Tensor(np.zeros(5)))).value
        np.testing.assert_array_equal(y, np.ones(5))

    def test_non_finite_output_raises(self):
        with pytest.raises(FloatingPointError):
            ops.exp(Tensor([1000.0]))
        with pytest.raises(FloatingPointError):
            ops.log(Tensor([0.0]))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
        with pytest.raises(ValueError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_bias_add_broadcasts(self):
        y = ops.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0])).value
        np.testing.assert_array_equal(y, [[1, 2, 3], [1, 2, 3]])

    def test_division_by_zero_raises(self):
        with pytest.raises((ZeroDivisionError, FloatingPointError, ValueError)):
            ops.div(Tensor([1.0]), Tensor([0.0]))


class TestBackward:
    def test_linear_map_gradient(self):
        W = Tensor(np.eye(2))
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.tsum(ops.matmul(W, x))
        g = backward(tape, loss)
        np.testing.assert_array_equal(g[x], [1.0, 1.0])

    def test_softplus_gradient_at_zero(self):
        w = Tensor(0.0, requires_grad=True)
        with Tape() as tape:
            loss = ops.softplus(w)
        assert backward(tape, loss)[w] == pytest.approx(0.5, abs=1e-15)

    def test_duplicate_input_accumulates(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            loss = ops.add(x, x)
        assert float(backward(tape, loss)[x]) == 2.0

    def test_untouched_parameter_gets_zero(self):
        ps = ParameterSet(seed=0)
        a = ps.add("a", (2,))
        ps.add("b", (3,))
        with Tape() as tape:
            loss = ops.tsum(a)
        grads = ps.collect(backward(tape, loss))
        np.testing.assert_array_equal(grads["b"], np.zeros(3))
        np.testing.assert_array_equal(grads["a"], np.ones(2))

    def test_loss_must_be_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.mul(x, 2.0)
        with pytest.raises(ValueError):
            backward(tape, y)

    def test_nothing_recorded_without_tape(self):
        x = Tensor(1.0, requires_grad=True)
        y = ops.mul(x, 2.0)
        assert not y.requires_grad

    def test_no_grad_suspends_recording(self):
        x = Tensor(1.0, requires_grad=True)
        with Tape() as tape:
            with no_grad():
                ops.mul(x, 2.0)
            ops.mul(x, 3.0)
        assert len(tape) == 1


class TestFiniteDifferences:
    """Tape gradients against central differences (step 1e-5, fp64)."""

    def test_elementwise_ops(self):
        rng = np.random.default_rng(1)
        x = _param(rng, (3, 4))
        y = _param(rng, (3, 4))
        b = _param(rng, (4,))

        def f():
            a = ops.add(ops.mul(ops.tanh(x), ops.sigmoid(y)), b)
            c = ops.sub(ops.cos(a), ops.softplus(ops.neg(y)))
            d = ops.div(ops.exp(ops.mul(x, 0.3)), ops.add(ops.softplus(y), 1.0))
            return ops.tsum(ops.add(ops.mul(c, c), ops.log(ops.add(d, 0.1))))

        assert grad_check(f, [x, y, b]) <= 1e-4

    def test_softmax_and_log_softmax(self):
        rng = np.random.default_rng(2)
        x = _param(rng, (3, 5))
        w = Tensor(rng.normal(size=(3, 5)))

        def f():
            return ops.add(ops.tsum(ops.mul(ops.softmax(x, axis=-1), w)),
                           ops.tsum(ops.mul(ops.log_softmax(x, axis=-1), w)))

        assert grad_check(f, [x]) <= 1e-4

    def test_structural_ops(self):
        rng = np.random.default_rng(3)
        x = _param(rng, (2, 3))
        y = _param(rng, (2, 2))
        w = Tensor(rng.normal(size=(3, 5)))

        def f():
            c = ops.concat([x, y], axis=-1)
            r = ops.transpose(ops.reshape(c, (5, 2)))
            m = ops.matmul(ops.take_rows(c, [1, 0, 1]), ops.getitem(r, 0))
            s = ops.mean(ops.mul(m, ops.tsum(w, axis=1)))
            return ops.add(s, ops.tsum(ops.clamp_min(x, -0.5)))

        assert grad_check(f, [x, y]) <= 1e-4

    def test_three_layer_mlp(self):
        ps = ParameterSet(seed=4)
        l1, l2, l3 = Linear(ps, "l1", 10, 8), Linear(ps, "l2", 8, 6), Linear(ps, "l3", 6, 1)
        x = Tensor(np.random.default_rng(4).normal(size=(10,)))

        def f():
            return ops.tsum(l3(ops.tanh(l2(ops.tanh(l1(x))))))

        assert grad_check(f, [t for _, t in ps]) <= 1e-4

    def test_mlp_block(self):
        ps = ParameterSet(seed=5)
        mlp = MLP(ps, "m", 4, 7, 3)
        x = _param(np.random.default_rng(5), (2, 4))

        def f():
            y = mlp(x)
            return ops.tsum(ops.mul(y, y))

        assert grad_check(f, [x] + [t for _, t in ps]) <= 1e-4

    def test_gru_cell(self):
        ps = ParameterSet(seed=6)
        cell = GRUCell(ps, "g", 3, 4)
        rng = np.random.default_rng(6)
        x, h = _param(rng, (3,)), _param(rng, (4,))

        def f():
            out = cell(x, h)
            return ops.tsum(ops.mul(out, out))

        assert grad_check(f, [x, h] + [t for _, t in ps]) <= 1e-4

    def test_attention_four_heads_five_keys(self):
        ps = ParameterSet(seed=7)
        attn = MultiHeadAttention(ps, "a", 6, 5, 8, heads=4)
        rng = np.random.default_rng(7)
        q, K, V = _param(rng, (6,)), _param(rng, (5, 5)), _param(rng, (5, 5))

        def f():
            out = attn(q, K, V)
            return ops.tsum(ops.mul(out, out))

        assert grad_check(f, [q, K, V] + [t for _, t in ps]) <= 1e-4

    def test_batched_attention_with_padding(self):
        ps = ParameterSet(seed=8)
        attn = MultiHeadAttention(ps, "a", 4, 3, 4, heads=2)
        rng = np.random.default_rng(8)
        q, C = _param(rng, (3, 4)), _param(rng, (3, 2, 3))
        mask = np.array([[True, True], [True, False], [False, False]])

        def f():
            out = attn.batched(q, C, mask)
            return ops.tsum(ops.mul(out, out))

        assert grad_check(f, [q, C] + [t for _, t in ps]) <= 1e-4

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
    def test_random_shapes_matmul(self, n, m, seed):
        rng = np.random.default_rng(seed)
        A, B = _param(rng, (n, m)), _param(rng, (m, 3))

        def f():
            return ops.tsum(ops.tanh(ops.matmul(A, B)))

        assert grad_check(f, [A, B]) <= 1e-4


class TestGRU:
    def test_zero_weights_halve_state(self):
        ps = ParameterSet(seed=0)
        cell = GRUCell(ps, "g", 3, 4)
        ps.load_values({k: np.zeros_like(v.value) for k, v in ps})
        h = np.array([1.0, -2.0, 0.5, 3.0])
        out = cell(np.array([0.3, 0.1, -0.7]), h).value
        np.testing.assert_allclose(out, 0.5 * h, atol=1e-15)

    def test_saturated_update_gate_keeps_state(self):
        ps = ParameterSet(seed=0)
        cell = GRUCell(ps, "g", 3, 4)
        cell.z.b.value = np.full(4, 50.0)
        h = np.array([1.0, -2.0, 0.5, 3.0])
        out = cell(np.ones(3), h).value
        np.testing.assert_allclose(out, h, atol=1e-10)

    def test_dimension_mismatch(self):
        cell = GRUCell(ParameterSet(seed=0), "g", 3, 4)
        with pytest.raises(ValueError):
            cell(np.ones(2), np.ones(4))


class TestAttention:
    def _attn(self):
        ps = ParameterSet(seed=1)
        return MultiHeadAttention(ps, "a", 4, 3, 6, heads=2)

    def test_single_key_returns_value_projection(self):
        attn = self._attn()
        K = np.array([[0.2, -1.0, 0.5]])
        out = attn(np.ones(4), K).value
        np.testing.assert_allclose(out, K[0] @ attn.Wv.value, atol=1e-12)

    def test_identical_keys_average_values(self):
        attn = self._attn()
        K = np.array([[0.2, -1.0, 0.5], [0.2, -1.0, 0.5]])
        V = np.array([[1.0, 0.0, 2.0], [-1.0, 4.0, 0.0]])
        out = attn(np.ones(4), K, V).value
        np.testing.assert_allclose(out, V.mean(axis=0) @ attn.Wv.value, atol=1e-12)

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            MultiHeadAttention(ParameterSet(seed=0), "a", 4, 3, 6, heads=4)

    def test_empty_keys_rejected(self):
        with pytest.raises(ValueError):
            self._attn()(np.ones(4), np.zeros((0, 3)))


class TestAdam:
    @pytest.mark.parametrize("g", [1e-6, -3.0, 250.0])
    def test_first_step_moves_by_lr(self, g):
        ps = ParameterSet(seed=0)
        w = ps.add("w", (1,), "zeros")
        adam_step(ps, {"w": np.array([g])}, AdamState(), lr=1e-3)
        assert w.value[0] == pytest.approx(-1e-3 * np.sign(g), rel=1e-2)

    def test_zero_gradient_is_noop(self):
        ps = ParameterSet(seed=0)
        w = ps.add("w", (3,))
        before = w.value.copy()
        opt = Adam(ps)
        for _ in range(5):
            opt.step({"w": np.zeros(3)})
        np.testing.assert_array_equal(w.value, before)

    def test_quadratic_bowl(self):
        # reference recursion written out independently
        w_ref, m, v = 1.0, 0.0, 0.0
        for k in range(1, 201):
            g = 2 * w_ref
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w_ref -= 0.01 * (m / (1 - 0.9 ** k)) / (math.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
        ps = ParameterSet(seed=0)
        w = ps.add("w", (1,), "zeros")
        w.value = np.array([1.0])
        opt, trace = Adam(ps, lr=0.01), []
        for _ in range(200):
            opt.step({"w": 2 * w.value})
            trace.append(abs(w.value[0]))
        assert trace[-1] < 0.5
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert w.value[0] == pytest.approx(w_ref, abs=1e-12)

    def test_defaults(self):
        opt = Adam(ParameterSet(seed=0))
        assert (opt.lr, opt.beta1, opt.beta2, opt.eps) == (1e-4, 0.9, 0.999, 1e-8)

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_global_norm(grads, 1.0) == pytest.approx(5.0)
        total = math.sqrt(grads["a"][0] ** 2 + grads["b"][0] ** 2)
        assert total == pytest.approx(1.0)


class TestParameterSet:
    def test_duplicate_names_rejected(self):
        ps = ParameterSet(seed=0)
        ps.add("w", (2,))
        with pytest.raises(KeyError):
            ps.add("w", (2,))

    def test_init_ranges(self):
        ps = ParameterSet(seed=0)
        w = ps.add("w", (16, 4))
        b = ps.add("b", (4,), "zeros")
        om = ps.add("om", (200,), "loguniform")
        assert np.abs(w.value).max() <= 0.25
        assert not b.value.any()
        assert om.value.min() >= 1e-3 and om.value.max() <= 10.0

    def test_same_seed_is_bit_identical(self):
        a, b = ParameterSet(seed=9), ParameterSet(seed=9)
        for ps in (a, b):
            MLP(ps, "m", 5, 4, 3)
        for (_, x), (_, y) in zip(a, b):
            assert x.value.tobytes() == y.value.tobytes()

    def test_container_round_trip_and_layout(self, tmp_path):
        ps = ParameterSet(seed=3)
        ps.add("w", (2, 3))
        ps.add("b", (3,), "zeros")
        path = tmp_path / "p.bin"
        ps.save(path)
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        assert int.from_bytes(raw[8:12], "little") == 1
        mlen = int.from_bytes(raw[12:20], "little")
        assert len(raw) == 20 + mlen + 4 * 9
        manifest, arrays = ParameterSet.read_container(path)
        assert [e["name"] for e in manifest["arrays"]] == ["w", "b"]
        assert manifest["arrays"][0]["dtype"] == "float32"
        other = ParameterSet(seed=99)
        other.add("w", (2, 3))
        other.add("b", (3,), "zeros")
        other.load(path)
        np.testing.assert_allclose(other["w"].value, ps["w"].value.astype(np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTAPSET" + bytes(12))
        with pytest.raises(ValueError):
            ParameterSet.read_container(path)

    def test_missing_parameter_on_load(self, tmp_path):
        ps = ParameterSet(seed=0)
        ps.add("w", (2,))
        ps.save(tmp_path / "p.bin")
        other = ParameterSet(seed=0)
        other.add("w", (2,))
        other.add("extra", (1,))
        with pytest.raises(KeyError):
            other.load(tmp_path / "p.bin")
