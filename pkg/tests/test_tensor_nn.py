import math

import numpy as np
import pytest

from swq import tensor_nn as tn
from swq.tensor_nn import (
    AdamState,
    LrSchedule,
    ShapeError,
    Tensor2D,
    adam_step,
    lr_at,
)

from gradcheck_util import check_op_gradients


class TestLrSchedule:
    def test_step_one(self):
        s = LrSchedule(d_model=64, warmup_steps=2000)
        assert lr_at(s, 1) == pytest.approx(0.125 * 2000**-1.5, rel=1e-12)
        assert lr_at(s, 1) == pytest.approx(1.3975424859373686e-06, rel=1e-9)

    def test_warmup_peak_both_branches_equal(self):
        s = LrSchedule()
        peak = lr_at(s, 2000)
        assert peak == pytest.approx(0.002795084971874737, rel=1e-12)
        # both min() branches coincide at the warmup boundary
        assert 2000**-0.5 == pytest.approx(2000 * 2000**-1.5, rel=1e-12)

    def test_decay_branch(self):
        assert lr_at(LrSchedule(), 8000) == pytest.approx(0.0013975424859373686, rel=1e-12)

    def test_step_zero_is_an_error(self):
        with pytest.raises(ValueError):
            lr_at(LrSchedule(), 0)

    def test_invalid_schedule(self):
        with pytest.raises(ValueError):
            LrSchedule(d_model=0)


class TestAdam:
    def test_first_step_is_minus_lr(self):
        p = Tensor2D(np.zeros((1, 1)), requires_grad=True)
        p.grad = np.ones((1, 1))
        state = AdamState()
        adam_step({"p": p}, state, lr=1e-3)
        # mhat = vhat = 1 on a fresh state, so the step is -lr/(1 + eps)
        assert p.data[0, 0] == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_gradient_zero_decay_is_identity(self):
        vals = np.array([[1.5, -2.0], [0.25, 3.0]])
        p = Tensor2D(vals.copy(), requires_grad=True)
        p.grad = np.zeros((2, 2))
        adam_step({"p": p}, AdamState(weight_decay=0.0), lr=1e-2)
        assert np.array_equal(p.data, vals)

    def test_weight_decay_applied_before_moments(self):
        p = Tensor2D(np.array([[2.0]]), requires_grad=True)
        p.grad = np.zeros((1, 1))
        adam_step({"p": p}, AdamState(weight_decay=0.1), lr=0.5)
        # decoupled decay: p -= lr * wd * p, then a zero-gradient Adam step
        assert p.data[0, 0] == pytest.approx(2.0 - 0.5 * 0.1 * 2.0, rel=1e-12)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(3)
            p = Tensor2D(rng.standard_normal((4, 4)), requires_grad=True)
            state = AdamState()
            for step in range(5):
                p.grad = rng.standard_normal((4, 4))
                adam_step({"p": p}, state, lr=1e-3)
            return p.data

        assert np.array_equal(run(), run())

    def test_block_iteration_order_invariance(self):
        rng = np.random.default_rng(11)
        a0, b0 = rng.standard_normal((3, 3)), rng.standard_normal((2, 5))
        ga, gb = rng.standard_normal((3, 3)), rng.standard_normal((2, 5))

        def run(order):
            a = Tensor2D(a0.copy(), requires_grad=True)
            b = Tensor2D(b0.copy(), requires_grad=True)
            a.grad, b.grad = ga.copy(), gb.copy()
            blocks = {"a": a, "b": b} if order == "ab" else {"b": b, "a": a}
            adam_step(blocks, AdamState(), lr=1e-3)
            return a.data, b.data

        ra, rb = run("ab")
        sa, sb = run("ba")
        assert np.array_equal(ra, sa) and np.array_equal(rb, sb)

    def test_non_finite_gradient_names_block(self):
        p = Tensor2D(np.zeros((1, 2)), requires_grad=True)
        p.grad = np.array([[1.0, np.nan]])
        with pytest.raises(FloatingPointError, match="'p'"):
            adam_step({"p": p}, AdamState(), lr=1e-3)


class TestForwardSemantics:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = Tensor2D(rng.standard_normal((6, 9)) * 5)
        y = tn.softmax_rows(x)
        assert np.all(np.abs(y.data.sum(axis=1) - 1.0) <= 1e-12)

    def test_softmax_concentrates_on_max(self):
        x = Tensor2D(np.array([[0.0, 30.0, 0.0, 0.0]]))
        y = tn.softmax_rows(x)
        assert y.data[0, 1] > 0.999999
        assert np.argmax(y.data[0]) == 1

    def test_layer_norm_row_statistics(self):
        rng = np.random.default_rng(1)
        x = Tensor2D(rng.standard_normal((5, 32)) * 3.0 + 7.0)
        gamma = Tensor2D(np.ones((1, 32)))
        beta = Tensor2D(np.zeros((1, 32)))
        eps = 1e-8
        y = tn.layer_norm(x, gamma, beta, eps=eps)
        means = y.data.mean(axis=1)
        assert np.all(np.abs(means) <= 1e-10)
        raw_var = x.data.var(axis=1)
        out_var = y.data.var(axis=1)
        # with eps accounted the output variance is var/(var+eps)
        assert np.all(np.abs(out_var - raw_var / (raw_var + eps)) <= 1e-10)
        assert np.all(np.abs(out_var - 1.0) <= 1e-8)

    def test_dropout_zero_p_is_identity(self):
        x = Tensor2D(np.arange(12.0).reshape(3, 4))
        y = tn.dropout(x, 0.0, np.random.default_rng(0), training=True)
        assert np.array_equal(y.data, x.data)

    def test_dropout_eval_mode_is_identity(self):
        x = Tensor2D(np.arange(12.0).reshape(3, 4))
        y = tn.dropout(x, 0.5, np.random.default_rng(0), training=False)
        assert np.array_equal(y.data, x.data)

    def test_dropout_seeded_reproducible_and_inverted(self):
        x = Tensor2D(np.ones((20, 20)))
        y1 = tn.dropout(x, 0.2, np.random.default_rng(42), training=True)
        y2 = tn.dropout(x, 0.2, np.random.default_rng(42), training=True)
        assert np.array_equal(y1.data, y2.data)
        kept = y1.data[y1.data != 0]
        assert np.all(np.abs(kept - 1.0 / 0.8) <= 1e-15)

    def test_single_token_attention_is_identity_on_v(self):
        q = Tensor2D(np.array([[1.0, 2.0, 3.0]]))
        k = Tensor2D(np.array([[1.0, 2.0, 3.0]]))
        v = Tensor2D(np.array([[5.0, -1.0, 0.5]]))
        out = tn.scaled_dot_product_attention(q, k, v)
        assert np.allclose(out.data, v.data, atol=1e-15)

    def test_attention_shape_mismatch(self):
        q = Tensor2D(np.zeros((2, 3)))
        k = Tensor2D(np.zeros((2, 4)))
        v = Tensor2D(np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            tn.scaled_dot_product_attention(q, k, v)

    def test_matmul_shape_error_reports_both_shapes(self):
        a = Tensor2D(np.zeros((2, 3)))
        b = Tensor2D(np.zeros((4, 2)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            tn.matmul(a, b)

    def test_multi_head_matches_single_head_single_window(self):
        rng = np.random.default_rng(5)
        q, k, v = (rng.standard_normal((6, 8)) for _ in range(3))
        fused = tn.multi_head_attention(
            Tensor2D(q), Tensor2D(k), Tensor2D(v), n_windows=1, n_heads=1
        )
        plain = tn.scaled_dot_product_attention(Tensor2D(q), Tensor2D(k), Tensor2D(v))
        assert np.allclose(fused.data, plain.data, atol=1e-12)

    def test_multi_head_does_not_mix_windows(self):
        rng = np.random.default_rng(6)
        q1, k1, v1 = (rng.standard_normal((4, 8)) for _ in range(3))
        q2, k2, v2 = (rng.standard_normal((4, 8)) for _ in range(3))
        stacked = tn.multi_head_attention(
            Tensor2D(np.vstack([q1, q2])),
            Tensor2D(np.vstack([k1, k2])),
            Tensor2D(np.vstack([v1, v2])),
            n_windows=2,
            n_heads=2,
        )
        solo1 = tn.multi_head_attention(
            Tensor2D(q1), Tensor2D(k1), Tensor2D(v1), n_windows=1, n_heads=2
        )
        assert np.allclose(stacked.data[:4], solo1.data, atol=1e-12)


def _rng_arrays(seed, *shapes):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(s) for s in shapes]


class TestGradients:
    """Analytic vs central finite differences on random small instances."""

    def test_matmul(self):
        a, b, r = _rng_arrays(0, (4, 5), (5, 3), (4, 3))
        check_op_gradients(
            lambda t: tn.reduce_sum(tn.mul(tn.matmul(t["a"], t["b"]), t["r"])),
            {"a": a, "b": b, "r": r},
        )

    def test_add_sub_mul(self):
        a, b, r = _rng_arrays(1, (3, 4), (3, 4), (3, 4))
        check_op_gradients(
            lambda t: tn.reduce_sum(
                tn.mul(tn.sub(tn.add(t["a"], t["b"]), tn.mul(t["a"], t["b"])), t["r"])
            ),
            {"a": a, "b": b, "r": r},
        )

    def test_add_bias(self):
        x, b, r = _rng_arrays(2, (5, 4), (1, 4), (5, 4))
        check_op_gradients(
            lambda t: tn.reduce_sum(tn.mul(tn.add_bias(t["x"], t["b"]), t["r"])),
            {"x": x, "b": b, "r": r},
        )

    def test_scale_and_add_const(self):
        (x,) = _rng_arrays(3, (4, 4))
        check_op_gradients(
            lambda t: tn.reduce_mean(tn.add_const(tn.scale(t["x"], 2.5), -0.7)),
            {"x": x},
        )

    def test_relu(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((6, 6))
        x[np.abs(x) < 0.05] = 0.2  # keep probes away from the kink
        r = rng.standard_normal((6, 6))
        check_op_gradients(
            lambda t: tn.reduce_sum(tn.mul(tn.relu(t["x"]), t["r"])),
            {"x": x, "r": r},
        )

    def test_softmax_rows(self):
        x, r = _rng_arrays(5, (4, 7), (4, 7))
        check_op_gradients(
            lambda t: tn.reduce_sum(tn.mul(tn.softmax_rows(t["x"]), t["r"])),
            {"x": x, "r": r},
        )

    def test_layer_norm(self):
        x, r = _rng_arrays(6, (5, 8), (5, 8))
        gamma = np.random.default_rng(7).uniform(0.5, 1.5, (1, 8))
        beta = np.random.default_rng(8).standard_normal((1, 8))
        check_op_gradients(
            lambda t: tn.reduce_sum(
                tn.mul(tn.layer_norm(t["x"], t["g"], t["b"]), t["r"])
            ),
            {"x": x, "g": gamma, "b": beta, "r": r},
        )

    def test_dropout(self):
        x, r = _rng_arrays(9, (6, 6), (6, 6))
        check_op_gradients(
            lambda t: tn.reduce_sum(
                tn.mul(tn.dropout(t["x"], 0.2, np.random.default_rng(77)), t["r"])
            ),
            {"x": x, "r": r},
        )

    def test_scaled_dot_product_attention(self):
        q, k, v, r = _rng_arrays(10, (5, 4), (5, 4), (5, 4), (5, 4))
        check_op_gradients(
            lambda t: tn.reduce_sum(
                tn.mul(tn.scaled_dot_product_attention(t["q"], t["k"], t["v"]), t["r"])
            ),
            {"q": q, "k": k, "v": v, "r": r},
        )

    def test_multi_head_attention(self):
        q, k, v, r = _rng_arrays(11, (8, 8), (8, 8), (8, 8), (8, 8))
        check_op_gradients(
            lambda t: tn.reduce_sum(
                tn.mul(
                    tn.multi_head_attention(t["q"], t["k"], t["v"], n_windows=2, n_heads=2),
                    t["r"],
                )
            ),
            {"q": q, "k": k, "v": v, "r": r},
        )

    def test_gather_rows(self):
        x, r = _rng_arrays(12, (6, 4), (3, 4))
        check_op_gradients(
            lambda t: tn.reduce_sum(tn.mul(tn.gather_rows(t["x"], [1, 3, 1]), t["r"])),
            {"x": x, "r": r},
        )

    def test_reductions(self):
        (x,) = _rng_arrays(13, (4, 5))
        check_op_gradients(lambda t: tn.reduce_sum(t["x"]), {"x": x})
        check_op_gradients(lambda t: tn.reduce_mean(t["x"]), {"x": x})

    def test_reused_tensor_accumulates(self):
        # x appears twice (squaring via mul); gradient must accumulate both paths
        (x,) = _rng_arrays(14, (3, 3))
        check_op_gradients(lambda t: tn.reduce_sum(tn.mul(t["x"], t["x"])), {"x": x})


class TestEngine:
    def test_backward_requires_scalar(self):
        x = Tensor2D(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            tn.add(x, x).backward()

    def test_no_grad_leaves_untouched(self):
        x = Tensor2D(np.ones((2, 2)), requires_grad=False)
        y = Tensor2D(np.ones((2, 2)), requires_grad=True)
        out = tn.reduce_sum(tn.mul(x, y))
        out.backward()
        assert x.grad is None
        assert np.array_equal(y.grad, np.ones((2, 2)))

    def test_zero_grad(self):
        x = Tensor2D(np.ones((2, 2)), requires_grad=True)
        tn.reduce_sum(x).backward()
        assert x.grad is not None
        tn.zero_grad([x])
        assert x.grad is None

    def test_tensor_requires_2d(self):
        with pytest.raises(ShapeError):
            Tensor2D(np.zeros((2, 2, 2)))

    def test_row_major_contiguous(self):
        x = Tensor2D(np.asfortranarray(np.ones((3, 4))))
        assert x.data.flags["C_CONTIGUOUS"]
