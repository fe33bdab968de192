"""Forward-value tests for the primitive kernels."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from patchcast.errors import ContractError, DegenerateBatchError, ShapeError
from patchcast.numerics import (
    NormState,
    Tensor,
    add,
    append_token,
    causal_attention,
    matmul,
    mse,
    normalize,
    relu,
    reshape,
    scale,
    select_position,
    softmax_lastdim,
    sum_all,
)


def _matmul_oracle(a, b):
    # brute force, no BLAS: the reference the kernel is judged against
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        eye = np.eye(2, dtype=np.float32)
        assert_array_equal(matmul(Tensor(eye), Tensor(a)).data, a)

    def test_row_times_column(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert_allclose(out.data, [[11.0]])

    def test_against_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a = rng.normal(size=(4, 5)).astype(np.float32)
            b = rng.normal(size=(5, 3)).astype(np.float32)
            got = matmul(Tensor(a), Tensor(b)).data
            assert_allclose(got, _matmul_oracle(a, b), atol=1e-6)

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 2))))

    def test_rejects_mixed_dtype(self):
        a = Tensor(np.ones((2, 2)), dtype=np.float32)
        b = Tensor(np.ones((2, 2)), dtype=np.float64)
        with pytest.raises(ContractError):
            matmul(a, b)


class TestSoftmax:
    def test_two_point_logits(self):
        out = softmax_lastdim(Tensor([0.0, np.log(3.0)], dtype=np.float64))
        assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_large_equal_inputs_are_stable(self):
        out = softmax_lastdim(Tensor([1000.0, 1000.0]))
        assert np.all(np.isfinite(out.data))
        assert_allclose(out.data, [0.5, 0.5])

    def test_single_element_row(self):
        assert_allclose(softmax_lastdim(Tensor([[4.2]])).data, [[1.0]])

    def test_neg_inf_gets_zero_weight(self):
        out = softmax_lastdim(Tensor([0.0, -np.inf], dtype=np.float64))
        assert out.data[1] == 0.0
        assert out.data[0] == 1.0

    def test_rows_sum_to_one_and_shift_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            x = rng.normal(scale=5.0, size=(3, 7))
            y = softmax_lastdim(Tensor(x, dtype=np.float64)).data
            assert_allclose(y.sum(axis=-1), np.ones(3), atol=1e-12)
            shifted = softmax_lastdim(Tensor(x + 100.0, dtype=np.float64)).data
            assert_allclose(shifted, y, atol=1e-12)

    def test_empty_last_axis_rejected(self):
        with pytest.raises(ShapeError):
            softmax_lastdim(Tensor(np.ones((2, 0))))


class TestNormalize:
    def test_batch_train_two_point_column(self):
        x = Tensor([[1.0], [3.0]])
        out = normalize(
            x, "batch", Tensor([1.0]), Tensor([0.0]), state=NormState.initial(1)
        )
        assert_allclose(out.data, [[-1.0], [1.0]], atol=1e-4)

    def test_layer_constant_row_maps_to_zero(self):
        x = Tensor([[5.0, 5.0, 5.0]])
        out = normalize(x, "layer", Tensor(np.ones(3, np.float32)), Tensor(np.zeros(3, np.float32)))
        assert_allclose(out.data, np.zeros((1, 3)), atol=1e-7)

    def test_batch_infer_with_fresh_state_is_near_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 6)).astype(np.float32)
        out = normalize(
            Tensor(x), "batch", Tensor(np.ones(6, np.float32)), Tensor(np.zeros(6, np.float32)),
            state=NormState.initial(6), mode="infer",
        )
        assert_allclose(out.data, x, atol=1e-4)

    def test_batch_train_standardizes_features(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = rng.normal(loc=rng.normal(), scale=2.0, size=(16, 5))
            out = normalize(
                Tensor(x, dtype=np.float64), "batch",
                Tensor(np.ones(5), dtype=np.float64),
                Tensor(np.zeros(5), dtype=np.float64),
                state=NormState.initial(5, dtype=np.float64),
            ).data
            assert_allclose(out.mean(axis=0), np.zeros(5), atol=1e-10)
            assert_allclose(out.var(axis=0), np.ones(5), atol=1e-4)

    def test_layer_standardizes_rows(self):
        rng = np.random.default_rng(6)
        x = rng.normal(scale=3.0, size=(4, 9, 8))
        out = normalize(
            Tensor(x, dtype=np.float64), "layer",
            Tensor(np.ones(8), dtype=np.float64),
            Tensor(np.zeros(8), dtype=np.float64),
        ).data
        assert_allclose(out.mean(axis=-1), np.zeros((4, 9)), atol=1e-10)
        assert_allclose(out.var(axis=-1), np.ones((4, 9)), atol=1e-4)

    def test_gain_bias_applied(self):
        x = Tensor([[1.0], [3.0]])
        out = normalize(
            x, "batch", Tensor([2.0]), Tensor([10.0]), state=NormState.initial(1)
        )
        assert_allclose(out.data, [[8.0], [12.0]], atol=1e-3)

    def test_running_stats_update(self):
        x = np.array([[1.0, 10.0], [3.0, 14.0]], dtype=np.float32)
        state = NormState.initial(2)
        normalize(Tensor(x), "batch", Tensor(np.ones(2, np.float32)), Tensor(np.zeros(2, np.float32)), state=state)
        mu = x.mean(axis=0)
        var_unbiased = x.var(axis=0, ddof=1)
        assert_allclose(state.running_mean, 0.1 * mu, atol=1e-6)
        assert_allclose(state.running_var, 0.9 * 1.0 + 0.1 * var_unbiased, atol=1e-5)

    def test_infer_does_not_touch_state(self):
        state = NormState.initial(2)
        before = (state.running_mean.copy(), state.running_var.copy())
        normalize(
            Tensor(np.ones((3, 2), np.float32)), "batch",
            Tensor(np.ones(2, np.float32)), Tensor(np.zeros(2, np.float32)),
            state=state, mode="infer",
        )
        assert_array_equal(state.running_mean, before[0])
        assert_array_equal(state.running_var, before[1])

    def test_degenerate_batch_rejected_in_train(self):
        x = Tensor(np.ones((1, 4), np.float32))
        with pytest.raises(DegenerateBatchError):
            normalize(x, "batch", Tensor(np.ones(4, np.float32)), Tensor(np.zeros(4, np.float32)),
                      state=NormState.initial(4))

    def test_single_row_fine_in_infer(self):
        x = Tensor(np.ones((1, 4), np.float32))
        out = normalize(x, "batch", Tensor(np.ones(4, np.float32)), Tensor(np.zeros(4, np.float32)),
                        state=NormState.initial(4), mode="infer")
        assert out.shape == (1, 4)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ContractError):
            normalize(Tensor(np.ones((2, 2), np.float32)), "group",
                      Tensor(np.ones(2, np.float32)), Tensor(np.zeros(2, np.float32)))

    def test_batch_requires_state(self):
        with pytest.raises(ContractError):
            normalize(Tensor(np.ones((2, 2), np.float32)), "batch",
                      Tensor(np.ones(2, np.float32)), Tensor(np.zeros(2, np.float32)))


class TestMse:
    def test_zero_on_identical(self):
        a = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        b = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert mse(a, b).item() == 0.0

    def test_unit_offset(self):
        assert_allclose(mse(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])).item(), 1.0)

    def test_mean_of_squares(self):
        out = mse(Tensor([1.0, 2.0, 3.0]), Tensor([0.0, 0.0, 0.0]))
        assert_allclose(out.item(), (1 + 4 + 9) / 3, rtol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse(Tensor([1.0, 2.0]), Tensor([[1.0, 2.0]]))


class TestPlumbing:
    def test_add_broadcasts(self):
        out = add(Tensor(np.ones((2, 3, 4), np.float32)), Tensor(np.arange(4, dtype=np.float32)))
        assert out.shape == (2, 3, 4)
        assert_allclose(out.data[1, 2], [1, 2, 3, 4])

    def test_add_rejects_incompatible(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_scale(self):
        assert_allclose(scale(Tensor([2.0, -4.0]), 0.5).data, [1.0, -2.0])

    def test_relu(self):
        assert_allclose(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_reshape_roundtrip(self):
        x = Tensor(np.arange(12, dtype=np.float32))
        assert reshape(x, (3, 4)).shape == (3, 4)
        with pytest.raises(ShapeError):
            reshape(x, (5, 2))

    def test_sum_all(self):
        assert sum_all(Tensor(np.ones((3, 4)))).item() == 12.0

    def test_append_token(self):
        x = Tensor(np.zeros((2, 3, 4), np.float32))
        tok = Tensor(np.arange(4, dtype=np.float32))
        out = append_token(x, tok)
        assert out.shape == (2, 4, 4)
        assert_allclose(out.data[0, 3], [0, 1, 2, 3])
        assert_allclose(out.data[1, 3], [0, 1, 2, 3])
        assert_array_equal(out.data[:, :3, :], x.data)

    def test_append_token_width_mismatch(self):
        with pytest.raises(ShapeError):
            append_token(Tensor(np.zeros((2, 3, 4), np.float32)), Tensor(np.zeros(5, np.float32)))

    def test_select_position(self):
        x = Tensor(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
        out = select_position(x, 2)
        assert out.shape == (2, 4)
        assert_allclose(out.data[0], [8, 9, 10, 11])
        with pytest.raises(ShapeError):
            select_position(x, 3)


class TestCausalAttention:
    def test_output_shape(self):
        rng = np.random.default_rng(0)
        q, k, v = (Tensor(rng.normal(size=(2, 5, 8)).astype(np.float32)) for _ in range(3))
        assert causal_attention(q, k, v, 4).shape == (2, 5, 8)

    def test_first_position_sees_only_itself(self):
        # with T=1-style masking, row 0 output is v row 0 exactly (weight 1)
        rng = np.random.default_rng(1)
        q, k, v = (Tensor(rng.normal(size=(1, 4, 6)).astype(np.float32)) for _ in range(3))
        out = causal_attention(q, k, v, 2)
        assert_allclose(out.data[0, 0], v.data[0, 0], atol=1e-6)

    def test_bitwise_causality_rowwise(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            B, T, D, h = 2, 6, 8, 2
            q = rng.normal(size=(B, T, D)).astype(np.float32)
            k = rng.normal(size=(B, T, D)).astype(np.float32)
            v = rng.normal(size=(B, T, D)).astype(np.float32)
            base = causal_attention(Tensor(q), Tensor(k), Tensor(v), h).data
            kk = int(rng.integers(1, T))
            q2, k2, v2 = q.copy(), k.copy(), v.copy()
            q2[:, kk:] += 1.0
            k2[:, kk:] -= 2.0
            v2[:, kk:] *= 3.0
            pert = causal_attention(Tensor(q2), Tensor(k2), Tensor(v2), h).data
            assert_array_equal(base[:, :kk], pert[:, :kk])

    def test_uniform_weights_average_prefix(self):
        # q=k=0 makes all unmasked scores equal, so row i averages v[0..i]
        B, T, D = 1, 5, 4
        v = np.arange(T * D, dtype=np.float64).reshape(1, T, D)
        out = causal_attention(
            Tensor(np.zeros((B, T, D)), dtype=np.float64),
            Tensor(np.zeros((B, T, D)), dtype=np.float64),
            Tensor(v, dtype=np.float64), 1,
        )
        for i in range(T):
            assert_allclose(out.data[0, i], v[0, : i + 1].mean(axis=0), atol=1e-12)

    def test_head_divisibility(self):
        x = Tensor(np.ones((1, 2, 6)))
        with pytest.raises(ShapeError):
            causal_attention(x, x, x, 4)
