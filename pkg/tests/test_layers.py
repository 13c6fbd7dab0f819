"""Layer semantics against independent oracles, plus gradient checks."""
import math

import numpy as np
import pytest

from mcm import tensor as T
from mcm.layers import (
    AttentionParams,
    BatchNormParams,
    Conv1dParams,
    DenseParams,
    LstmParams,
    batchnorm,
    conv1d,
    conv1d_batch,
    dense,
    dropout,
    lstm_sequence,
    lstm_sequence_batch,
    lstm_step,
    soft_attention,
    softmax_ce,
)
from mcm.tensor import Tape, Tensor, backward

from .helpers import away_from_zero, gradcheck, max_rel_err


def conv_oracle(x, weights, bias):
    """Naive window loop: out[j, f] = relu(sum over window of x * W_f + b_f)."""
    k, d, f = weights.shape
    l = x.shape[0]
    out = np.zeros((l - k + 1, f))
    for j in range(l - k + 1):
        for ff in range(f):
            acc = bias[ff]
            for i in range(k):
                for dd in range(d):
                    acc += x[j + i, dd] * weights[i, dd, ff]
            out[j, ff] = max(acc, 0.0)
    return out


def lstm_step_oracle(x, h_prev, c_prev, p):
    """Scalar, gate-by-gate evaluation of the cell equations."""
    hid, inp = p.w_i.data.shape

    def affine(w, u, b, row):
        acc = b.data[row]
        for col in range(inp):
            acc += w.data[row, col] * x[col]
        for col in range(hid):
            acc += u.data[row, col] * h_prev[col]
        return acc

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    i = [sig(affine(p.w_i, p.u_i, p.b_i, r)) for r in range(hid)]
    f = [sig(affine(p.w_f, p.u_f, p.b_f, r)) for r in range(hid)]
    o = [sig(affine(p.w_o, p.u_o, p.b_o, r)) for r in range(hid)]
    u = [math.tanh(affine(p.w_u, p.u_u, p.b_u, r)) for r in range(hid)]
    c = [i[r] * u[r] + f[r] * c_prev[r] for r in range(hid)]
    h = [o[r] * math.tanh(c[r]) for r in range(hid)]
    return np.array(h), np.array(c), (i, f, o, u)


def zero_lstm(input_dim, hidden_dim):
    z = lambda *s: Tensor(np.zeros(s), requires_grad=True)
    return LstmParams(input_dim, hidden_dim,
                      z(hidden_dim, input_dim), z(hidden_dim, input_dim),
                      z(hidden_dim, input_dim), z(hidden_dim, input_dim),
                      z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim),
                      z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim),
                      z(hidden_dim), z(hidden_dim), z(hidden_dim), z(hidden_dim))


class TestConv1d:
    def test_single_filter_window_sum(self):
        p = Conv1dParams(1, 2, 1, Tensor([[[1.0], [0.0]]], requires_grad=True),
                         Tensor([0.0], requires_grad=True))
        out = conv1d(Tensor([[3.0, 7.0], [-2.0, 5.0]]), p)
        assert np.array_equal(out.data, [[3.0], [0.0]])

    def test_zero_weights_give_zero_map(self):
        rng = np.random.default_rng(0)
        p = Conv1dParams(2, 3, 4, Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros(4)))
        out = conv1d(Tensor(rng.normal(size=(5, 3))), p)
        assert np.array_equal(out.data, np.zeros((4, 4)))

    def test_output_widths(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(7, 3)))
        k1 = Conv1dParams.init(1, 3, 2, rng)
        k2 = Conv1dParams.init(2, 3, 2, rng)
        assert conv1d(x, k1).shape == (7, 2)
        assert conv1d(x, k2).shape == (6, 2)

    def test_matches_window_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            l, k, d, f = rng.integers(2, 7), rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            if l < k:
                l = k
            p = Conv1dParams.init(int(k), int(d), int(f), rng)
            x = rng.normal(size=(l, d))
            out = conv1d(Tensor(x), p)
            assert max_rel_err(out.data, conv_oracle(x, p.weights.data, p.bias.data)) < 1e-12

    def test_input_too_short(self):
        rng = np.random.default_rng(3)
        p = Conv1dParams.init(4, 2, 1, rng)
        with pytest.raises(ValueError):
            conv1d(Tensor(rng.normal(size=(3, 2))), p)

    def test_batched_matches_per_example(self):
        rng = np.random.default_rng(4)
        p = Conv1dParams.init(2, 3, 5, rng)
        xs = [rng.normal(size=(6, 3)) for _ in range(4)]
        flat = np.stack(xs, axis=1).reshape(-1, 3)  # step-major
        out = conv1d_batch(Tensor(flat), 4, 6, p)
        for e, x in enumerate(xs):
            single = conv1d(Tensor(x), p)
            assert max_rel_err(out.data[e::4], single.data) < 1e-12

    def test_gradients(self):
        rng = np.random.default_rng(5)
        p = Conv1dParams.init(2, 3, 2, rng)
        x = Tensor(away_from_zero(rng, (4, 3)), requires_grad=True)

        def build():
            out = conv1d(x, p)
            return T.reduce_sum(T.reduce_sum(T.mul(out, out), 1), 0)

        assert gradcheck(build, [x, p.weights, p.bias]) < 1e-4


class TestLstm:
    def test_all_zero_parameters(self):
        p = zero_lstm(2, 2)
        h, c = lstm_step(Tensor([1.0, -1.0]), Tensor([0.0, 0.0]), Tensor([0.0, 0.0]), p)
        assert np.array_equal(c.data, [0.0, 0.0])
        assert np.array_equal(h.data, [0.0, 0.0])

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = LstmParams.init(2, 2, rng)
            x, hp, cp = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
            h, c = lstm_step(Tensor(x), Tensor(hp), Tensor(cp), p)
            oh, oc, gates = lstm_step_oracle(x, hp, cp, p)
            assert max_rel_err(h.data, oh) < 1e-12
            assert max_rel_err(c.data, oc) < 1e-12
            i, f, o, u = gates
            assert all(0 < v < 1 for v in i + f + o)
            assert all(-1 < v < 1 for v in u)

    def test_forget_gate_saturation_carries_memory(self):
        p = zero_lstm(2, 2)
        p.b_f.data[...] = 10.0
        _, c = lstm_step(Tensor([0.3, -0.4]), Tensor([0.0, 0.0]), Tensor([1.0, 1.0]), p)
        assert np.allclose(c.data, [1.0, 1.0], atol=1e-4)

    def test_sequence_single_step(self):
        rng = np.random.default_rng(7)
        p = LstmParams.init(3, 2, rng)
        x = rng.normal(size=(1, 3))
        h = lstm_sequence(Tensor(x), p)
        step_h, _ = lstm_step(Tensor(x[0]), Tensor(np.zeros(2)), Tensor(np.zeros(2)), p)
        assert max_rel_err(h.data[0], step_h.data) < 1e-12

    def test_zero_parameters_propagate_zero(self):
        p = zero_lstm(2, 3)
        h = lstm_sequence(Tensor(np.random.default_rng(8).normal(size=(4, 2))), p)
        assert np.array_equal(h.data, np.zeros((4, 3)))

    def test_sequence_equals_chained_steps(self):
        rng = np.random.default_rng(9)
        p = LstmParams.init(3, 2, rng)
        x = rng.normal(size=(3, 3))
        h_all = lstm_sequence(Tensor(x), p)
        h, c = Tensor(np.zeros(2)), Tensor(np.zeros(2))
        for t in range(3):
            h, c = lstm_step(Tensor(x[t]), h, c, p)
            assert max_rel_err(h_all.data[t], h.data) < 1e-12

    def test_empty_sequence_rejected(self):
        p = LstmParams.init(2, 2, np.random.default_rng(0))
        with pytest.raises(ValueError):
            lstm_sequence(Tensor(np.zeros((0, 2))), p)

    def test_batched_matches_per_example(self):
        rng = np.random.default_rng(10)
        p = LstmParams.init(3, 4, rng)
        xs = [rng.normal(size=(5, 3)) for _ in range(3)]
        flat = np.stack(xs, axis=1).reshape(-1, 3)
        h_all, h_last = lstm_sequence_batch(Tensor(flat), 3, 5, p)
        for e, x in enumerate(xs):
            single = lstm_sequence(Tensor(x), p)
            assert max_rel_err(h_all.data[e::3], single.data) < 1e-10
            assert max_rel_err(h_last.data[e], single.data[-1]) < 1e-10

    def test_gradients(self):
        rng = np.random.default_rng(11)
        p = LstmParams.init(2, 2, rng)
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

        def build():
            h = lstm_sequence(x, p)
            return T.reduce_sum(T.reduce_sum(T.mul(h, h), 1), 0)

        params = [x] + [t for _, t in p.tensors()]
        assert gradcheck(build, params) < 1e-4


class TestDense:
    def test_identity_weights_relu(self):
        p = DenseParams(Tensor(np.eye(2)), Tensor(np.zeros(2)), "relu")
        assert np.array_equal(dense(Tensor([1.0, -1.0]), p).data, [1.0, 0.0])

    def test_bias_only(self):
        p = DenseParams(Tensor(np.zeros((1, 3))), Tensor([5.0]), "none")
        assert np.array_equal(dense(Tensor([1.0, 2.0, 3.0]), p).data, [5.0])

    def test_matches_matmul_add_oracle(self):
        rng = np.random.default_rng(12)
        p = DenseParams.init(4, 3, rng)
        x = rng.normal(size=4)
        out = dense(Tensor(x), p)
        assert max_rel_err(out.data, p.weights.data @ x + p.bias.data) < 1e-12

    def test_batched_matches_single(self):
        rng = np.random.default_rng(13)
        p = DenseParams.init(4, 3, rng, "relu")
        xs = rng.normal(size=(5, 4))
        batched = dense(Tensor(xs), p)
        for e in range(5):
            assert max_rel_err(batched.data[e], dense(Tensor(xs[e]), p).data) < 1e-12


class TestBatchNorm:
    def test_train_normalizes_columns(self):
        rng = np.random.default_rng(14)
        p = BatchNormParams.init(3)
        out = batchnorm(Tensor(rng.normal(2.0, 3.0, size=(64, 3))), p, "train")
        assert np.all(np.abs(out.data.mean(axis=0)) < 1e-6)
        assert np.all(np.abs(out.data.var(axis=0) - 1.0) < 1e-3)

    def test_zero_gamma_gives_beta(self):
        p = BatchNormParams.init(2)
        p.gamma.data[...] = 0.0
        p.beta.data[...] = [1.0, -2.0]
        out = batchnorm(Tensor(np.random.default_rng(15).normal(size=(8, 2))), p, "train")
        assert np.allclose(out.data, np.broadcast_to([1.0, -2.0], (8, 2)), atol=1e-12)

    def test_infer_uses_running_stats(self):
        p = BatchNormParams.init(2)
        x = np.random.default_rng(16).normal(size=(4, 2))
        out = batchnorm(Tensor(x), p, "infer")
        assert max_rel_err(out.data, x / np.sqrt(1.0 + p.epsilon)) < 1e-12

    def test_train_batch_of_one_rejected(self):
        p = BatchNormParams.init(2)
        with pytest.raises(ValueError):
            batchnorm(Tensor(np.ones((1, 2))), p, "train")

    def test_running_stats_update_only_in_train(self):
        p = BatchNormParams.init(2)
        x = Tensor(np.random.default_rng(17).normal(size=(8, 2)))
        batchnorm(x, p, "infer")
        assert np.array_equal(p.running_mean, np.zeros(2))
        batchnorm(x, p, "train")
        assert not np.array_equal(p.running_mean, np.zeros(2))

    @pytest.mark.parametrize("mode", ["train", "infer"])
    def test_gradients(self, mode):
        rng = np.random.default_rng(18)
        p = BatchNormParams.init(3)
        # random scale/shift and a mixing loss so dL/dx does not collapse to
        # the O(epsilon) residual of the normalization invariance
        p.gamma.data[...] = rng.uniform(0.5, 2.0, size=3)
        p.beta.data[...] = rng.normal(size=3)
        p.running_mean[...] = rng.normal(size=3)
        p.running_var[...] = rng.uniform(0.5, 2.0, size=3)
        x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 3)))

        def build():
            out = batchnorm(x, p, mode)
            return T.reduce_sum(T.reduce_sum(T.mul(T.tanh(out), w), 1), 0)

        assert gradcheck(build, [x, p.gamma, p.beta]) < 1e-4


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor([1.0, 2.0])
        assert dropout(x, 0.0, "train", np.random.default_rng(0)) is x
        assert dropout(x, 0.0, "infer") is x

    def test_infer_is_exact_identity(self):
        x = Tensor([1.0, 2.0])
        assert dropout(x, 0.7, "infer") is x

    def test_survivor_fraction_and_mean(self):
        rng = np.random.default_rng(19)
        x = Tensor(np.ones(100_000))
        out = dropout(x, 0.2, "train", rng)
        survivors = np.count_nonzero(out.data) / x.size
        assert abs(survivors - 0.8) < 0.01
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_gradient_matches_mask(self):
        x = Tensor(np.ones(1000), requires_grad=True)
        with Tape() as tape:
            out = dropout(x, 0.5, "train", np.random.default_rng(20))
            s = T.reduce_sum(out, 0)
        backward(s, tape)
        assert np.array_equal(x.grad, (out.data != 0) * 2.0)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, "train", np.random.default_rng(0))


class TestSoftAttention:
    def test_identical_rows_are_fixed_point(self):
        rng = np.random.default_rng(21)
        p = AttentionParams.init(3, rng)
        h = Tensor(np.tile(rng.normal(size=3), (4, 1)))
        out = soft_attention(h, p)
        assert max_rel_err(out.data, h.data) < 1e-12

    def test_single_row_identity(self):
        rng = np.random.default_rng(22)
        p = AttentionParams.init(3, rng)
        h = Tensor(rng.normal(size=(1, 3)))
        assert max_rel_err(soft_attention(h, p).data, h.data) < 1e-12

    def test_highest_scoring_row_dominates(self):
        # equal-norm rows; row 0 scores higher under w = e_0
        p = AttentionParams(Tensor([1.0, 0.0]), Tensor(np.asarray(0.0)))
        h = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]))
        out = soft_attention(h, p)
        norms = np.linalg.norm(out.data, axis=1)
        assert norms[0] > norms[1] and norms[0] > norms[2]

    def test_weights_nonnegative_sum_to_one(self):
        rng = np.random.default_rng(23)
        p = AttentionParams.init(4, rng)
        h = Tensor(rng.normal(size=(6, 4)))
        out = soft_attention(h, p)
        assert out.shape == (6, 4)
        # recover alpha * l from the row scaling on a nonzero reference column
        ref = h.data[:, 0]
        alpha = out.data[:, 0] / np.where(ref == 0, 1.0, ref) / 6.0
        assert abs(alpha.sum() - 1.0) < 1e-9
        assert np.all(alpha >= 0)

    def test_gradients(self):
        rng = np.random.default_rng(24)
        p = AttentionParams.init(3, rng)
        h = Tensor(rng.normal(size=(4, 3)), requires_grad=True)

        def build():
            out = soft_attention(h, p)
            return T.reduce_sum(T.reduce_sum(T.mul(out, out), 1), 0)

        assert gradcheck(build, [h, p.score_w, p.score_b]) < 1e-4


class TestSoftmaxCe:
    def test_uniform_logits(self):
        probs, loss = softmax_ce(Tensor(np.zeros(4)), 2)
        assert np.allclose(probs.data, 0.25, atol=1e-12)
        assert abs(float(loss.data) - math.log(4)) < 1e-12

    def test_confident_correct_prediction(self):
        _, loss = softmax_ce(Tensor([10.0, -10.0]), 0)
        assert abs(float(loss.data) - math.log1p(math.exp(-20.0))) < 1e-15
        assert float(loss.data) == pytest.approx(2.061e-9, rel=1e-3)

    def test_shift_invariance(self):
        rng = np.random.default_rng(25)
        logits = rng.normal(size=6)
        p1, _ = softmax_ce(Tensor(logits), 3)
        p2, _ = softmax_ce(Tensor(logits + 123.456), 3)
        assert max_rel_err(p1.data, p2.data) < 1e-12

    def test_loss_nonnegative_and_ln_c_at_uniform(self):
        for c in (2, 4, 12):
            _, loss = softmax_ce(Tensor(np.full(c, 3.3)), c - 1)
            assert abs(float(loss.data) - math.log(c)) < 1e-9

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_ce(Tensor(np.zeros(3)), 3)

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(26)
        probs, _ = softmax_ce(Tensor(rng.normal(size=9) * 10), 0)
        assert abs(probs.data.sum() - 1.0) < 1e-9

    def test_batched_matches_single_mean(self):
        rng = np.random.default_rng(27)
        logits = rng.normal(size=(5, 4))
        targets = rng.integers(0, 4, size=5)
        probs, loss = softmax_ce(Tensor(logits), targets)
        singles = [softmax_ce(Tensor(logits[i]), int(targets[i])) for i in range(5)]
        assert max_rel_err(probs.data, np.stack([p.data for p, _ in singles])) < 1e-12
        assert abs(float(loss.data) - np.mean([float(l.data) for _, l in singles])) < 1e-12

    def test_gradients(self):
        rng = np.random.default_rng(28)
        logits = Tensor(rng.normal(size=5), requires_grad=True)

        def build():
            _, loss = softmax_ce(logits, 2)
            return loss

        assert gradcheck(build, [logits]) < 1e-4
