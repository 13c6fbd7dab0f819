"""Neural building blocks: 1-d convolution, LSTM, dense, batch norm,
dropout, soft attention, and softmax cross-entropy.

Every layer comes in a per-example form matching its mathematical
definition, and where the model needs throughput there is a batched twin
operating on a flattened step-major layout: a batch of n sequences of
length l is one rank-2 tensor of shape (l*n, d) whose row t*n + e is time
step t of example e. With n=1 the two layouts coincide, so the per-example
functions are the batched ones specialized.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    apply_op,
    concat,
    expand_cols,
    expand_rows,
    expand_scalar,
    gather_rows,
    matmul,
    matvec,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    tanh,
    transpose,
)


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Conv1dParams:
    """One bank of F filters over windows of k word vectors of width d."""

    kernel_size: int
    in_dim: int
    num_filters: int
    weights: Tensor  # (k, d, F)
    bias: Tensor     # (F,)

    @classmethod
    def init(cls, kernel_size: int, in_dim: int, num_filters: int, rng: np.random.Generator):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        w = glorot_uniform(rng, (kernel_size, in_dim, num_filters),
                           kernel_size * in_dim, num_filters)
        b = Tensor(np.zeros(num_filters), requires_grad=True)
        return cls(kernel_size, in_dim, num_filters, w, b)

    def tensors(self):
        return [("weights", self.weights), ("bias", self.bias)]


@dataclass
class LstmParams:
    """Gate and recurrent weights for one LSTM layer."""

    input_dim: int
    hidden_dim: int
    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    w_u: Tensor
    u_i: Tensor
    u_f: Tensor
    u_o: Tensor
    u_u: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_u: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        def w():
            return glorot_uniform(rng, (hidden_dim, input_dim), input_dim, hidden_dim)

        def u():
            return glorot_uniform(rng, (hidden_dim, hidden_dim), hidden_dim, hidden_dim)

        def b(value=0.0):
            return Tensor(np.full(hidden_dim, value), requires_grad=True)

        # Forget bias starts at +1 so early training retains memory.
        return cls(input_dim, hidden_dim,
                   w(), w(), w(), w(), u(), u(), u(), u(),
                   b(), b(1.0), b(), b())

    def tensors(self):
        return [(name, getattr(self, name))
                for name in ("w_i", "w_f", "w_o", "w_u",
                             "u_i", "u_f", "u_o", "u_u",
                             "b_i", "b_f", "b_o", "b_u")]


@dataclass
class DenseParams:
    weights: Tensor  # (out, in)
    bias: Tensor     # (out,)
    activation: str = "none"  # "relu" or "none"

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, activation: str = "none"):
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        w = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        b = Tensor(np.zeros(out_dim), requires_grad=True)
        return cls(w, b, activation)

    def tensors(self):
        return [("weights", self.weights), ("bias", self.bias)]


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def init(cls, dim: int, momentum: float = 0.1, epsilon: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        return cls(Tensor(np.ones(dim), requires_grad=True),
                   Tensor(np.zeros(dim), requires_grad=True),
                   np.zeros(dim), np.ones(dim), momentum, epsilon)

    def tensors(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


@dataclass
class AttentionParams:
    """Additive scoring vector + scalar bias for soft attention."""

    score_w: Tensor  # (dim,)
    score_b: Tensor  # ()

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator):
        return cls(glorot_uniform(rng, (dim,), dim, 1),
                   Tensor(np.zeros(()), requires_grad=True))

    def tensors(self):
        return [("score_w", self.score_w), ("score_b", self.score_b)]


# ---------------------------------------------------------------------------
# convolution


def _conv_window_indices(n: int, l: int, k: int) -> np.ndarray:
    # Row (t, e) of a step-major batch lives at t*n + e. Window j of example
    # e reads rows (j+i)*n + e for i in 0..k-1, flattened window-major so a
    # plain reshape yields one window per row.
    j = np.arange(l - k + 1)[:, None, None]
    e = np.arange(n)[None, :, None]
    i = np.arange(k)[None, None, :]
    return ((j + i) * n + e).reshape(-1)


def conv1d_batch(x: Tensor, n: int, l: int, p: Conv1dParams) -> Tensor:
    """Valid 1-d convolution with ReLU over a step-major batch.

    (l*n, d) -> ((l-k+1)*n, F).
    """
    k, d, f = p.kernel_size, p.in_dim, p.num_filters
    if x.data.ndim != 2 or x.data.shape != (l * n, d):
        raise ShapeError(f"conv1d: expected ({l * n}, {d}) input, got {x.data.shape}")
    if l < k:
        raise ValueError(f"conv1d: input length {l} shorter than kernel size {k}")
    windows = reshape(gather_rows(x, _conv_window_indices(n, l, k)), ((l - k + 1) * n, k * d))
    w2d = reshape(p.weights, (k * d, f))
    return relu(add(matmul(windows, w2d), expand_rows(p.bias, (l - k + 1) * n)))


def conv1d(x: Tensor, p: Conv1dParams) -> Tensor:
    """Valid 1-d convolution with ReLU: (l, d) -> (l-k+1, F)."""
    if x.data.ndim != 2:
        raise ShapeError(f"conv1d expects rank-2 input, got {x.data.shape}")
    return conv1d_batch(x, 1, x.data.shape[0], p)


# ---------------------------------------------------------------------------
# LSTM


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    """One LSTM cell update; returns (h_t, c_t).

    i, f, o are sigmoid gates; u = tanh(W_u x_t + U_u h_prev + b_u);
    c_t = i*u + f*c_prev; h_t = o*tanh(c_t).
    """
    def gate(w, u, b):
        return add(add(matvec(w, x_t), matvec(u, h_prev)), b)

    i = sigmoid(gate(p.w_i, p.u_i, p.b_i))
    f = sigmoid(gate(p.w_f, p.u_f, p.b_f))
    o = sigmoid(gate(p.w_o, p.u_o, p.b_o))
    u = tanh(gate(p.w_u, p.u_u, p.b_u))
    c_t = add(mul(i, u), mul(f, c_prev))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


def lstm_sequence_batch(x: Tensor, n: int, l: int, p: LstmParams):
    """Run an LSTM over a step-major batch, zero initial state.

    Returns (H, h_last): H is (l*n, hidden) step-major, h_last is the
    (n, hidden) final hidden state.
    """
    if l < 1:
        raise ValueError("lstm_sequence: empty sequence")
    if x.data.shape != (l * n, p.input_dim):
        raise ShapeError(f"lstm: expected ({l * n}, {p.input_dim}) input, got {x.data.shape}")
    w_it, w_ft, w_ot, w_ut = (transpose(w) for w in (p.w_i, p.w_f, p.w_o, p.w_u))
    u_it, u_ft, u_ot, u_ut = (transpose(u) for u in (p.u_i, p.u_f, p.u_o, p.u_u))
    h = Tensor(np.zeros((n, p.hidden_dim)))
    c = Tensor(np.zeros((n, p.hidden_dim)))
    rows = np.arange(n)
    steps = []
    for t in range(l):
        x_t = gather_rows(x, rows + t * n)

        def gate(wt, ut, b):
            return add(add(matmul(x_t, wt), matmul(h, ut)), expand_rows(b, n))

        i = sigmoid(gate(w_it, u_it, p.b_i))
        f = sigmoid(gate(w_ft, u_ft, p.b_f))
        o = sigmoid(gate(w_ot, u_ot, p.b_o))
        u = tanh(gate(w_ut, u_ut, p.b_u))
        c = add(mul(i, u), mul(f, c))
        h = mul(o, tanh(c))
        steps.append(h)
    return concat(steps, axis=0), h


def lstm_sequence(x: Tensor, p: LstmParams) -> Tensor:
    """Fold the cell left-to-right over (l, input_dim); row t of the output
    is h_t."""
    if x.data.ndim != 2:
        raise ShapeError(f"lstm_sequence expects rank-2 input, got {x.data.shape}")
    h_all, _ = lstm_sequence_batch(x, 1, x.data.shape[0], p)
    return h_all


# ---------------------------------------------------------------------------
# dense / batchnorm / dropout


def dense(x: Tensor, p: DenseParams) -> Tensor:
    """activation(W x + b). Accepts a single (in,) vector or an (n, in) batch."""
    if x.data.ndim == 1:
        out = add(matvec(p.weights, x), p.bias)
    elif x.data.ndim == 2:
        out = add(matmul(x, transpose(p.weights)), expand_rows(p.bias, x.data.shape[0]))
    else:
        raise ShapeError(f"dense expects rank 1 or 2, got {x.data.shape}")
    return relu(out) if p.activation == "relu" else out


def batchnorm(x: Tensor, p: BatchNormParams, mode: str) -> Tensor:
    """Batch normalization over axis 0 of an (n, dim) tensor.

    Train mode normalizes by the batch's population statistics and folds
    them into the running estimates; infer mode normalizes by the running
    estimates alone, so it never mutates state.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if x.data.ndim != 2 or x.data.shape[1] != p.gamma.data.shape[0]:
        raise ShapeError(f"batchnorm: expected (n, {p.gamma.data.shape[0]}), got {x.data.shape}")
    n = x.data.shape[0]
    gamma, beta = p.gamma, p.beta
    xd, gd = x.data, gamma.data

    if mode == "train":
        if n < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        mean = xd.mean(axis=0)
        var = xd.var(axis=0)
        p.running_mean += p.momentum * (mean - p.running_mean)
        p.running_var += p.momentum * (var - p.running_var)
        inv_std = 1.0 / np.sqrt(var + p.epsilon)
        xhat = (xd - mean) * inv_std

        def grad_fn(g):
            dxhat = g * gd
            dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                  - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv_std = 1.0 / np.sqrt(p.running_var + p.epsilon)
        xhat = (xd - p.running_mean) * inv_std

        def grad_fn(g):
            return g * gd * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0)

    return apply_op(gd * xhat + beta.data, (x, gamma, beta), grad_fn)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; in infer mode (or at rate 0) returns x itself."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a generator")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return apply_op(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# attention


def soft_attention_batch(h: Tensor, n: int, l: int, p: AttentionParams) -> Tensor:
    """Reweight each example's time steps by softmaxed additive scores.

    Weights sum to 1 per example and are rescaled by l, so uniform
    attention is the identity and the output keeps the input's shape.
    """
    if h.data.shape[0] != l * n:
        raise ShapeError(f"soft_attention: expected {l * n} rows, got {h.data.shape[0]}")
    scores = tanh(add(matvec(h, p.score_w), expand_scalar(p.score_b, l * n)))
    alpha = softmax(transpose(reshape(scores, (l, n))))        # (n, l), rows sum to 1
    weights = reshape(transpose(scale(alpha, float(l))), (l * n,))
    return mul(h, expand_cols(weights, h.data.shape[1]))


def soft_attention(h: Tensor, p: AttentionParams) -> Tensor:
    """Per-example form over (l, dim)."""
    if h.data.ndim != 2:
        raise ShapeError(f"soft_attention expects rank-2, got {h.data.shape}")
    return soft_attention_batch(h, 1, h.data.shape[0], p)


# ---------------------------------------------------------------------------
# softmax cross-entropy


def softmax_ce(logits: Tensor, target):
    """Stabilized softmax with categorical cross-entropy.

    Single form: logits (C,) and an int target; returns (probs (C,), loss).
    Batched form: logits (n, C) and an int sequence; the loss is the batch
    mean. The gradient flows through the loss output; probs are detached.
    """
    x = logits.data
    if x.ndim == 1:
        c = x.shape[0]
        t = int(target)
        if not 0 <= t < c:
            raise ValueError(f"target {t} out of range for {c} classes")
        z = x - x.max()
        logp = z - np.log(np.exp(z).sum())
        probs = np.exp(logp)

        def grad_fn(g):
            d = probs.copy()
            d[t] -= 1.0
            return (g * d,)

        loss = apply_op(np.asarray(-logp[t]), (logits,), grad_fn)
        return Tensor(probs), loss

    if x.ndim == 2:
        n, c = x.shape
        t = np.asarray(target, dtype=np.intp)
        if t.shape != (n,):
            raise ValueError(f"expected {n} targets, got shape {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= c):
            raise ValueError(f"target out of range for {c} classes")
        z = x - x.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        probs = np.exp(logp)

        def grad_fn(g):
            d = probs.copy()
            d[np.arange(n), t] -= 1.0
            return (g * d / n,)

        loss = apply_op(np.asarray(-logp[np.arange(n), t].mean()), (logits,), grad_fn)
        return Tensor(probs), loss

    raise ShapeError(f"softmax_ce expects rank 1 or 2 logits, got {x.shape}")
