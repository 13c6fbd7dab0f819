"""The multi-cascaded classifier: a stacked-CNN learner, a stacked-LSTM
learner, and an LSTM encoder learner, each with its own supervised head,
feeding a discriminator that fuses their intermediate features for the
final prediction. Also the single-layer CNN baseline it is compared to.

Forward passes are batched internally (step-major layout, see layers);
the single-example entry points wrap a batch of one. All four heads share
one computation graph, so one backward pass trains every cascade and the
discriminator jointly; ``stop_disc_gradients`` cuts the graph at the
feature boundary for strictly local supervision of the learners.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .embeddings import EmbeddingTable, lookup
from .layers import (
    AttentionParams,
    BatchNormParams,
    Conv1dParams,
    DenseParams,
    LstmParams,
    batchnorm,
    conv1d_batch,
    dense,
    dropout,
    lstm_sequence_batch,
    soft_attention_batch,
    softmax_ce,
)
from .tensor import Tensor


@dataclass
class McmConfig:
    vocab_size: int
    embed_dim: int
    num_classes: int
    max_len: int
    num_filters: int = 128
    hidden_dim: int = 128
    dense1_dim: int = 128
    dense2_dim: int = 64
    kernel1: int = 1
    kernel2: int = 2
    attention: bool = False
    dropout: float = 0.2
    stop_disc_gradients: bool = False

    def validate(self) -> None:
        if self.max_len < self.kernel1 + self.kernel2 - 1:
            raise ValueError("max_len too short for the stacked convolutions")
        if min(self.vocab_size, self.embed_dim, self.num_classes, self.num_filters,
               self.hidden_dim, self.dense1_dim, self.dense2_dim) < 1:
            raise ValueError("all dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class LearnerHead:
    """dense -> batchnorm -> relu -> dropout, twice, then a linear output.

    The post-ReLU activation of the second block is the feature handed to
    the discriminator.
    """

    dense1: DenseParams
    bn1: BatchNormParams
    dense2: DenseParams
    bn2: BatchNormParams
    out: DenseParams
    dropout_rate: float

    @classmethod
    def init(cls, in_dim: int, d1: int, d2: int, num_classes: int,
             dropout_rate: float, rng: np.random.Generator):
        return cls(
            DenseParams.init(in_dim, d1, rng),
            BatchNormParams.init(d1),
            DenseParams.init(d1, d2, rng),
            BatchNormParams.init(d2),
            DenseParams.init(d2, num_classes, rng),
            dropout_rate,
        )

    def tensors(self):
        out = []
        for part_name in ("dense1", "bn1", "dense2", "bn2", "out"):
            part = getattr(self, part_name)
            out.extend((f"{part_name}.{n}", t) for n, t in part.tensors())
        return out

    def buffers(self):
        out = []
        for part_name in ("bn1", "bn2"):
            part = getattr(self, part_name)
            out.extend((f"{part_name}.{n}", a) for n, a in part.buffers())
        return out


def _head_forward(x: Tensor, head: LearnerHead, mode: str,
                  rng: Optional[np.random.Generator]):
    # A training batch of one example cannot produce batch statistics, so
    # batchnorm falls back to the running estimates; gamma/beta still learn.
    bn_mode = mode if mode == "infer" or x.data.shape[0] >= 2 else "infer"
    h = T.relu(batchnorm(dense(x, head.dense1), head.bn1, bn_mode))
    h = dropout(h, head.dropout_rate, mode, rng)
    feat = T.relu(batchnorm(dense(h, head.dense2), head.bn2, bn_mode))
    h = dropout(feat, head.dropout_rate, mode, rng)
    return dense(h, head.out), feat


@dataclass
class McmModel:
    config: McmConfig
    embedding: EmbeddingTable
    cnn1: Conv1dParams
    cnn2: Conv1dParams
    lstm_s1: LstmParams
    lstm_s2: LstmParams
    lstm_enc: LstmParams
    head_cnn: LearnerHead
    head_slstm: LearnerHead
    head_lstm: LearnerHead
    disc: LearnerHead
    att_cnn: Optional[AttentionParams] = None
    att_lstm: Optional[AttentionParams] = None

    def _components(self):
        comps = [("embedding", self.embedding), ("cnn1", self.cnn1), ("cnn2", self.cnn2),
                 ("lstm_s1", self.lstm_s1), ("lstm_s2", self.lstm_s2),
                 ("lstm_enc", self.lstm_enc), ("head_cnn", self.head_cnn),
                 ("head_slstm", self.head_slstm), ("head_lstm", self.head_lstm),
                 ("disc", self.disc)]
        if self.att_cnn is not None:
            comps += [("att_cnn", self.att_cnn), ("att_lstm", self.att_lstm)]
        return comps

    def named_tensors(self):
        out = []
        for prefix, comp in self._components():
            out.extend((f"{prefix}.{n}", t) for n, t in comp.tensors())
        return out

    def named_buffers(self):
        out = []
        for prefix, comp in self._components():
            if hasattr(comp, "buffers"):
                out.extend((f"{prefix}.{n}", a) for n, a in comp.buffers())
        return out

    def parameters(self):
        return [t for _, t in self.named_tensors() if t.requires_grad]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def build_mcm(config: McmConfig, embedding: EmbeddingTable, seed_seq) -> McmModel:
    """Assemble the network; raises on inconsistent dimensions.

    Each component draws its weights from an independently forked stream,
    so toggling attention leaves every other component's initial weights
    untouched.
    """
    config.validate()
    if embedding.vocab_size != config.vocab_size or embedding.dim != config.embed_dim:
        raise ValueError("embedding table does not match the configuration")
    if isinstance(seed_seq, (int, np.integer)):
        seed_seq = np.random.SeedSequence(seed_seq)
    rngs = [np.random.default_rng(s) for s in seed_seq.spawn(11)]
    cfg = config
    feat_total = 3 * cfg.dense2_dim
    return McmModel(
        config=cfg,
        embedding=embedding,
        cnn1=Conv1dParams.init(cfg.kernel1, cfg.embed_dim, cfg.num_filters, rngs[0]),
        cnn2=Conv1dParams.init(cfg.kernel2, cfg.num_filters, cfg.num_filters, rngs[1]),
        lstm_s1=LstmParams.init(cfg.embed_dim, cfg.hidden_dim, rngs[2]),
        lstm_s2=LstmParams.init(cfg.hidden_dim, cfg.hidden_dim, rngs[3]),
        lstm_enc=LstmParams.init(cfg.embed_dim, cfg.hidden_dim, rngs[4]),
        head_cnn=LearnerHead.init(2 * cfg.num_filters, cfg.dense1_dim, cfg.dense2_dim,
                                  cfg.num_classes, cfg.dropout, rngs[5]),
        head_slstm=LearnerHead.init(2 * cfg.hidden_dim, cfg.dense1_dim, cfg.dense2_dim,
                                    cfg.num_classes, cfg.dropout, rngs[6]),
        head_lstm=LearnerHead.init(cfg.hidden_dim, cfg.dense1_dim, cfg.dense2_dim,
                                   cfg.num_classes, cfg.dropout, rngs[7]),
        disc=LearnerHead.init(feat_total, cfg.dense1_dim, cfg.dense2_dim,
                              cfg.num_classes, cfg.dropout, rngs[8]),
        att_cnn=AttentionParams.init(cfg.num_filters, rngs[9]) if cfg.attention else None,
        att_lstm=AttentionParams.init(cfg.hidden_dim, rngs[10]) if cfg.attention else None,
    )


@dataclass
class McmOutput:
    """Per-head probabilities (detached), the logits behind them, and the
    features the discriminator consumed. Batched fields are (n, .)."""

    probs_cnn: Tensor
    probs_slstm: Tensor
    probs_lstm: Tensor
    probs_disc: Tensor
    logits_cnn: Tensor
    logits_slstm: Tensor
    logits_lstm: Tensor
    logits_disc: Tensor
    features_cnn: Tensor
    features_slstm: Tensor
    features_lstm: Tensor


def _probs_np(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return Tensor(e / e.sum(axis=-1, keepdims=True))


def _pool_time(flat: Tensor, n: int, steps: int, width: int) -> Tensor:
    """Global max-pool and average-pool over time, concatenated: (n, 2*width)."""
    cube = T.reshape(flat, (steps, n, width))
    return T.concat([T.reduce_max(cube, 0), T.reduce_mean(cube, 0)], axis=1)


def forward_batch(model: McmModel, ids: np.ndarray, mode: str,
                  rng: Optional[np.random.Generator] = None,
                  trace: Optional[dict] = None) -> McmOutput:
    """Run all four components over an (n, max_len) id batch."""
    cfg = model.config
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != cfg.max_len:
        raise ValueError(f"expected (n, {cfg.max_len}) ids, got {ids.shape}")
    n, l = ids.shape
    x = lookup(model.embedding, ids.T.reshape(-1))  # step-major (l*n, d)

    def note(key, t):
        if trace is not None:
            trace[key] = t.data.copy()

    note("embedded", x)

    # stacked-CNN cascade
    c1 = conv1d_batch(x, n, l, model.cnn1)
    w1 = l - cfg.kernel1 + 1
    note("cnn1", c1)
    if model.att_cnn is not None:
        c1 = soft_attention_batch(c1, n, w1, model.att_cnn)
        note("cnn1_attended", c1)
    c2 = conv1d_batch(c1, n, w1, model.cnn2)
    w2 = w1 - cfg.kernel2 + 1
    note("cnn2", c2)
    cnn_pooled = _pool_time(c2, n, w2, cfg.num_filters)
    logits_cnn, feat_cnn = _head_forward(cnn_pooled, model.head_cnn, mode, rng)

    # stacked-LSTM cascade
    h1, _ = lstm_sequence_batch(x, n, l, model.lstm_s1)
    note("slstm_h1", h1)
    if model.att_lstm is not None:
        h1 = soft_attention_batch(h1, n, l, model.att_lstm)
        note("slstm_h1_attended", h1)
    h2, _ = lstm_sequence_batch(h1, n, l, model.lstm_s2)
    note("slstm_h2", h2)
    slstm_pooled = _pool_time(h2, n, l, cfg.hidden_dim)
    logits_slstm, feat_slstm = _head_forward(slstm_pooled, model.head_slstm, mode, rng)

    # LSTM encoder cascade: the final hidden state summarizes the text
    _, h_last = lstm_sequence_batch(x, n, l, model.lstm_enc)
    note("lstm_last", h_last)
    logits_lstm, feat_lstm = _head_forward(h_last, model.head_lstm, mode, rng)

    # discriminator over the fused learner features
    feats = T.concat([feat_cnn, feat_slstm, feat_lstm], axis=1)
    if cfg.stop_disc_gradients:
        feats = feats.detach()
    logits_disc, _ = _head_forward(feats, model.disc, mode, rng)

    return McmOutput(
        probs_cnn=_probs_np(logits_cnn), probs_slstm=_probs_np(logits_slstm),
        probs_lstm=_probs_np(logits_lstm), probs_disc=_probs_np(logits_disc),
        logits_cnn=logits_cnn, logits_slstm=logits_slstm,
        logits_lstm=logits_lstm, logits_disc=logits_disc,
        features_cnn=feat_cnn, features_slstm=feat_slstm, features_lstm=feat_lstm,
    )


def forward(model: McmModel, ids, mode: str = "infer",
            rng: Optional[np.random.Generator] = None) -> McmOutput:
    """Single-example forward: ids of length max_len, vector outputs."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("forward takes one token-id row; use forward_batch for batches")
    out = forward_batch(model, ids[None, :], mode, rng)

    def squeeze(t: Tensor) -> Tensor:
        return T.reshape(t, t.data.shape[1:])

    return McmOutput(**{k: squeeze(v) for k, v in vars(out).items()})


def loss(out: McmOutput, target) -> Tensor:
    """Equal-weight sum of the four heads' categorical cross-entropies.

    ``target`` is an int for single outputs, an (n,) array for batched
    ones (each head's term is then the batch mean).
    """
    total = None
    for logits in (out.logits_cnn, out.logits_slstm, out.logits_lstm, out.logits_disc):
        _, term = softmax_ce(logits, target)
        total = term if total is None else T.add(total, term)
    return total


def predict(model: McmModel, ids):
    """Final prediction: argmax of the discriminator's probabilities,
    ties broken toward the lowest class index."""
    out = forward(model, ids, mode="infer")
    p = out.probs_disc.data
    return int(np.argmax(p)), p


def param_count(model) -> int:
    return sum(t.size for _, t in model.named_tensors())


# ---------------------------------------------------------------------------
# single-layer CNN baseline


@dataclass
class BaselineConfig:
    vocab_size: int
    embed_dim: int
    num_classes: int
    max_len: int
    kernel: int = 3
    num_filters: int = 128
    hidden_dim: int = 128


@dataclass
class BaselineModel:
    config: BaselineConfig
    embedding: EmbeddingTable
    conv: Conv1dParams
    hidden: DenseParams
    out: DenseParams

    def named_tensors(self):
        out = []
        for prefix, comp in (("embedding", self.embedding), ("conv", self.conv),
                             ("hidden", self.hidden), ("out", self.out)):
            out.extend((f"{prefix}.{n}", t) for n, t in comp.tensors())
        return out

    def named_buffers(self):
        return []

    def parameters(self):
        return [t for _, t in self.named_tensors() if t.requires_grad]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def build_baseline(config: BaselineConfig, embedding: EmbeddingTable, seed_seq) -> BaselineModel:
    """Embedding -> one valid conv (ReLU) -> global max-pool -> dense -> softmax."""
    if config.max_len < config.kernel:
        raise ValueError("max_len shorter than the baseline kernel")
    if embedding.vocab_size != config.vocab_size or embedding.dim != config.embed_dim:
        raise ValueError("embedding table does not match the configuration")
    if isinstance(seed_seq, (int, np.integer)):
        seed_seq = np.random.SeedSequence(seed_seq)
    rngs = [np.random.default_rng(s) for s in seed_seq.spawn(3)]
    return BaselineModel(
        config=config,
        embedding=embedding,
        conv=Conv1dParams.init(config.kernel, config.embed_dim, config.num_filters, rngs[0]),
        hidden=DenseParams.init(config.num_filters, config.hidden_dim, rngs[1], "relu"),
        out=DenseParams.init(config.hidden_dim, config.num_classes, rngs[2]),
    )


def baseline_forward_batch(model: BaselineModel, ids: np.ndarray) -> Tensor:
    """Logits (n, C) for an (n, max_len) id batch."""
    cfg = model.config
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != cfg.max_len:
        raise ValueError(f"expected (n, {cfg.max_len}) ids, got {ids.shape}")
    n, l = ids.shape
    x = lookup(model.embedding, ids.T.reshape(-1))
    c = conv1d_batch(x, n, l, model.conv)
    cube = T.reshape(c, (l - cfg.kernel + 1, n, cfg.num_filters))
    pooled = T.reduce_max(cube, 0)
    return dense(dense(pooled, model.hidden), model.out)


def baseline_loss(model: BaselineModel, ids, targets) -> Tensor:
    _, ce = softmax_ce(baseline_forward_batch(model, ids), targets)
    return ce


def baseline_predict_batch(model: BaselineModel, ids) -> np.ndarray:
    logits = baseline_forward_batch(model, ids)
    return np.argmax(logits.data, axis=1)
