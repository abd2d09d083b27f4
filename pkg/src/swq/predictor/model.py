"""The predictor network: input projection, two post-norm encoder layers with
4-head self-attention, and a two-linear-layer head over the last token.

Positional information comes entirely from the relative-timestamp feature;
there is no added positional encoding. The head output is produced in
normalized latency space and de-normalized inside the graph so callers and
the loss always see milliseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from swq import tensor_nn as tn
from swq.tensor_nn import Tensor2D
from swq.predictor.features import (
    ACKED_COL,
    LATENCY_COL,
    N_FEATURES,
    ContextWindow,
    NormStats,
)
from swq.trace_model import SharpChangeThresholds, is_sharp_step


@dataclass(frozen=True)
class PredictorConfig:
    n_features: int = N_FEATURES
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_width: int = 256
    head_hidden: int = 64
    window_pkts: int = 128
    horizon: int = 8
    dropout: float = 0.2

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must divide evenly into heads")
        if self.horizon < 1 or self.window_pkts < 1:
            raise ValueError("horizon and window_pkts must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class PredictionBatch:
    base_index: int
    horizon: int
    predicted_latency_ms: list[float]

    def __post_init__(self) -> None:
        if self.horizon < 1 or len(self.predicted_latency_ms) != self.horizon:
            raise ValueError("prediction batch length must equal its horizon")
        if not all(math.isfinite(v) for v in self.predicted_latency_ms):
            raise ValueError("predictions must be finite")


ENCODER_PREFIX = "enc"
HEAD_PREFIX = "head."


@dataclass
class ModelParams:
    config: PredictorConfig
    norm: NormStats
    blocks: dict[str, Tensor2D]

    def head_blocks(self) -> dict[str, Tensor2D]:
        return {k: v for k, v in self.blocks.items() if k.startswith(HEAD_PREFIX)}

    def encoder_block_names(self) -> list[str]:
        return [k for k in self.blocks if not k.startswith(HEAD_PREFIX)]

    def param_count(self) -> int:
        return sum(int(t.data.size) for t in self.blocks.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.blocks.values())


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def init_params(config: PredictorConfig = PredictorConfig(),
                norm: NormStats | None = None, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    d, ff, hh = config.d_model, config.ff_width, config.head_hidden
    blocks: dict[str, Tensor2D] = {}

    def param(name: str, arr: np.ndarray) -> None:
        blocks[name] = Tensor2D(arr, requires_grad=True)

    param("input.w", _xavier(rng, config.n_features, d))
    param("input.b", np.zeros((1, d)))
    for i in range(config.n_layers):
        p = f"{ENCODER_PREFIX}{i}."
        for proj in ("wq", "wk", "wv", "wo"):
            param(p + proj, _xavier(rng, d, d))
            param(p + proj.replace("w", "b"), np.zeros((1, d)))
        param(p + "ln1.g", np.ones((1, d)))
        param(p + "ln1.b", np.zeros((1, d)))
        param(p + "ff.w1", _xavier(rng, d, ff))
        param(p + "ff.b1", np.zeros((1, ff)))
        param(p + "ff.w2", _xavier(rng, ff, d))
        param(p + "ff.b2", np.zeros((1, d)))
        param(p + "ln2.g", np.ones((1, d)))
        param(p + "ln2.b", np.zeros((1, d)))
    param("head.w1", _xavier(rng, d, hh))
    param("head.b1", np.zeros((1, hh)))
    param("head.w2", _xavier(rng, hh, config.horizon))
    param("head.b2", np.zeros((1, config.horizon)))
    return ModelParams(config, norm or NormStats.identity(), blocks)


def _encode(params: ModelParams, batch: np.ndarray, training: bool,
            rng: np.random.Generator | None) -> Tensor2D:
    """Run the encoder stack; returns pooled last-token features (n, d)."""
    cfg = params.config
    if batch.ndim != 3 or batch.shape[1] != cfg.window_pkts or batch.shape[2] != cfg.n_features:
        raise ValueError(
            f"batch shape {batch.shape} does not match (n, {cfg.window_pkts}, {cfg.n_features})"
        )
    n, w, f = batch.shape
    p = cfg.dropout
    if training and rng is None:
        raise ValueError("training mode needs an RNG for dropout")

    def drop(x: Tensor2D) -> Tensor2D:
        if not training or p == 0.0:
            return x
        return tn.dropout(x, p, rng, training=True)

    normed = params.norm.apply(batch.reshape(n * w, f))
    x = tn.add_bias(tn.matmul(Tensor2D(normed), params.blocks["input.w"]),
                    params.blocks["input.b"])
    b = params.blocks
    for i in range(cfg.n_layers):
        pre = f"{ENCODER_PREFIX}{i}."
        q = tn.add_bias(tn.matmul(x, b[pre + "wq"]), b[pre + "bq"])
        k = tn.add_bias(tn.matmul(x, b[pre + "wk"]), b[pre + "bk"])
        v = tn.add_bias(tn.matmul(x, b[pre + "wv"]), b[pre + "bv"])
        attn = tn.multi_head_attention(q, k, v, n_windows=n, n_heads=cfg.n_heads)
        attn = tn.add_bias(tn.matmul(attn, b[pre + "wo"]), b[pre + "bo"])
        x = tn.layer_norm(tn.add(x, drop(attn)), b[pre + "ln1.g"], b[pre + "ln1.b"])
        h = tn.relu(tn.add_bias(tn.matmul(x, b[pre + "ff.w1"]), b[pre + "ff.b1"]))
        h = tn.add_bias(tn.matmul(drop(h), b[pre + "ff.w2"]), b[pre + "ff.b2"])
        x = tn.layer_norm(tn.add(x, drop(h)), b[pre + "ln2.g"], b[pre + "ln2.b"])
    last_rows = [i * w + (w - 1) for i in range(n)]
    return tn.gather_rows(x, last_rows)


def forward(params: ModelParams, batch: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor2D:
    """Predicted latencies in milliseconds, shape (n, horizon)."""
    pooled = _encode(params, batch, training, rng)
    b = params.blocks
    h = tn.relu(tn.add_bias(tn.matmul(pooled, b["head.w1"]), b["head.b1"]))
    if training and params.config.dropout > 0.0:
        h = tn.dropout(h, params.config.dropout, rng, training=True)
    y = tn.add_bias(tn.matmul(h, b["head.w2"]), b["head.b2"])
    sigma = float(params.norm.stds[LATENCY_COL])
    mu = float(params.norm.means[LATENCY_COL])
    return tn.add_const(tn.scale(y, sigma), mu)


def predict(params: ModelParams, window: ContextWindow | np.ndarray,
            base_index: int = 0) -> PredictionBatch:
    """Deterministic inference on one window (dropout off)."""
    matrix = window.matrix if isinstance(window, ContextWindow) else np.asarray(window)
    if matrix.shape != (params.config.window_pkts, params.config.n_features):
        raise ValueError(
            f"window shape {matrix.shape} does not match model "
            f"({params.config.window_pkts}, {params.config.n_features})"
        )
    if not params.all_finite():
        raise ValueError("model parameters contain non-finite values")
    out = forward(params, matrix[None, :, :], training=False)
    return PredictionBatch(
        base_index=base_index,
        horizon=params.config.horizon,
        predicted_latency_ms=[float(v) for v in out.data[0]],
    )


def predict_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Inference over stacked windows; returns (n, horizon) in milliseconds."""
    return forward(params, batch, training=False).data


def encode_windows(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Pooled final-encoder-layer features, (n, d_model), inference mode."""
    return _encode(params, batch, training=False, rng=None).data


def export_embeddings(params: ModelParams, windows: np.ndarray, targets: np.ndarray,
                      prev: np.ndarray, path,
                      thresholds: SharpChangeThresholds | None = None) -> int:
    """Write pooled features plus a sharp-change-next label per window.

    One CSV row per window: d_model feature columns then ``label`` holding
    whether the step from the base latency to the first target is sharp.
    Returns the row count.
    """
    th = thresholds or SharpChangeThresholds()
    feats = encode_windows(params, windows)
    labels = [
        1 if is_sharp_step(float(prev[i]), float(targets[i, 0]), th) else 0
        for i in range(len(prev))
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"e{i}" for i in range(feats.shape[1])) + ",label\n")
        for row, label in zip(feats, labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
    return len(labels)


def describe(params: ModelParams) -> dict:
    from swq.predictor.checkpoint import CHECKPOINT_SCHEMA_VERSION

    return {
        "trainable_parameters": params.param_count(),
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "norm_digest": params.norm.digest(),
        "d_model": params.config.d_model,
        "n_heads": params.config.n_heads,
        "n_layers": params.config.n_layers,
        "ff_width": params.config.ff_width,
        "window_pkts": params.config.window_pkts,
        "horizon": params.config.horizon,
    }
