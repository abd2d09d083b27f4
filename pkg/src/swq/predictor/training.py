"""Training and linear-layer-only fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from swq import tensor_nn as tn
from swq.tensor_nn import AdamState, LrSchedule, Tensor2D, adam_step, lr_at, zero_grad
from swq.predictor.features import PacketStream, WindowConfig, build_dataset
from swq.predictor.loss import LossConfig, change_point_loss_tensor
from swq.predictor.model import ModelParams, forward


@dataclass
class Dataset:
    """Materialized training/eval windows with ms-space targets."""

    windows: np.ndarray  # (n, W, F) raw features
    targets: np.ndarray  # (n, B) true latencies
    prev: np.ndarray     # (n,) true latency of each base packet
    bases: np.ndarray    # (n,) stream positions

    def __len__(self) -> int:
        return self.windows.shape[0]

    @staticmethod
    def from_stream(stream: PacketStream, cfg: WindowConfig, start: int = 0,
                    end: int | None = None, max_windows: int | None = None) -> "Dataset":
        windows, targets, prev, bases = build_dataset(stream, cfg, start, end, max_windows)
        return Dataset(windows, targets, prev, bases)


class TrainingDiverged(RuntimeError):
    pass


def _batch_loss(params: ModelParams, data: Dataset, idx: np.ndarray,
                loss_cfg: LossConfig, training: bool,
                rng: np.random.Generator | None) -> Tensor2D:
    pred = forward(params, data.windows[idx], training=training, rng=rng)
    return change_point_loss_tensor(pred, data.targets[idx], data.prev[idx], loss_cfg)


def evaluate_loss(params: ModelParams, data: Dataset,
                  loss_cfg: LossConfig = LossConfig(), batch_size: int = 64) -> float:
    """Mean loss over a dataset in inference mode (dropout off)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for lo in range(0, len(data), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(data)))
        total += _batch_loss(params, data, idx, loss_cfg, False, None).item() * len(idx)
    return total / len(data)


def train(params: ModelParams, data: Dataset, epochs: int, seed: int,
          loss_cfg: LossConfig = LossConfig(), batch_size: int = 32,
          schedule: LrSchedule | None = None) -> tuple[ModelParams, list[float]]:
    """Optimize all blocks with Adam under the warmup LR schedule.

    Returns the params (mutated in place) and the per-epoch mean training
    loss. Aborts with step/LR/grad-norm diagnostics if the loss goes
    non-finite. epochs = 0 leaves the model untouched.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if epochs > 0 and len(data) == 0:
        raise ValueError("empty dataset")
    schedule = schedule or LrSchedule(d_model=params.config.d_model)
    rng = np.random.default_rng(seed)
    state = AdamState()
    curve: list[float] = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(data))
        epoch_total = 0.0
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size]
            step += 1
            zero_grad(params.blocks.values())
            loss = _batch_loss(params, data, idx, loss_cfg, True, rng)
            value = loss.item()
            if not np.isfinite(value):
                grad_norms = {
                    k: float(np.linalg.norm(v.grad)) if v.grad is not None else 0.0
                    for k, v in params.blocks.items()
                }
                worst = max(grad_norms, key=grad_norms.get)
                raise TrainingDiverged(
                    f"non-finite loss at step {step} (lr {lr_at(schedule, step):.3e}, "
                    f"largest grad block {worst}={grad_norms[worst]:.3e})"
                )
            loss.backward()
            adam_step(params.blocks, state, lr_at(schedule, step))
            epoch_total += value * len(idx)
        curve.append(epoch_total / len(order))
    return params, curve


def fine_tune(params: ModelParams, data: Dataset, steps: int, seed: int,
              loss_cfg: LossConfig = LossConfig(), batch_size: int = 32,
              lr: float = 1e-3) -> ModelParams:
    """Update only the output-head linear layers; encoder blocks stay bitwise
    identical. steps = 0 is the identity."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return params
    if len(data) == 0:
        raise ValueError("fine_tune needs a nonempty dataset")
    rng = np.random.default_rng(seed)
    head = params.head_blocks()
    state = AdamState()
    order = np.empty(0, dtype=np.int64)
    for step in range(steps):
        if len(order) < batch_size:
            order = np.concatenate([order, rng.permutation(len(data))])
        idx, order = order[:batch_size], order[batch_size:]
        zero_grad(params.blocks.values())
        loss = _batch_loss(params, data, idx, loss_cfg, True, rng)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(f"non-finite loss at fine-tune step {step + 1}")
        loss.backward()
        adam_step(head, state, lr)
    return params
