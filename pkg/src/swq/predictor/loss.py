"""Change-point-weighted squared error.

Positions whose target step (relative to the previous true latency) is a
sharp change get their squared error scaled by alpha; everything else is
plain squared error. With alpha = 1 this reduces exactly to MSE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from swq import tensor_nn as tn
from swq.tensor_nn import Tensor2D
from swq.trace_model import SharpChangeThresholds, is_sharp_step


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 10.0
    thresholds: SharpChangeThresholds = field(default_factory=SharpChangeThresholds)

    def __post_init__(self) -> None:
        if self.alpha < 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")


def change_point_weights(targets: np.ndarray, prev: np.ndarray,
                         config: LossConfig) -> np.ndarray:
    """Per-position weights for (n, B) targets given each row's previous true
    latency; the step test runs along each row: prev -> t0 -> t1 -> ..."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    prev = np.asarray(prev, dtype=float).reshape(-1)
    n, b = targets.shape
    weights = np.ones((n, b))
    th = config.thresholds
    for i in range(n):
        last = prev[i]
        row = targets[i]
        for j in range(b):
            if is_sharp_step(last, row[j], th):
                weights[i, j] = config.alpha
            last = row[j]
    return weights


def change_point_loss(pred: Sequence[float], target: Sequence[float],
                      config: LossConfig, prev_target: float) -> float:
    """Scalar loss over one aligned prediction/target sequence.

    ``prev_target`` is the true latency immediately before the first target,
    needed for the first step test.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    target = np.asarray(target, dtype=float).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: pred {pred.shape[0]} vs target {target.shape[0]}")
    if pred.size == 0:
        raise ValueError("change_point_loss needs at least one position")
    w = change_point_weights(target.reshape(1, -1), np.array([prev_target]), config)[0]
    return float(np.mean(w * (pred - target) ** 2))


def change_point_loss_tensor(pred: Tensor2D, targets: np.ndarray, prev: np.ndarray,
                             config: LossConfig) -> Tensor2D:
    """Autodiff form: mean weighted squared error over an (n, B) batch."""
    targets = np.atleast_2d(targets)
    if pred.shape != targets.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs targets {targets.shape}")
    weights = change_point_weights(targets, prev, config)
    diff = tn.sub(pred, Tensor2D(targets))
    weighted = tn.mul(tn.mul(diff, diff), Tensor2D(weights))
    return tn.reduce_mean(weighted)
