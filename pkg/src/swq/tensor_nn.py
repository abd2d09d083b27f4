"""Dense 2-D tensors with reverse-mode autodiff, plus Adam and the warmup LR schedule.

Just enough machinery for a small transformer encoder: matmul, bias add,
ReLU, row softmax, layer norm, seeded dropout, scaled dot-product attention
(single-window and fused multi-head batched forms), gather/pool and
reductions. Everything is float64 and deterministic: parallelism is limited
to whatever the underlying BLAS does for a fixed thread count, which is
run-to-run reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor2D:
    """A rows x cols float64 tensor node in the autodiff graph.

    ``grad`` is populated by :func:`backward` for every node with
    ``requires_grad``; leaves keep their gradient until :func:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"Tensor2D needs 2-D data, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor2D, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor2D(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor2D":
        return Tensor2D(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from this (scalar) tensor."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor2D] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor2D, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _make(out_data: np.ndarray, parents: tuple[Tensor2D, ...],
          backward: Callable[[np.ndarray], None]) -> Tensor2D:
    out = Tensor2D(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def zero_grad(params: Iterable[Tensor2D]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- basic ops

def matmul(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out, (a, b), bwd)


def add(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def add_bias(x: Tensor2D, bias: Tensor2D) -> Tensor2D:
    """Row-broadcast add of a (1, cols) bias."""
    if bias.rows != 1 or bias.cols != x.cols:
        raise ShapeError(f"add_bias: x {x.shape}, bias {bias.shape}")

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0, keepdims=True))

    return _make(x.data + bias.data, (x, bias), bwd)


def scale(x: Tensor2D, c: float) -> Tensor2D:
    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * c)

    return _make(x.data * c, (x,), bwd)


def add_const(x: Tensor2D, c: float) -> Tensor2D:
    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g)

    return _make(x.data + c, (x,), bwd)


def relu(x: Tensor2D) -> Tensor2D:
    mask = x.data > 0

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), bwd)


def softmax_rows(x: Tensor2D) -> Tensor2D:
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            x._accumulate((g - dot) * y)

    return _make(y, (x,), bwd)


def layer_norm(x: Tensor2D, gamma: Tensor2D, beta: Tensor2D,
               eps: float = 1e-8) -> Tensor2D:
    """Per-row normalization followed by a learned affine."""
    if gamma.shape != (1, x.cols) or beta.shape != (1, x.cols):
        raise ShapeError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bwd(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=0, keepdims=True))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            gh = g * gamma.data
            m1 = gh.mean(axis=1, keepdims=True)
            m2 = (gh * xhat).mean(axis=1, keepdims=True)
            x._accumulate((gh - m1 - xhat * m2) * inv)

    return _make(y, (x, gamma, beta), bwd)


def dropout(x: Tensor2D, p: float, rng: np.random.Generator,
            training: bool = True) -> Tensor2D:
    """Inverted dropout: scales survivors by 1/(1-p) so inference is a no-op."""
    if not (0.0 <= p < 1.0):
        raise ValueError(f"dropout p={p} outside [0, 1)")
    if not training or p == 0.0:
        def bwd_id(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(g)

        return _make(x.data.copy(), (x,), bwd_id)
    keep = rng.random(x.shape) >= p
    factor = keep / (1.0 - p)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * factor)

    return _make(x.data * factor, (x,), bwd)


def gather_rows(x: Tensor2D, indices: Sequence[int]) -> Tensor2D:
    idx = np.asarray(indices, dtype=np.intp)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            x._accumulate(gx)

    return _make(x.data[idx], (x,), bwd)


def reduce_sum(x: Tensor2D) -> Tensor2D:
    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g.reshape(-1)[0])))

    return _make(np.array([[x.data.sum()]]), (x,), bwd)


def reduce_mean(x: Tensor2D) -> Tensor2D:
    n = x.data.size

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g.reshape(-1)[0]) / n))

    return _make(np.array([[x.data.mean()]]), (x,), bwd)


# ----------------------------------------------------------------- attention

def scaled_dot_product_attention(q: Tensor2D, k: Tensor2D, v: Tensor2D) -> Tensor2D:
    """softmax(Q K^T / sqrt(d_k)) V for a single window (no mask)."""
    if q.cols != k.cols or k.rows != v.rows:
        raise ShapeError(f"attention: Q {q.shape}, K {k.shape}, V {v.shape}")
    inv_sqrt = 1.0 / math.sqrt(q.cols)
    s = (q.data @ k.data.T) * inv_sqrt
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    p = e / e.sum(axis=1, keepdims=True)
    out = p @ v.data

    def bwd(g: np.ndarray) -> None:
        dp = g @ v.data.T
        ds = (dp - (dp * p).sum(axis=1, keepdims=True)) * p * inv_sqrt
        if q.requires_grad:
            q._accumulate(ds @ k.data)
        if k.requires_grad:
            k._accumulate(ds.T @ q.data)
        if v.requires_grad:
            v._accumulate(p.T @ g)

    return _make(out, (q, k, v), bwd)


def multi_head_attention(q: Tensor2D, k: Tensor2D, v: Tensor2D,
                         n_windows: int, n_heads: int) -> Tensor2D:
    """Fused batched attention over stacked windows.

    Inputs are (n_windows * window_len, d_model); heads are split from
    d_model. Attention never crosses window boundaries. Output has the same
    shape as the inputs.
    """
    nw_len, d_model = q.shape
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"mha: Q {q.shape}, K {k.shape}, V {v.shape}")
    if nw_len % n_windows != 0 or d_model % n_heads != 0:
        raise ShapeError(
            f"mha: shape {q.shape} not divisible into {n_windows} windows / {n_heads} heads"
        )
    w = nw_len // n_windows
    hd = d_model // n_heads
    inv_sqrt = 1.0 / math.sqrt(hd)

    def split(a: np.ndarray) -> np.ndarray:
        # (n*w, d) -> (n, heads, w, hd)
        return a.reshape(n_windows, w, n_heads, hd).transpose(0, 2, 1, 3)

    def unsplit(a: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(a.transpose(0, 2, 1, 3)).reshape(nw_len, d_model)

    qs, ks, vs = split(q.data), split(k.data), split(v.data)
    s = (qs @ ks.swapaxes(-1, -2)) * inv_sqrt
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    p = s
    out = unsplit(p @ vs)

    def bwd(g: np.ndarray) -> None:
        gs = split(g)
        dp = gs @ vs.swapaxes(-1, -2)
        ds = (dp - (dp * p).sum(axis=-1, keepdims=True)) * p * inv_sqrt
        if q.requires_grad:
            q._accumulate(unsplit(ds @ ks))
        if k.requires_grad:
            k._accumulate(unsplit(ds.swapaxes(-1, -2) @ qs))
        if v.requires_grad:
            v._accumulate(unsplit(p.swapaxes(-1, -2) @ gs))

    return _make(out, (q, k, v), bwd)


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    """Per-block first/second moment buffers plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    weight_decay: float = 1e-5
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor2D], state: AdamState, lr: float) -> None:
    """One Adam update (bias corrected, decoupled weight decay) over all blocks.

    Blocks whose gradient is None are skipped entirely (their moments do not
    advance). Mutates the parameter tensors in place.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in params:
        p = params[name]
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block '{name}'")
        if state.weight_decay != 0.0:
            p.data -= lr * state.weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Inverse-sqrt schedule with linear warmup."""

    d_model: int = 64
    warmup_steps: int = 2000

    def __post_init__(self) -> None:
        if self.d_model <= 0 or self.warmup_steps <= 0:
            raise ValueError("d_model and warmup_steps must be positive")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 1:
        raise ValueError(f"lr_at undefined for step {step} (needs step >= 1)")
    return schedule.d_model ** -0.5 * min(
        step ** -0.5, step * schedule.warmup_steps ** -1.5
    )
