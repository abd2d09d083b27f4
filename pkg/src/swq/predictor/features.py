"""Featurization: packet traces to sliding context windows with ACK-visibility
semantics.

A window for a decision at packet i contains the last W monitored packets.
A row's latency is visible only if that packet's ACK had already returned by
packet i's send time (reconstructed as send + latency + return propagation);
otherwise the row carries latency 0 and acked 0 exactly as the live sender
would see it. Un-ACKed rows still expose size, timing, and the queue mark
that was assigned, which is what lets the model reason about in-flight load.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from swq.trace_model import QueueMark, Trace

FEATURE_NAMES = (
    "latency_ms",
    "rel_timestamp_ms",
    "packet_size_bytes",
    "flow_id",
    "receiver_id",
    "queue_mark",
    "acked",
)
N_FEATURES = len(FEATURE_NAMES)
LATENCY_COL = 0
ACKED_COL = 6


@dataclass(frozen=True)
class FeatureRow:
    latency_ms: float
    rel_timestamp_ms: float
    packet_size_bytes: float
    flow_id: float
    receiver_id: float
    queue_mark: float  # 0 = Classic, 1 = L4S
    acked: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.latency_ms,
                self.rel_timestamp_ms,
                self.packet_size_bytes,
                self.flow_id,
                self.receiver_id,
                self.queue_mark,
                self.acked,
            ]
        )


@dataclass
class ContextWindow:
    """W ordered feature rows; ``matrix`` is the raw (W, F) float array."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[1] != N_FEATURES:
            raise ValueError(f"window matrix must be (W, {N_FEATURES}), got {self.matrix.shape}")

    @property
    def rows(self) -> list[FeatureRow]:
        return [FeatureRow(*row) for row in self.matrix]

    def __len__(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class WindowConfig:
    window_pkts: int
    horizon: int = 8

    def __post_init__(self) -> None:
        if self.window_pkts < 1 or self.horizon < 1:
            raise ValueError("window_pkts and horizon must be >= 1")


@dataclass
class NormStats:
    """Per-feature standardization constants fit on the training split."""

    means: np.ndarray
    stds: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.means) / self.stds

    def denorm_latency(self, y: np.ndarray | float):
        return y * self.stds[LATENCY_COL] + self.means[LATENCY_COL]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.means).tobytes())
        h.update(np.ascontiguousarray(self.stds).tobytes())
        return h.hexdigest()[:16]

    @staticmethod
    def identity() -> "NormStats":
        return NormStats(np.zeros(N_FEATURES), np.ones(N_FEATURES))


class PacketStream:
    """Columnar view of a trace's monitored packets, in trace order."""

    def __init__(self, trace: Trace, monitored: set[int] | None = None,
                 return_prop_ms: float | None = None):
        if monitored is None:
            meta = trace.meta.get("monitored_flows", "")
            monitored = {int(x) for x in meta.split(";") if x != ""} if meta else None
        if return_prop_ms is None:
            return_prop_ms = float(trace.meta.get("propagation_delay_ms", 0.0))
        recs = [
            r for r in trace.records if monitored is None or r.flow_id in monitored
        ]
        n = len(recs)
        self.n = n
        self.send_ms = np.empty(n)
        self.latency_ms = np.full(n, np.nan)
        self.acked = np.zeros(n, dtype=bool)
        self.ack_visible_ms = np.full(n, np.inf)
        self.size = np.empty(n)
        self.flow = np.empty(n)
        self.receiver = np.empty(n)
        self.mark = np.empty(n)
        self.rel_ts = np.empty(n)
        self.seq = np.empty(n, dtype=np.int64)
        first_send: dict[int, float] = {}
        for i, r in enumerate(recs):
            self.send_ms[i] = r.send_time_ms
            self.size[i] = r.packet_size_bytes
            self.flow[i] = r.flow_id
            self.receiver[i] = r.receiver_id
            self.mark[i] = 1.0 if r.queue_mark is QueueMark.L4S else 0.0
            self.seq[i] = r.seq
            if r.flow_id not in first_send:
                first_send[r.flow_id] = r.send_time_ms
            self.rel_ts[i] = r.send_time_ms - first_send[r.flow_id]
            if r.acked and r.latency_ms is not None:
                self.latency_ms[i] = r.latency_ms
                self.acked[i] = True
                self.ack_visible_ms[i] = r.send_time_ms + r.latency_ms + return_prop_ms
        self.acked_idx = np.nonzero(self.acked)[0]

    def time_to_index(self, t_ms: float) -> int:
        """First stream index with send time >= t_ms."""
        return int(np.searchsorted(self.send_ms, t_ms, side="left"))


def window_matrix(stream: PacketStream, base: int, window_pkts: int) -> np.ndarray:
    """Raw (W, F) feature matrix for a decision made at stream position ``base``.

    Short history at the start of the stream is left-padded with zero rows.
    """
    w = window_pkts
    lo = base - w + 1
    out = np.zeros((w, N_FEATURES))
    src_lo = max(0, lo)
    dst_lo = src_lo - lo
    sl = slice(src_lo, base + 1)
    now = stream.send_ms[base]
    visible = stream.ack_visible_ms[sl] <= now
    lat = np.where(visible, np.nan_to_num(stream.latency_ms[sl], nan=0.0), 0.0)
    out[dst_lo:, LATENCY_COL] = lat
    out[dst_lo:, 1] = stream.rel_ts[sl]
    out[dst_lo:, 2] = stream.size[sl]
    out[dst_lo:, 3] = stream.flow[sl]
    out[dst_lo:, 4] = stream.receiver[sl]
    out[dst_lo:, 5] = stream.mark[sl]
    out[dst_lo:, ACKED_COL] = visible
    return out


def compute_norm_stats(stream: PacketStream, start: int = 0,
                       end: int | None = None) -> NormStats:
    """Standardization constants over the split's final feature rows.

    Un-ACKed packets contribute latency 0, matching how they appear in
    windows. Near-constant columns keep std 1 so they pass through.
    """
    end = stream.n if end is None else end
    sl = slice(start, end)
    cols = np.column_stack(
        [
            np.where(stream.acked[sl], np.nan_to_num(stream.latency_ms[sl], nan=0.0), 0.0),
            stream.rel_ts[sl],
            stream.size[sl],
            stream.flow[sl],
            stream.receiver[sl],
            stream.mark[sl],
            stream.acked[sl].astype(float),
        ]
    )
    if cols.shape[0] == 0:
        raise ValueError("empty split: cannot compute normalization stats")
    means = cols.mean(axis=0)
    stds = cols.std(axis=0)
    stds[stds < 1e-9] = 1.0
    return NormStats(means, stds)


def valid_target_bases(stream: PacketStream, cfg: WindowConfig,
                       start: int = 0, end: int | None = None) -> np.ndarray:
    """Stream positions usable as training/eval bases within [start, end).

    A base needs full W history, its own true latency (for the first loss
    difference), and B fully-acked targets after it.
    """
    end = stream.n if end is None else end
    lo = max(cfg.window_pkts - 1, start)
    hi = min(end, stream.n - cfg.horizon)
    if hi <= lo:
        return np.empty(0, dtype=np.int64)
    base = np.arange(lo, hi, dtype=np.int64)
    ok = stream.acked[base].copy()
    for k in range(1, cfg.horizon + 1):
        ok &= stream.acked[base + k]
    return base[ok]


def featurize(trace: Trace, cfg: WindowConfig,
              monitored: set[int] | None = None) -> Iterator[tuple[ContextWindow, np.ndarray]]:
    """Stream of (window, next-B-true-latencies) pairs sliding one packet at
    a time. Traces shorter than W + B yield nothing."""
    stream = PacketStream(trace, monitored=monitored)
    for base in valid_target_bases(stream, cfg):
        targets = stream.latency_ms[base + 1 : base + 1 + cfg.horizon]
        yield ContextWindow(window_matrix(stream, base, cfg.window_pkts)), targets.copy()


def build_dataset(stream: PacketStream, cfg: WindowConfig, start: int = 0,
                  end: int | None = None, max_windows: int | None = None):
    """Materialize a strided, bounded dataset of windows for training/eval.

    Returns (windows (n, W, F), targets (n, B), prev (n,), bases (n,)).
    Striding is deterministic: evenly spaced over the valid bases.
    """
    bases = valid_target_bases(stream, cfg, start, end)
    if max_windows is not None and len(bases) > max_windows:
        idx = np.linspace(0, len(bases) - 1, max_windows).round().astype(np.int64)
        bases = bases[np.unique(idx)]
    n = len(bases)
    windows = np.zeros((n, cfg.window_pkts, N_FEATURES))
    targets = np.zeros((n, cfg.horizon))
    prev = np.zeros(n)
    for j, b in enumerate(bases):
        windows[j] = window_matrix(stream, int(b), cfg.window_pkts)
        targets[j] = stream.latency_ms[b + 1 : b + 1 + cfg.horizon]
        prev[j] = stream.latency_ms[b]
    return windows, targets, prev, bases
