"""Packet/trace data types, the sharp-change detector, and trace CSV I/O.

Everything downstream (simulator, predictor, controller, evaluation) shares
these types. All values are plain Python / numpy-friendly scalars; times are
milliseconds relative to the first packet of the trace.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class QueueMark(enum.Enum):
    """ECN-derived queue selection carried in the packet header."""

    L4S = "L4S"
    CLASSIC = "CLASSIC"


class ChangeDirection(enum.Enum):
    UP = "Up"
    DOWN = "Down"


@dataclass(slots=True)
class PacketRecord:
    """One packet as seen end to end.

    ``latency_ms`` is present (not None) exactly when ``acked`` is True.
    """

    flow_id: int
    receiver_id: int
    seq: int
    send_time_ms: float
    packet_size_bytes: int
    queue_mark: QueueMark
    acked: bool
    latency_ms: float | None = None

    def validate(self) -> None:
        if not (1 <= self.packet_size_bytes <= 65535):
            raise ValueError(
                f"packet_size_bytes {self.packet_size_bytes} outside [1, 65535]"
            )
        if self.acked != (self.latency_ms is not None):
            raise ValueError(
                f"flow {self.flow_id} seq {self.seq}: latency_ms must be present "
                f"iff acked (acked={self.acked}, latency_ms={self.latency_ms})"
            )
        if self.latency_ms is not None and not (
            math.isfinite(self.latency_ms) and self.latency_ms >= 0
        ):
            raise ValueError(
                f"flow {self.flow_id} seq {self.seq}: bad latency {self.latency_ms}"
            )


@dataclass
class Trace:
    """Ordered packet records plus free-form metadata.

    Records are sorted by ``send_time_ms`` with ties broken by
    ``(flow_id, seq)`` so every downstream computation is reproducible.
    """

    records: list[PacketRecord] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    def sort(self) -> None:
        self.records.sort(key=lambda r: (r.send_time_ms, r.flow_id, r.seq))

    def check_order(self) -> None:
        key = lambda r: (r.send_time_ms, r.flow_id, r.seq)
        for i in range(1, len(self.records)):
            if key(self.records[i - 1]) > key(self.records[i]):
                raise ValueError(
                    f"trace out of order at record {i}: "
                    f"{key(self.records[i - 1])} > {key(self.records[i])}"
                )

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class SharpChangeThresholds:
    """A latency step counts as sharp when it clears BOTH thresholds."""

    delta_abs_ms: float = 20.0
    delta_rel: float = 0.20

    def __post_init__(self) -> None:
        if self.delta_abs_ms <= 0 or self.delta_rel <= 0:
            raise ValueError("thresholds must be strictly positive")


@dataclass(frozen=True)
class SharpChangeEvent:
    index: int
    direction: ChangeDirection
    magnitude_ms: float


def is_sharp_step(prev: float, cur: float, thresholds: SharpChangeThresholds) -> bool:
    """True when the step prev -> cur clears both the absolute and relative bars.

    A previous value of exactly 0 makes the relative test undefined; it is
    treated as satisfied so a genuine jump away from 0 is never masked.
    """
    diff = abs(cur - prev)
    if diff < thresholds.delta_abs_ms:
        return False
    if prev == 0.0:
        return True
    return diff / abs(prev) >= thresholds.delta_rel


def detect_sharp_changes(
    latencies: Sequence[float],
    thresholds: SharpChangeThresholds = SharpChangeThresholds(),
) -> list[SharpChangeEvent]:
    """Scan consecutive pairs of a latency series for sharp steps.

    Returns one event per qualifying index i (i >= 1), comparing value i
    against value i-1. Empty or singleton input yields no events.
    """
    events: list[SharpChangeEvent] = []
    for i in range(1, len(latencies)):
        prev, cur = latencies[i - 1], latencies[i]
        if is_sharp_step(prev, cur, thresholds):
            direction = ChangeDirection.UP if cur > prev else ChangeDirection.DOWN
            events.append(SharpChangeEvent(i, direction, abs(cur - prev)))
    return events


# --------------------------------------------------------------------------
# CSV serialization
#
# Schema (header mandatory, comma separated, UTF-8):
#   flow_id,receiver_id,seq,send_time_ms,packet_size_bytes,queue_mark,acked,latency_ms
# queue_mark in {L4S, CLASSIC}; acked in {0,1}; latency_ms empty when acked=0.
# Floats use repr() so a round trip is bit exact. Metadata rides in leading
# "# key=value" comment lines.
# --------------------------------------------------------------------------

CSV_HEADER = "flow_id,receiver_id,seq,send_time_ms,packet_size_bytes,queue_mark,acked,latency_ms"
_CSV_COLUMNS = CSV_HEADER.split(",")


class TraceFormatError(ValueError):
    """Raised for malformed trace CSV content; message names line and column."""


def save_trace_csv(trace: Trace, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(trace.meta):
            fh.write(f"# {key}={trace.meta[key]}\n")
        fh.write(CSV_HEADER + "\n")
        write = fh.write
        for r in trace.records:
            lat = "" if r.latency_ms is None else repr(r.latency_ms)
            write(
                f"{r.flow_id},{r.receiver_id},{r.seq},{r.send_time_ms!r},"
                f"{r.packet_size_bytes},{r.queue_mark.value},{1 if r.acked else 0},{lat}\n"
            )


def _parse_row(line_no: int, parts: list[str]) -> PacketRecord:
    def bad(column: str, detail: str) -> TraceFormatError:
        return TraceFormatError(f"line {line_no}, column '{column}': {detail}")

    if len(parts) != len(_CSV_COLUMNS):
        raise TraceFormatError(
            f"line {line_no}: expected {len(_CSV_COLUMNS)} fields, got {len(parts)}"
        )
    try:
        flow_id = int(parts[0])
    except ValueError:
        raise bad("flow_id", f"not an integer: {parts[0]!r}") from None
    try:
        receiver_id = int(parts[1])
    except ValueError:
        raise bad("receiver_id", f"not an integer: {parts[1]!r}") from None
    try:
        seq = int(parts[2])
    except ValueError:
        raise bad("seq", f"not an integer: {parts[2]!r}") from None
    try:
        send_time_ms = float(parts[3])
    except ValueError:
        raise bad("send_time_ms", f"not a float: {parts[3]!r}") from None
    try:
        size = int(parts[4])
    except ValueError:
        raise bad("packet_size_bytes", f"not an integer: {parts[4]!r}") from None
    try:
        mark = QueueMark(parts[5])
    except ValueError:
        raise bad("queue_mark", f"expected L4S or CLASSIC, got {parts[5]!r}") from None
    if parts[6] not in ("0", "1"):
        raise bad("acked", f"expected 0 or 1, got {parts[6]!r}")
    acked = parts[6] == "1"
    latency: float | None
    if parts[7] == "":
        latency = None
    else:
        try:
            latency = float(parts[7])
        except ValueError:
            raise bad("latency_ms", f"not a float: {parts[7]!r}") from None
    rec = PacketRecord(flow_id, receiver_id, seq, send_time_ms, size, mark, acked, latency)
    try:
        rec.validate()
    except ValueError as exc:
        raise TraceFormatError(f"line {line_no}: {exc}") from None
    return rec


def load_trace_csv(path: str | Path) -> Trace:
    path = Path(path)
    meta: dict[str, str] = {}
    records: list[PacketRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        line_no = 0
        header_seen = False
        prev_key: tuple[float, int, int] | None = None
        for raw in fh:
            line_no += 1
            line = raw.rstrip("\n")
            if not header_seen:
                if line.startswith("#"):
                    body = line[1:].strip()
                    if "=" in body:
                        k, v = body.split("=", 1)
                        meta[k.strip()] = v
                    continue
                if line != CSV_HEADER:
                    raise TraceFormatError(
                        f"line {line_no}: bad or missing header (expected {CSV_HEADER!r})"
                    )
                header_seen = True
                continue
            if line == "":
                continue
            rec = _parse_row(line_no, line.split(","))
            key = (rec.send_time_ms, rec.flow_id, rec.seq)
            if prev_key is not None and key < prev_key:
                raise TraceFormatError(
                    f"line {line_no}, column 'send_time_ms': out-of-order timestamp "
                    f"{rec.send_time_ms!r}"
                )
            prev_key = key
            records.append(rec)
        if not header_seen:
            raise TraceFormatError("line 0: empty file, header is mandatory")
    return Trace(records=records, meta=meta)


def acked_latencies(records: Iterable[PacketRecord]) -> list[float]:
    """Latency series of acked packets in record order."""
    return [r.latency_ms for r in records if r.acked and r.latency_ms is not None]
