"""Dual-queue admission: ECT traffic to the L4S queue with step CE-marking,
everything else to the tail-drop classic queue."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from swq.trace_model import PacketRecord, QueueMark


class EnqueueResult(enum.Enum):
    ENQUEUED_L4S = "EnqueuedL4S"
    ENQUEUED_CLASSIC = "EnqueuedClassic"
    DROPPED_TAIL = "DroppedTail"
    ENQUEUED_L4S_WITH_CE_MARK = "EnqueuedL4SWithCEMark"


@dataclass
class QueueState:
    l4s_occupancy_pkts: int = 0
    classic_occupancy_pkts: int = 0
    l4s_capacity_pkts: int = 1
    classic_capacity_pkts: int = 1
    ecn_mark_threshold_pkts: int = 1

    def validate(self) -> None:
        if not (0 <= self.l4s_occupancy_pkts <= self.l4s_capacity_pkts):
            raise ValueError(
                f"L4S occupancy {self.l4s_occupancy_pkts} outside "
                f"[0, {self.l4s_capacity_pkts}]"
            )
        if not (0 <= self.classic_occupancy_pkts <= self.classic_capacity_pkts):
            raise ValueError(
                f"classic occupancy {self.classic_occupancy_pkts} outside "
                f"[0, {self.classic_capacity_pkts}]"
            )


def dual_queue_enqueue(state: QueueState, pkt: PacketRecord) -> EnqueueResult:
    """Admit one packet, updating occupancy counters.

    ECT (L4S-marked) packets join the L4S queue and receive a CE mark when
    occupancy has already reached the step-marking threshold; non-ECT packets
    join the classic queue. Either queue tail-drops at capacity; a drop is a
    result, not an error.
    """
    if pkt.queue_mark is QueueMark.L4S:
        if state.l4s_occupancy_pkts >= state.l4s_capacity_pkts:
            return EnqueueResult.DROPPED_TAIL
        ce = state.l4s_occupancy_pkts >= state.ecn_mark_threshold_pkts
        state.l4s_occupancy_pkts += 1
        return (
            EnqueueResult.ENQUEUED_L4S_WITH_CE_MARK if ce else EnqueueResult.ENQUEUED_L4S
        )
    if state.classic_occupancy_pkts >= state.classic_capacity_pkts:
        return EnqueueResult.DROPPED_TAIL
    state.classic_occupancy_pkts += 1
    return EnqueueResult.ENQUEUED_CLASSIC
