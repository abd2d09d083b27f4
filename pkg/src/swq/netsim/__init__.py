"""Deterministic discrete-event simulator of a dual-queue bottleneck topology."""

from swq.netsim.config import (
    MSS_BYTES,
    CcAlgorithm,
    DistSpec,
    SimConfig,
    Topology,
    WorkloadSpec,
    bdp_packets,
    default_config,
    l4s_selection_config,
)
from swq.netsim.cc import AckInfo, BbrState, CcState, CubicState, DctcpState, cc_on_ack, cc_on_loss, make_cc_state
from swq.netsim.queues import EnqueueResult, QueueState, dual_queue_enqueue
from swq.netsim.simulator import QueueSelector, SimEventKind, SimulationError, run_simulation

__all__ = [
    "AckInfo",
    "BbrState",
    "CcAlgorithm",
    "CcState",
    "CubicState",
    "DctcpState",
    "DistSpec",
    "EnqueueResult",
    "MSS_BYTES",
    "QueueSelector",
    "QueueState",
    "SimConfig",
    "SimEventKind",
    "SimulationError",
    "Topology",
    "WorkloadSpec",
    "bdp_packets",
    "cc_on_ack",
    "cc_on_loss",
    "default_config",
    "dual_queue_enqueue",
    "l4s_selection_config",
    "make_cc_state",
]
