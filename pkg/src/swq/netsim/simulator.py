"""Single-bottleneck discrete-event loop producing Trace objects.

Topology: senders feed a dual-queue router over an instantaneous access hop;
the router serves one bottleneck link (round-robin between the two queues
when both are backlogged) and the receiver path adds one-way propagation.
ACKs return after the same propagation delay with no reverse congestion.

Every handler is deterministic; per-flow RNG streams are derived from the
run seed so a (config, seed, controller) triple replays byte-identically.
"""

from __future__ import annotations

import enum
import math
import random
from array import array
from collections import deque
from dataclasses import dataclass
from heapq import heappop, heappush
from typing import Protocol

from swq.netsim.cc import AckInfo, CcState, cc_on_ack, cc_on_loss, make_cc_state
from swq.netsim.config import MSS_BYTES, SimConfig, Topology, WorkloadSpec, bdp_packets
from swq.netsim.queues import EnqueueResult, QueueState, dual_queue_enqueue
from swq.trace_model import PacketRecord, QueueMark, Trace

RTO_FLOOR_MS = 200.0
DUPACK_REORDER_GAP = 3


class SimulationError(ValueError):
    pass


class SimEventKind(enum.IntEnum):
    """Event kinds; the integer value is the tie-break rank at equal times."""

    PACKET_ARRIVE_ROUTER = 0
    PACKET_DEPART_ROUTER = 1
    PACKET_ARRIVE_RECEIVER = 2
    ACK_ARRIVE_SENDER = 3
    FLOW_START = 4
    MESSAGE_GEN = 5
    RTO_CHECK = 6  # internal bookkeeping, not part of the packet lifecycle


@dataclass(frozen=True)
class SimEvent:
    time_ms: float
    kind: SimEventKind
    flow_id: int
    seq: int


class QueueSelector(Protocol):
    """Sender-side per-packet queue chooser driven by the simulation loop.

    Only monitored L4S-class flows consult ``choose_mark``; all monitored
    flows report sends and ACKs so the selector sees the sender's full view.
    """

    def choose_mark(self, flow_id: int, receiver_id: int, seq: int,
                    send_time_ms: float, size_bytes: int) -> QueueMark: ...

    def notify_sent(self, record: PacketRecord) -> None: ...

    def notify_ack(self, record: PacketRecord) -> None: ...


class _Flow:
    __slots__ = (
        "fid", "receiver_id", "klass", "monitored", "cc", "workload", "rng",
        "pending", "next_seq", "in_flight", "outstanding", "sent_order",
        "srtt", "rttvar", "next_send_time", "send_scheduled", "rto_pending",
        "recovery_seq", "cwnd_limited", "start_ms", "msg_count",
        "last_send_ms", "init_cwnd",
    )

    def __init__(self, fid: int, receiver_id: int, klass: QueueMark,
                 monitored: bool, cc: CcState, workload: WorkloadSpec,
                 rng: random.Random, start_ms: float):
        self.fid = fid
        self.receiver_id = receiver_id
        self.klass = klass
        self.monitored = monitored
        self.cc = cc
        self.workload = workload
        self.rng = rng
        self.pending: deque[int] = deque()
        self.next_seq = 0
        self.in_flight = 0
        self.outstanding: dict[int, int] = {}
        self.sent_order: deque[int] = deque()
        self.srtt = 0.0
        self.rttvar = 0.0
        self.next_send_time = 0.0
        self.send_scheduled = False
        self.rto_pending = False
        self.recovery_seq = 0
        self.cwnd_limited = False
        self.start_ms = start_ms
        self.msg_count = 0
        self.last_send_ms = start_ms
        self.init_cwnd = cc.cwnd_pkts

    def rto_ms(self) -> float:
        if self.srtt <= 0.0:
            return RTO_FLOOR_MS
        return max(RTO_FLOOR_MS, self.srtt + 4.0 * self.rttvar)


def _build_flows(config: SimConfig) -> list[_Flow]:
    flows: list[_Flow] = []
    rtt_s = config.rtt_ms() / 1000.0
    init_cwnd = max(2.0, config.base_rate_mbps * 1e6 * rtt_s / (8 * MSS_BYTES))
    init_rate_pps = config.base_rate_mbps * 1e6 / (8 * MSS_BYTES)
    classic_wl = config.classic_workload or config.workload
    cross_wl = config.cross_workload or config.workload

    roles: list[tuple[QueueMark, bool, WorkloadSpec]] = []
    for _ in range(config.n_l4s_flows):
        roles.append((QueueMark.L4S, True, config.workload))
    for _ in range(config.n_classic_flows):
        roles.append((QueueMark.CLASSIC, True, classic_wl))
    if config.topology is Topology.L4S_SELECTION:
        for _ in range(config.n_cross_l4s_flows):
            roles.append((QueueMark.L4S, False, cross_wl))

    for fid, (klass, monitored, wl) in enumerate(roles):
        rng = random.Random(f"{config.seed}|{fid}|flow")
        start_ms = rng.random() * config.flow_start_window_s * 1000.0
        cc_alg = config.classic_cc if klass is QueueMark.CLASSIC else config.l4s_cc
        cc = make_cc_state(cc_alg, init_cwnd, init_rate_pps)
        receiver = 1 if monitored else 2
        flows.append(_Flow(fid, receiver, klass, monitored, cc, wl, rng, start_ms))
    return flows


class _Sim:
    def __init__(self, config: SimConfig, selector: QueueSelector | None,
                 controller_start_s: float):
        config.validate()
        self.config = config
        self.selector = selector
        self.controller_start_ms = controller_start_s * 1000.0
        self.end_ms = config.duration_s * 1000.0
        self.bw_bits_per_ms = config.bandwidth_mbps * 1000.0
        bdp = bdp_packets(config)
        cap = max(1, int(round(config.queue_capacity_bdp_multiple * bdp)))
        thresh = max(1, int(round(config.ecn_threshold_bdp_fraction * bdp)))
        self.qstate = QueueState(
            l4s_capacity_pkts=cap, classic_capacity_pkts=cap,
            ecn_mark_threshold_pkts=thresh,
        )
        self.l4s_q: deque[int] = deque()
        self.classic_q: deque[int] = deque()
        self.busy = False
        self.last_served = 1  # so the first contended pick is the L4S queue
        self.flows = _build_flows(config)
        self.events: list[tuple[float, int, int, int, int]] = []
        # per-packet bookkeeping, indexed by append order
        self.records: list[PacketRecord] = []
        self.p_svc_start = array("d")
        self.p_tx = array("d")
        self.p_prop = array("d")
        self.p_recv = array("d")
        self.p_ce: list[bool] = []
        self.generated = 0
        self.delivered = 0
        self.dropped = 0
        self.enq = [0, 0]
        self.deq = [0, 0]
        self.fifo_next = [0, 0]
        self.p_fifo_stamp = array("q")
        self.max_decomp_residual = 0.0
        self.event_count = 0

    # ------------------------------------------------------------ helpers

    def prop_now(self, t: float) -> float:
        c = self.config
        if c.delay_step_time_s is not None and t >= c.delay_step_time_s * 1000.0:
            return c.delay_step_delay_ms  # type: ignore[return-value]
        return c.propagation_delay_ms

    def pacing_interval_ms(self, flow: _Flow) -> float:
        if not self.config.paced:
            return 0.0
        rate_pps = flow.cc.pacing_rate_pps
        if rate_pps is None or rate_pps <= 0:
            srtt = flow.srtt if flow.srtt > 0 else self.config.rtt_ms()
            gain = 2.0 if flow.cc.in_slow_start else 1.2
            rate_pps = gain * flow.cc.cwnd_pkts / (srtt / 1000.0)
        return 1000.0 / rate_pps if rate_pps > 0 else 0.0

    def trigger_send(self, flow: _Flow, now: float) -> None:
        if flow.send_scheduled or not flow.pending:
            return
        if flow.in_flight == 0 and now - flow.last_send_ms > flow.rto_ms():
            # idle restart: messages after a dead period behave like fresh
            # connections, restarting the full slow-start ramp
            flow.cc.cwnd_pkts = min(flow.cc.cwnd_pkts, flow.init_cwnd)
            flow.cc.ssthresh_pkts = math.inf
        if flow.in_flight >= int(flow.cc.cwnd_pkts):
            flow.cwnd_limited = True
            return
        t = max(now, flow.next_send_time)
        heappush(self.events, (t, 0, flow.fid, flow.next_seq, -1))
        flow.send_scheduled = True

    def start_service(self, now: float) -> None:
        if self.busy:
            return
        pick = 1 - self.last_served
        queues = (self.l4s_q, self.classic_q)
        if not queues[pick]:
            pick = 1 - pick
            if not queues[pick]:
                return
        pkt = queues[pick].popleft()
        if self.p_fifo_stamp[pkt] != self.fifo_next[pick]:
            raise SimulationError(
                f"FIFO violation on queue {pick}: stamp {self.p_fifo_stamp[pkt]} "
                f"!= expected {self.fifo_next[pick]}"
            )
        self.fifo_next[pick] += 1
        self.deq[pick] += 1
        if pick == 0:
            self.qstate.l4s_occupancy_pkts -= 1
        else:
            self.qstate.classic_occupancy_pkts -= 1
        self.last_served = pick
        self.busy = True
        rec = self.records[pkt]
        self.p_svc_start[pkt] = now
        tx = rec.packet_size_bytes * 8.0 / self.bw_bits_per_ms
        self.p_tx[pkt] = tx
        heappush(self.events, (now + tx, 1, rec.flow_id, rec.seq, pkt))

    def arm_rto(self, flow: _Flow, now: float) -> None:
        if flow.rto_pending or not flow.outstanding:
            return
        heappush(self.events, (now + flow.rto_ms(), 6, flow.fid, flow.msg_count + flow.next_seq, -1))
        flow.rto_pending = True

    def handle_loss(self, flow: _Flow, seq: int, now: float) -> None:
        flow.outstanding.pop(seq, None)
        flow.in_flight -= 1
        if seq >= flow.recovery_seq:
            cc_on_loss(flow.cc, now)
            flow.recovery_seq = flow.next_seq

    # ------------------------------------------------------------ handlers

    def on_arrive_router(self, t: float, fid: int) -> None:
        flow = self.flows[fid]
        flow.send_scheduled = False
        if not flow.pending:
            return
        head = flow.pending[0]
        size = head if head < MSS_BYTES else MSS_BYTES
        if head <= MSS_BYTES:
            flow.pending.popleft()
        else:
            flow.pending[0] = head - MSS_BYTES
        seq = flow.next_seq
        flow.next_seq += 1

        if flow.klass is QueueMark.CLASSIC:
            mark = QueueMark.CLASSIC
        elif (
            self.selector is not None
            and flow.monitored
            and t >= self.controller_start_ms
        ):
            mark = self.selector.choose_mark(fid, flow.receiver_id, seq, t, size)
        else:
            mark = QueueMark.L4S

        rec = PacketRecord(fid, flow.receiver_id, seq, t, size, mark, False, None)
        pkt = len(self.records)
        self.records.append(rec)
        self.p_svc_start.append(math.nan)
        self.p_tx.append(math.nan)
        self.p_prop.append(math.nan)
        self.p_recv.append(math.nan)
        self.generated += 1

        result = dual_queue_enqueue(self.qstate, rec)
        if result is EnqueueResult.DROPPED_TAIL:
            self.dropped += 1
            self.p_ce.append(False)
            self.p_fifo_stamp.append(-1)
        else:
            qi = 0 if mark is QueueMark.L4S else 1
            self.p_ce.append(result is EnqueueResult.ENQUEUED_L4S_WITH_CE_MARK)
            self.p_fifo_stamp.append(self.enq[qi])
            self.enq[qi] += 1
            (self.l4s_q if qi == 0 else self.classic_q).append(pkt)
            self.start_service(t)

        flow.outstanding[seq] = pkt
        flow.sent_order.append(seq)
        flow.in_flight += 1
        flow.last_send_ms = t
        flow.next_send_time = t + self.pacing_interval_ms(flow)
        if self.selector is not None and flow.monitored:
            self.selector.notify_sent(rec)
        self.arm_rto(flow, t)
        self.trigger_send(flow, t)

    def on_depart_router(self, t: float, pkt: int) -> None:
        rec = self.records[pkt]
        prop = self.prop_now(t)
        self.p_prop[pkt] = prop
        self.busy = False
        heappush(self.events, (t + prop, 2, rec.flow_id, rec.seq, pkt))
        self.start_service(t)

    def on_arrive_receiver(self, t: float, pkt: int) -> None:
        rec = self.records[pkt]
        self.p_recv[pkt] = t
        self.delivered += 1
        heappush(self.events, (t + self.prop_now(t), 3, rec.flow_id, rec.seq, pkt))

    def on_ack(self, t: float, fid: int, seq: int, pkt: int) -> None:
        flow = self.flows[fid]
        rec = self.records[pkt]
        rec.acked = True
        rec.latency_ms = self.p_recv[pkt] - rec.send_time_ms
        sample = t - rec.send_time_ms
        if flow.srtt <= 0.0:
            flow.srtt = sample
            flow.rttvar = sample / 2.0
        else:
            flow.rttvar = 0.75 * flow.rttvar + 0.25 * abs(flow.srtt - sample)
            flow.srtt = 0.875 * flow.srtt + 0.125 * sample
        if seq in flow.outstanding:
            del flow.outstanding[seq]
            flow.in_flight -= 1
        cc_on_ack(flow.cc, AckInfo(t, flow.srtt, self.p_ce[pkt], flow.cwnd_limited))
        flow.cwnd_limited = False
        order = flow.sent_order
        outstanding = flow.outstanding
        while order and order[0] not in outstanding:
            order.popleft()
        while order and order[0] < seq - DUPACK_REORDER_GAP:
            lost = order.popleft()
            if lost in outstanding:
                self.handle_loss(flow, lost, t)
        if self.selector is not None and flow.monitored:
            self.selector.notify_ack(rec)
        self.trigger_send(flow, t)

    def on_message_gen(self, t: float, fid: int) -> None:
        flow = self.flows[fid]
        flow.pending.append(flow.workload.sample_size(flow.rng))
        flow.msg_count += 1
        gap = flow.workload.sample_gap_ms(flow.rng)
        heappush(self.events, (t + gap, 5, fid, flow.msg_count, -1))
        self.trigger_send(flow, t)

    def on_rto_check(self, t: float, fid: int) -> None:
        flow = self.flows[fid]
        flow.rto_pending = False
        if not flow.outstanding:
            return
        threshold = t - flow.rto_ms()
        order = flow.sent_order
        outstanding = flow.outstanding
        while order:
            head = order[0]
            if head not in outstanding:
                order.popleft()
                continue
            if self.records[outstanding[head]].send_time_ms <= threshold:
                order.popleft()
                self.handle_loss(flow, head, t)
                continue
            break
        self.arm_rto(flow, t)
        self.trigger_send(flow, t)

    # ------------------------------------------------------------ main loop

    def run(self) -> Trace:
        for flow in self.flows:
            heappush(self.events, (flow.start_ms, 4, flow.fid, 0, -1))
        events = self.events
        end_ms = self.end_ms
        last_t = 0.0
        while events and events[0][0] <= end_ms:
            t, kind, fid, seq, pkt = heappop(events)
            if t < last_t:
                raise SimulationError(f"event time went backwards: {t} < {last_t}")
            last_t = t
            self.event_count += 1
            if kind == 0:
                self.on_arrive_router(t, fid)
            elif kind == 1:
                self.on_depart_router(t, pkt)
            elif kind == 2:
                self.on_arrive_receiver(t, pkt)
            elif kind == 3:
                self.on_ack(t, fid, seq, pkt)
            elif kind == 4:
                heappush(events, (t, 5, fid, 0, -1))
            elif kind == 5:
                self.on_message_gen(t, fid)
            else:
                self.on_rto_check(t, fid)
            if self.event_count % 200_000 == 0:
                self._check_conservation(final=False)
        return self._finalize()

    def _check_conservation(self, final: bool) -> None:
        if self.enq[0] != self.deq[0] + len(self.l4s_q):
            raise SimulationError(
                f"L4S queue conservation broken: enq {self.enq[0]} != "
                f"deq {self.deq[0]} + resident {len(self.l4s_q)}"
            )
        if self.enq[1] != self.deq[1] + len(self.classic_q):
            raise SimulationError(
                f"classic queue conservation broken: enq {self.enq[1]} != "
                f"deq {self.deq[1]} + resident {len(self.classic_q)}"
            )
        if final:
            pending_downstream = sum(1 for e in self.events if e[1] in (1, 2))
            in_flight = len(self.l4s_q) + len(self.classic_q) + pending_downstream
            if self.generated != self.delivered + self.dropped + in_flight:
                raise SimulationError(
                    f"packet conservation broken: generated {self.generated} != "
                    f"delivered {self.delivered} + dropped {self.dropped} + "
                    f"in-flight {in_flight}"
                )

    def _audit_decomposition(self) -> None:
        for pkt, rec in enumerate(self.records):
            recv = self.p_recv[pkt]
            if math.isnan(recv):
                continue
            latency = recv - rec.send_time_ms
            wait = self.p_svc_start[pkt] - rec.send_time_ms
            residual = abs(latency - (wait + self.p_tx[pkt] + self.p_prop[pkt]))
            if residual > self.max_decomp_residual:
                self.max_decomp_residual = residual
        if self.max_decomp_residual > 1e-9:
            raise SimulationError(
                f"latency decomposition residual {self.max_decomp_residual} ms > 1e-9"
            )

    def _finalize(self) -> Trace:
        self._check_conservation(final=True)
        self._audit_decomposition()
        c = self.config
        monitored = ";".join(str(f.fid) for f in self.flows if f.monitored)
        meta = {
            "bandwidth_mbps": repr(c.bandwidth_mbps),
            "propagation_delay_ms": repr(c.propagation_delay_ms),
            "duration_s": repr(c.duration_s),
            "seed": str(c.seed),
            "topology": c.topology.value,
            "bdp_packets": str(bdp_packets(c)),
            "monitored_flows": monitored,
            "packets_generated": str(self.generated),
            "packets_delivered": str(self.delivered),
            "packets_dropped": str(self.dropped),
            "audit_decomposition_max_residual_ms": repr(self.max_decomp_residual),
            "config_json": c.to_json(),
        }
        if c.delay_step_time_s is not None:
            meta["delay_step_time_s"] = repr(c.delay_step_time_s)
            meta["delay_step_delay_ms"] = repr(c.delay_step_delay_ms)
        trace = Trace(records=self.records, meta=meta)
        trace.check_order()
        return trace


def run_simulation(config: SimConfig, controller: QueueSelector | None = None,
                   controller_start_s: float = 0.0) -> Trace:
    """Run one simulation to completion and return its packet trace.

    With no controller every L4S-class packet keeps the default L4S mark.
    Conservation and latency-decomposition audits run on every call and
    raise SimulationError on violation.
    """
    try:
        config.validate()
    except ValueError as exc:
        raise SimulationError(f"invalid configuration: {exc}") from exc
    return _Sim(config, controller, controller_start_s).run()
