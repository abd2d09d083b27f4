import math

import pytest

from swq.netsim import (
    AckInfo,
    CcAlgorithm,
    CubicState,
    DctcpState,
    EnqueueResult,
    QueueState,
    SimulationError,
    bdp_packets,
    cc_on_ack,
    cc_on_loss,
    default_config,
    dual_queue_enqueue,
    make_cc_state,
    run_simulation,
)
from swq.netsim.config import DistSpec, SimConfig, WorkloadSpec, config_from_dict
from swq.trace_model import QueueMark, PacketRecord, acked_latencies, save_trace_csv


class TestBdpPackets:
    def test_default_link(self):
        # 100 Mbps, 40 ms RTT, 1500 B segments
        assert bdp_packets(default_config()) == 334

    def test_sub_packet_path_rounds_up(self):
        cfg = default_config(bandwidth_mbps=1.0, propagation_delay_ms=3.0)
        assert bdp_packets(cfg) == 1  # 0.5 packets, ceil'd

    def test_doubling_bandwidth_doubles_result(self):
        base = default_config(bandwidth_mbps=50.0)
        doubled = default_config(bandwidth_mbps=100.0)
        assert bdp_packets(doubled) == 2 * bdp_packets(base)


def _l4s_pkt(seq=0, size=1500):
    return PacketRecord(1, 1, seq, 0.0, size, QueueMark.L4S, False, None)


def _classic_pkt(seq=0, size=1500):
    return PacketRecord(2, 1, seq, 0.0, size, QueueMark.CLASSIC, False, None)


class TestDualQueueEnqueue:
    def test_l4s_below_threshold(self):
        state = QueueState(l4s_capacity_pkts=10, classic_capacity_pkts=10,
                           ecn_mark_threshold_pkts=5)
        assert dual_queue_enqueue(state, _l4s_pkt()) is EnqueueResult.ENQUEUED_L4S
        assert state.l4s_occupancy_pkts == 1

    def test_l4s_at_threshold_gets_ce(self):
        state = QueueState(l4s_occupancy_pkts=5, l4s_capacity_pkts=10,
                           classic_capacity_pkts=10, ecn_mark_threshold_pkts=5)
        result = dual_queue_enqueue(state, _l4s_pkt())
        assert result is EnqueueResult.ENQUEUED_L4S_WITH_CE_MARK
        assert state.l4s_occupancy_pkts == 6

    def test_classic_goes_to_classic_queue(self):
        state = QueueState(l4s_capacity_pkts=10, classic_capacity_pkts=10,
                           ecn_mark_threshold_pkts=5)
        assert dual_queue_enqueue(state, _classic_pkt()) is EnqueueResult.ENQUEUED_CLASSIC
        assert state.classic_occupancy_pkts == 1
        assert state.l4s_occupancy_pkts == 0

    def test_classic_full_tail_drops(self):
        state = QueueState(classic_occupancy_pkts=3, classic_capacity_pkts=3,
                           l4s_capacity_pkts=10, ecn_mark_threshold_pkts=5)
        assert dual_queue_enqueue(state, _classic_pkt()) is EnqueueResult.DROPPED_TAIL
        assert state.classic_occupancy_pkts == 3

    def test_l4s_full_tail_drops(self):
        state = QueueState(l4s_occupancy_pkts=4, l4s_capacity_pkts=4,
                           classic_capacity_pkts=10, ecn_mark_threshold_pkts=2)
        assert dual_queue_enqueue(state, _l4s_pkt()) is EnqueueResult.DROPPED_TAIL
        assert state.l4s_occupancy_pkts == 4

    def test_occupancy_invariant_validation(self):
        state = QueueState(l4s_occupancy_pkts=5, l4s_capacity_pkts=4,
                           classic_capacity_pkts=1)
        with pytest.raises(ValueError):
            state.validate()


class TestCongestionControl:
    def test_dctcp_clean_rtt_grows_one_mss(self):
        state = DctcpState(cwnd_pkts=10.0, ssthresh_pkts=10.0)  # out of slow start
        state.window_end_ms = 40.0
        for i in range(9):
            cc_on_ack(state, AckInfo(time_ms=4.0 * i, rtt_ms=40.0, ce=False,
                                     cwnd_limited=True))
        assert state.cwnd_pkts == 10.0
        cc_on_ack(state, AckInfo(time_ms=40.0, rtt_ms=40.0, ce=False, cwnd_limited=True))
        assert state.cwnd_pkts == 11.0

    def test_dctcp_app_limited_rtt_does_not_grow(self):
        state = DctcpState(cwnd_pkts=10.0, ssthresh_pkts=10.0)
        state.window_end_ms = 40.0
        cc_on_ack(state, AckInfo(time_ms=41.0, rtt_ms=40.0, ce=False, cwnd_limited=False))
        assert state.cwnd_pkts == 10.0

    def test_dctcp_marked_rtt_cuts_by_alpha_half(self):
        state = DctcpState(cwnd_pkts=100.0, ssthresh_pkts=100.0, alpha=0.0)
        state.window_end_ms = 0.0
        # every packet marked in this window: F=1, alpha = 1/16, cut = alpha/2
        cc_on_ack(state, AckInfo(time_ms=1.0, rtt_ms=40.0, ce=True, cwnd_limited=True))
        expected_alpha = 1.0 / 16.0
        assert state.alpha == pytest.approx(expected_alpha)
        assert state.cwnd_pkts == pytest.approx(100.0 * (1 - expected_alpha / 2))

    def test_dctcp_slow_start_exits_on_ce(self):
        state = DctcpState(cwnd_pkts=8.0)
        assert state.in_slow_start
        cc_on_ack(state, AckInfo(time_ms=1.0, rtt_ms=40.0, ce=True, cwnd_limited=True))
        assert not state.in_slow_start

    def test_cubic_loss_cuts_to_seventy_percent(self):
        state = CubicState(cwnd_pkts=100.0, ssthresh_pkts=50.0)
        cc_on_loss(state, time_ms=1000.0)
        assert state.cwnd_pkts == pytest.approx(70.0)

    def test_cubic_growth_toward_w_max(self):
        state = CubicState(cwnd_pkts=100.0, ssthresh_pkts=50.0)
        cc_on_loss(state, time_ms=0.0)
        w_after_loss = state.cwnd_pkts
        for i in range(200):
            cc_on_ack(state, AckInfo(time_ms=40.0 * (i + 1), rtt_ms=40.0,
                                     cwnd_limited=True))
        assert state.cwnd_pkts > w_after_loss

    def test_window_never_below_one_mss(self):
        for alg in CcAlgorithm:
            state = make_cc_state(alg, 1.0)
            for t in range(1, 50):
                cc_on_loss(state, float(t))
            assert state.cwnd_pkts >= 1.0

    def test_slow_start_doubles_per_rtt(self):
        state = make_cc_state(CcAlgorithm.CUBIC_LIKE, 2.0)
        for i in range(2):
            cc_on_ack(state, AckInfo(time_ms=float(i), rtt_ms=40.0, cwnd_limited=True))
        assert state.cwnd_pkts == pytest.approx(4.0)


def _tiny_config(**kw):
    defaults = dict(
        duration_s=10.0,
        n_l4s_flows=2,
        n_classic_flows=1,
        flow_start_window_s=1.0,
        seed=5,
    )
    defaults.update(kw)
    return default_config(**defaults)


class TestRunSimulation:
    def test_single_flow_at_five_percent_load(self):
        # 5 Mbps of 1500 B packets on a 100 Mbps / 20 ms link: latency is
        # propagation (20) + transmission (0.12) + near-zero queuing
        cfg = default_config(
            duration_s=10.0,
            n_l4s_flows=1,
            n_classic_flows=0,
            flow_start_window_s=0.0,
            workload=WorkloadSpec(
                message_size_bytes=DistSpec.fixed(1500),
                message_gap_ms=DistSpec.fixed(2.4),
            ),
            seed=1,
        )
        trace = run_simulation(cfg)
        lats = acked_latencies(trace.records)
        assert len(lats) > 1000
        assert min(lats) >= 20.12 - 1e-9
        assert max(lats) <= 20.5

    def test_determinism_byte_identical_csv(self, tmp_path):
        cfg = _tiny_config()
        t1 = run_simulation(cfg)
        t2 = run_simulation(_tiny_config())
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_trace_csv(t1, p1)
        save_trace_csv(t2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seed_differs(self):
        t1 = run_simulation(_tiny_config(seed=5))
        t2 = run_simulation(_tiny_config(seed=6))
        assert [r.send_time_ms for r in t1.records[:200]] != [
            r.send_time_ms for r in t2.records[:200]
        ]

    def test_default_marking_is_all_l4s_for_l4s_flows(self):
        trace = run_simulation(_tiny_config())
        l4s_flows = {0, 1}
        for rec in trace.records:
            expected = QueueMark.L4S if rec.flow_id in l4s_flows else QueueMark.CLASSIC
            assert rec.queue_mark is expected

    def test_conservation_counters_in_meta(self):
        trace = run_simulation(_tiny_config())
        gen = int(trace.meta["packets_generated"])
        delivered = int(trace.meta["packets_delivered"])
        dropped = int(trace.meta["packets_dropped"])
        assert gen >= delivered + dropped
        assert gen == len(trace.records)

    def test_decomposition_residual_tiny(self):
        trace = run_simulation(_tiny_config())
        assert float(trace.meta["audit_decomposition_max_residual_ms"]) <= 1e-9

    def test_trace_sorted_and_latency_iff_acked(self):
        trace = run_simulation(_tiny_config())
        trace.check_order()
        for rec in trace.records:
            assert rec.acked == (rec.latency_ms is not None)
            if rec.latency_ms is not None:
                assert rec.latency_ms > 0

    def test_default_config_produces_sharp_changes(self):
        from swq.trace_model import SharpChangeThresholds, detect_sharp_changes

        cfg = default_config(duration_s=30.0, seed=7)
        trace = run_simulation(cfg)
        events = detect_sharp_changes(
            acked_latencies(trace.records), SharpChangeThresholds()
        )
        assert len(events) > 0
        # regression pin for the default environment at this seed
        assert len(events) == EXPECTED_SHARP_CHANGES_30S_SEED7

    def test_invalid_config_fails_before_running(self):
        cfg = SimConfig(bandwidth_mbps=-1.0)
        with pytest.raises(SimulationError, match="invalid configuration"):
            run_simulation(cfg)

    def test_l4s_selection_topology_roles(self):
        from swq.netsim import l4s_selection_config

        cfg = l4s_selection_config(duration_s=5.0, seed=3)
        trace = run_simulation(cfg)
        monitored = {int(x) for x in trace.meta["monitored_flows"].split(";")}
        assert monitored == set(range(10))  # 6 L4S + 4 classic from S1
        flows_seen = {r.flow_id for r in trace.records}
        assert flows_seen - monitored  # cross traffic flows present
        for rec in trace.records:
            if rec.flow_id not in monitored:
                assert rec.receiver_id == 2 and rec.queue_mark is QueueMark.L4S

    def test_delay_step_shifts_latency_floor(self):
        cfg = _tiny_config(
            duration_s=20.0,
            delay_step_time_s=10.0,
            delay_step_delay_ms=60.0,
        )
        trace = run_simulation(cfg)
        before = [r.latency_ms for r in trace.records
                  if r.acked and r.send_time_ms < 9_000]
        after = [r.latency_ms for r in trace.records
                 if r.acked and r.send_time_ms > 11_000]
        assert before and after
        assert min(after) >= 60.0
        assert min(before) < 25.0


class TestConfigLoading:
    def test_from_dict_round_trip(self):
        cfg = config_from_dict(
            {
                "bandwidth_mbps": 50.0,
                "topology": "L4SSelection",
                "l4s_cc": "DctcpL4S",
                "workload": {
                    "message_size_bytes": {"kind": "fixed", "value": 1000.0},
                    "message_gap_ms": {"kind": "lognormal", "mu": 3.0, "sigma": 0.5},
                },
            }
        )
        assert cfg.bandwidth_mbps == 50.0
        assert cfg.topology.value == "L4SSelection"
        assert cfg.workload.message_size_bytes.kind == "fixed"

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown SimConfig field"):
            config_from_dict({"bandwidht": 1.0})

    def test_json_and_toml_files(self, tmp_path):
        from swq.netsim.config import load_config

        jp = tmp_path / "c.json"
        jp.write_text('{"bandwidth_mbps": 25.0, "duration_s": 5.0}')
        assert load_config(jp).bandwidth_mbps == 25.0
        tp = tmp_path / "c.toml"
        tp.write_text('bandwidth_mbps = 30.0\nduration_s = 5.0\n')
        assert load_config(tp).bandwidth_mbps == 30.0

    def test_workload_distributions_positive(self):
        import random

        rng = random.Random(1)
        wl = WorkloadSpec()
        for _ in range(2000):
            assert 1 <= wl.sample_size(rng) <= 100 * 1024 * 1024
            assert wl.sample_gap_ms(rng) > 0

    def test_bounded_pareto_respects_bounds(self):
        import random

        rng = random.Random(2)
        dist = DistSpec.bounded_pareto(1.2, 100.0, 1000.0)
        samples = [dist.sample(rng) for _ in range(5000)]
        assert all(100.0 <= s <= 1000.0 for s in samples)
        assert min(samples) < 150.0 and max(samples) > 500.0


# pinned after first calibration run of the default environment
EXPECTED_SHARP_CHANGES_30S_SEED7 = 829
