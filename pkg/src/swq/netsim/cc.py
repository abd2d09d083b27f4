"""Per-flow congestion control: DCTCP-style ECN response, cubic-flavored AIMD,
and a rate-probing BBR-like controller.

Windows are in MSS units (floats, floored at 1). Growth only happens while
the flow is window-limited so application-limited flows do not inflate their
windows without bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from swq.netsim.config import CcAlgorithm

MIN_CWND = 1.0
CUBIC_C = 0.4
CUBIC_BETA = 0.7
DCTCP_GAIN = 1.0 / 16.0
BBR_GAIN_CYCLE = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass
class AckInfo:
    """What the sender knows when one ACK arrives."""

    time_ms: float
    rtt_ms: float
    ce: bool = False
    cwnd_limited: bool = False


@dataclass
class CcState:
    cwnd_pkts: float = 2.0
    pacing_rate_pps: float | None = None  # None means window/RTT pacing
    ssthresh_pkts: float = math.inf

    @property
    def in_slow_start(self) -> bool:
        return self.cwnd_pkts < self.ssthresh_pkts

    def on_ack(self, ack: AckInfo) -> None:
        raise NotImplementedError

    def on_loss(self, time_ms: float) -> None:
        raise NotImplementedError

    def _slow_start_ack(self, ack: AckInfo) -> bool:
        """Classic +1 MSS per ACK while below ssthresh; True if it applied."""
        if self.in_slow_start and ack.cwnd_limited:
            self.cwnd_pkts = min(self.cwnd_pkts + 1.0, self.ssthresh_pkts)
            return True
        return False


@dataclass
class DctcpState(CcState):
    """EWMA of the CE fraction drives a proportional per-RTT window cut."""

    alpha: float = 1.0
    pkts_seen: int = 0
    pkts_marked: int = 0
    window_end_ms: float = 0.0
    limited_in_window: bool = False

    def on_ack(self, ack: AckInfo) -> None:
        self.pkts_seen += 1
        if ack.ce:
            self.pkts_marked += 1
            if self.in_slow_start:
                self.ssthresh_pkts = self.cwnd_pkts
        if ack.cwnd_limited:
            self.limited_in_window = True
        self._slow_start_ack(ack)
        if ack.time_ms >= self.window_end_ms:
            frac = self.pkts_marked / self.pkts_seen
            self.alpha = (1.0 - DCTCP_GAIN) * self.alpha + DCTCP_GAIN * frac
            if self.pkts_marked > 0:
                self.cwnd_pkts = max(MIN_CWND, self.cwnd_pkts * (1.0 - self.alpha / 2.0))
                self.ssthresh_pkts = self.cwnd_pkts
            elif self.limited_in_window and not self.in_slow_start:
                self.cwnd_pkts += 1.0
            self.pkts_seen = 0
            self.pkts_marked = 0
            self.limited_in_window = False
            self.window_end_ms = ack.time_ms + ack.rtt_ms

    def on_loss(self, time_ms: float) -> None:
        self.cwnd_pkts = max(MIN_CWND, self.cwnd_pkts * 0.5)
        self.ssthresh_pkts = self.cwnd_pkts


@dataclass
class CubicState(CcState):
    """AIMD(1, 0.7) with the cubic window growth curve between loss events."""

    w_max: float = 0.0
    epoch_start_ms: float | None = None
    k_s: float = 0.0

    def on_ack(self, ack: AckInfo) -> None:
        if self._slow_start_ack(ack):
            return
        if not ack.cwnd_limited:
            return
        if self.epoch_start_ms is None:
            self.epoch_start_ms = ack.time_ms
            self.w_max = max(self.w_max, self.cwnd_pkts)
            self.k_s = (self.w_max * (1.0 - CUBIC_BETA) / CUBIC_C) ** (1.0 / 3.0)
        t = (ack.time_ms - self.epoch_start_ms) / 1000.0
        target = CUBIC_C * (t - self.k_s) ** 3 + self.w_max
        if target > self.cwnd_pkts:
            self.cwnd_pkts += (target - self.cwnd_pkts) / self.cwnd_pkts
        else:
            # reno-friendly floor keeps the window creeping up near the plateau
            self.cwnd_pkts += 0.01 / self.cwnd_pkts

    def on_loss(self, time_ms: float) -> None:
        self.w_max = self.cwnd_pkts
        self.cwnd_pkts = max(MIN_CWND, self.cwnd_pkts * CUBIC_BETA)
        self.ssthresh_pkts = self.cwnd_pkts
        self.epoch_start_ms = time_ms
        self.k_s = (self.w_max * (1.0 - CUBIC_BETA) / CUBIC_C) ** (1.0 / 3.0)


@dataclass
class BbrState(CcState):
    """Rate-based: pace at gain x windowed-max delivery rate, cycling gains."""

    max_rate_pps: float = 0.0
    rate_samples: list[tuple[float, float]] = field(default_factory=list)
    min_rtt_ms: float = math.inf
    window_start_ms: float = 0.0
    acked_in_window: int = 0
    cycle_index: int = 0
    limited_in_window: bool = False

    def on_ack(self, ack: AckInfo) -> None:
        self.acked_in_window += 1
        self.min_rtt_ms = min(self.min_rtt_ms, ack.rtt_ms)
        self._slow_start_ack(ack)
        if ack.cwnd_limited:
            self.limited_in_window = True
        elapsed = ack.time_ms - self.window_start_ms
        if elapsed >= ack.rtt_ms and elapsed > 0:
            rate = self.acked_in_window / (elapsed / 1000.0)
            if self.limited_in_window or rate > self.max_rate_pps:
                self.rate_samples.append((ack.time_ms, rate))
            horizon = ack.time_ms - 10.0 * ack.rtt_ms
            self.rate_samples = [s for s in self.rate_samples if s[0] >= horizon]
            if self.rate_samples:
                self.max_rate_pps = max(r for _, r in self.rate_samples)
            self.cycle_index = (self.cycle_index + 1) % len(BBR_GAIN_CYCLE)
            gain = BBR_GAIN_CYCLE[self.cycle_index]
            if self.max_rate_pps > 0:
                self.pacing_rate_pps = gain * self.max_rate_pps
                if self.min_rtt_ms < math.inf:
                    self.cwnd_pkts = max(
                        MIN_CWND, 2.0 * self.max_rate_pps * self.min_rtt_ms / 1000.0
                    )
            self.window_start_ms = ack.time_ms
            self.acked_in_window = 0
            self.limited_in_window = False

    def on_loss(self, time_ms: float) -> None:
        # rate-based probing dominates; individual losses are not a signal here
        pass


def make_cc_state(algorithm: CcAlgorithm, initial_cwnd_pkts: float,
                  initial_rate_pps: float | None = None) -> CcState:
    cwnd = max(MIN_CWND, initial_cwnd_pkts)
    if algorithm is CcAlgorithm.DCTCP_L4S:
        return DctcpState(cwnd_pkts=cwnd)
    if algorithm is CcAlgorithm.CUBIC_LIKE:
        return CubicState(cwnd_pkts=cwnd)
    state = BbrState(cwnd_pkts=cwnd)
    if initial_rate_pps:
        state.pacing_rate_pps = initial_rate_pps
        state.max_rate_pps = initial_rate_pps
    return state


def cc_on_ack(state: CcState, ack: AckInfo) -> CcState:
    """Advance one flow's congestion state by one ACK; returns the state."""
    state.on_ack(ack)
    state.cwnd_pkts = max(MIN_CWND, state.cwnd_pkts)
    return state


def cc_on_loss(state: CcState, time_ms: float) -> CcState:
    state.on_loss(time_ms)
    state.cwnd_pkts = max(MIN_CWND, state.cwnd_pkts)
    return state
