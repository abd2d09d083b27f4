"""Simulation configuration, workload distributions, and BDP sizing."""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any

MSS_BYTES = 1500  # fixed segment size including headers
MAX_MESSAGE_BYTES = 100 * 1024 * 1024


class Topology(enum.Enum):
    SINGLE_BOTTLENECK = "SingleBottleneck"
    L4S_SELECTION = "L4SSelection"


class CcAlgorithm(enum.Enum):
    DCTCP_L4S = "DctcpL4S"
    CUBIC_LIKE = "CubicLike"
    BBR_LIKE = "BbrLike"


@dataclass(frozen=True)
class DistSpec:
    """A sampling distribution: lognormal(mu, sigma), bounded_pareto(alpha, lo, hi), or fixed(value)."""

    kind: str
    mu: float = 0.0
    sigma: float = 1.0
    alpha: float = 1.2
    lo: float = 1.0
    hi: float = 1e6
    value: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("lognormal", "bounded_pareto", "fixed"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "bounded_pareto":
            if not (0 < self.lo < self.hi):
                raise ValueError("bounded_pareto needs 0 < lo < hi")
            if self.alpha <= 0:
                raise ValueError("bounded_pareto needs alpha > 0")
        if self.kind == "fixed" and self.value <= 0:
            raise ValueError("fixed distribution needs a positive value")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "lognormal":
            return math.exp(rng.gauss(self.mu, self.sigma))
        # inverse-CDF sampling of a Pareto truncated to [lo, hi]
        u = rng.random()
        ratio = (self.lo / self.hi) ** self.alpha
        return (self.lo**self.alpha / (1.0 - u * (1.0 - ratio))) ** (1.0 / self.alpha)

    @staticmethod
    def lognormal(mu: float, sigma: float) -> "DistSpec":
        return DistSpec(kind="lognormal", mu=mu, sigma=sigma)

    @staticmethod
    def bounded_pareto(alpha: float, lo: float, hi: float) -> "DistSpec":
        return DistSpec(kind="bounded_pareto", alpha=alpha, lo=lo, hi=hi)

    @staticmethod
    def fixed(value: float) -> "DistSpec":
        return DistSpec(kind="fixed", value=value)


def _default_message_size() -> DistSpec:
    # heavy tail with a meaningful share of multi-megabyte messages so the
    # bottleneck sees frequent burst-driven congestion
    return DistSpec.bounded_pareto(alpha=1.15, lo=30_000.0, hi=20_000_000.0)


def _default_gap() -> DistSpec:
    return DistSpec.lognormal(mu=math.log(300.0), sigma=1.2)


@dataclass(frozen=True)
class WorkloadSpec:
    """Message-level traffic model: sizes in bytes, inter-message gaps in ms."""

    message_size_bytes: DistSpec = field(default_factory=_default_message_size)
    message_gap_ms: DistSpec = field(default_factory=_default_gap)

    def sample_size(self, rng: random.Random) -> int:
        return max(1, min(int(self.message_size_bytes.sample(rng)), MAX_MESSAGE_BYTES))

    def sample_gap_ms(self, rng: random.Random) -> float:
        return max(0.01, self.message_gap_ms.sample(rng))


@dataclass
class SimConfig:
    bandwidth_mbps: float = 100.0
    propagation_delay_ms: float = 20.0
    queue_capacity_bdp_multiple: float = 2.0
    n_l4s_flows: int = 10
    n_classic_flows: int = 4
    l4s_cc: CcAlgorithm = CcAlgorithm.DCTCP_L4S
    classic_cc: CcAlgorithm = CcAlgorithm.CUBIC_LIKE
    flow_start_window_s: float = 10.0
    duration_s: float = 300.0
    base_rate_mbps: float = 5.0
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    seed: int = 0
    topology: Topology = Topology.SINGLE_BOTTLENECK
    # L4SSelection cross traffic (unmonitored senders sharing the L4S queue)
    n_cross_l4s_flows: int = 10
    cross_workload: WorkloadSpec | None = None
    classic_workload: WorkloadSpec | None = None
    # step CE-marking threshold as a fraction of one BDP
    ecn_threshold_bdp_fraction: float = 0.25
    paced: bool = True
    # optional mid-run propagation delay step (regime shift)
    delay_step_time_s: float | None = None
    delay_step_delay_ms: float | None = None

    def validate(self) -> None:
        if self.bandwidth_mbps <= 0:
            raise ValueError("bandwidth_mbps must be > 0")
        if self.propagation_delay_ms <= 0:
            raise ValueError("propagation_delay_ms must be > 0")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if self.queue_capacity_bdp_multiple <= 0:
            raise ValueError("queue_capacity_bdp_multiple must be > 0")
        if self.n_l4s_flows < 0 or self.n_classic_flows < 0 or self.n_cross_l4s_flows < 0:
            raise ValueError("flow counts must be >= 0")
        if self.flow_start_window_s < 0:
            raise ValueError("flow_start_window_s must be >= 0")
        if self.base_rate_mbps <= 0:
            raise ValueError("base_rate_mbps must be > 0")
        if not (0 < self.ecn_threshold_bdp_fraction <= self.queue_capacity_bdp_multiple):
            raise ValueError("ecn_threshold_bdp_fraction outside (0, capacity multiple]")
        if (self.delay_step_time_s is None) != (self.delay_step_delay_ms is None):
            raise ValueError("delay step needs both a time and a delay value")

    def rtt_ms(self) -> float:
        return 2.0 * self.propagation_delay_ms

    def to_json(self) -> str:
        def encode(obj: Any) -> Any:
            if isinstance(obj, enum.Enum):
                return obj.value
            raise TypeError(f"unencodable {type(obj)}")

        return json.dumps(asdict(self), default=encode, sort_keys=True)


def bdp_packets(config: SimConfig) -> int:
    """Bandwidth-delay product of the bottleneck path in MSS-sized packets.

    Uses RTT = 2x one-way propagation delay; result is ceil'd so one packet
    is always in flight on any viable path.
    """
    if config.bandwidth_mbps <= 0 or config.propagation_delay_ms <= 0:
        raise ValueError("bandwidth and propagation delay must be positive")
    bits = config.bandwidth_mbps * 1e6 * (2.0 * config.propagation_delay_ms / 1000.0)
    return math.ceil(bits / (8 * MSS_BYTES))


def default_config(**overrides: Any) -> SimConfig:
    cfg = SimConfig(**overrides)
    cfg.validate()
    return cfg


def l4s_selection_config(**overrides: Any) -> SimConfig:
    """The queue-selection topology: 6 monitored L4S + 4 classic flows from one
    sender plus 10 cross-traffic L4S flows competing for the same L4S queue."""
    base: dict[str, Any] = dict(
        topology=Topology.L4S_SELECTION,
        n_l4s_flows=6,
        n_classic_flows=4,
        n_cross_l4s_flows=10,
    )
    base.update(overrides)
    cfg = SimConfig(**base)
    cfg.validate()
    return cfg


# ------------------------------------------------------------- file loading

_ENUM_FIELDS = {
    "l4s_cc": CcAlgorithm,
    "classic_cc": CcAlgorithm,
    "topology": Topology,
}
_WORKLOAD_FIELDS = ("workload", "cross_workload", "classic_workload")


def _dist_from_dict(d: dict[str, Any]) -> DistSpec:
    return DistSpec(**d)


def _workload_from_dict(d: dict[str, Any]) -> WorkloadSpec:
    kwargs = {}
    if "message_size_bytes" in d:
        kwargs["message_size_bytes"] = _dist_from_dict(d["message_size_bytes"])
    if "message_gap_ms" in d:
        kwargs["message_gap_ms"] = _dist_from_dict(d["message_gap_ms"])
    return WorkloadSpec(**kwargs)


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    kwargs: dict[str, Any] = {}
    valid = set(SimConfig.__dataclass_fields__)
    for key, value in data.items():
        if key not in valid:
            raise ValueError(f"unknown SimConfig field {key!r}")
        if key in _ENUM_FIELDS:
            kwargs[key] = _ENUM_FIELDS[key](value)
        elif key in _WORKLOAD_FIELDS:
            kwargs[key] = None if value is None else _workload_from_dict(value)
        else:
            kwargs[key] = value
    cfg = SimConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> SimConfig:
    """Read a SimConfig from JSON or TOML (suffix decides)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a table/object, got {type(data)}")
    return config_from_dict(data)
