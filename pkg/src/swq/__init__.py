"""Per-packet latency prediction and L4S dual-queue selection lab."""

__version__ = "0.1.0"
