"""Memory-bus snooping simulator and offline trace analysis for enclave workloads."""

__version__ = "0.1.0"
