"""Latency-aware co-simulation harness for cloud-controlled vehicles."""
__version__ = "0.1.0"
