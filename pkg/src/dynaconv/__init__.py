"""Inference-time-dynamic convolution engine and oracle evaluation tooling."""

__version__ = "0.1.0"
