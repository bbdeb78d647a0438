"""Checkpoint-to-DYNW export bridge."""

__version__ = "0.1.0"
