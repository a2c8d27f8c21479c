"""Gated linear attention with pluggable state transitions, including input-dependent rotations."""

__version__ = "0.1.0"
