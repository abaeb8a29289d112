"""Distributed off-policy actor-critic with policy consensus."""

__version__ = "0.1.0"
