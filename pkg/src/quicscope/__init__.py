"""Toolkit for understanding QUIC deployments from passive backscatter and
controlled active probing, with a deterministic deployment simulator as the
ground-truth oracle."""

__version__ = "0.1.0"
