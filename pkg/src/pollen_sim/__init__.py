"""Deterministic simulator of resource-aware, push-based client placement
for federated learning simulation."""

__version__ = "0.1.0"
