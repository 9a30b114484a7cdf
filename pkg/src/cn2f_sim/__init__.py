"""Deterministic simulator of a cloud-native 4G network: orchestrator, VNF
catalog, flow-level transport and RAN slicing."""

__version__ = "0.1.0"
