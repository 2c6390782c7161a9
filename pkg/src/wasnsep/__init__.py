"""Cluster-informed source separation for ad-hoc distributed microphone arrays."""

__version__ = "0.1.0"
