"""Offline embedding exporter for the molfuse pipeline."""

__version__ = "0.1.0"
