"""Compression-based clustering of event-locked EEG segments."""

__version__ = "0.1.0"
