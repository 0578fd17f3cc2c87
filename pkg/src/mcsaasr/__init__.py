"""Multichannel speaker-attributed ASR building blocks."""

__version__ = "0.1.0"
