"""Real-time audio-visual speech enhancement engine and evaluation harness."""

__version__ = "0.1.0"
