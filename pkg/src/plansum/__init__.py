"""Plan-guided candidate summary generation, re-ranking, and diagnostics."""

__version__ = "0.1.0"
