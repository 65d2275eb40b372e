"""Conformal retrieval certification and lookback-ratio factuality scoring for RAG."""

__version__ = "0.1.0"
