"""Dynamic mixture-of-experts GNNs for incremental node classification."""

__version__ = "0.1.0"
