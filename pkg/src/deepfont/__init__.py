"""Font recognition with domain-adapted CNNs and rank-constrained compression."""

__version__ = "0.1.0"
