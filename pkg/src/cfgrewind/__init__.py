"""Record configuration history, cluster co-modified keys, and repair errors by rollback search."""

__version__ = "0.1.0"
