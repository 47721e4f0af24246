"""Memory-enhanced re-ranking of scalar quality scores."""
__version__ = "0.1.0"
