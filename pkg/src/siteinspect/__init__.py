"""Multi-modal construction-site inspection reports with late-interaction retrieval."""

__version__ = "0.1.0"
