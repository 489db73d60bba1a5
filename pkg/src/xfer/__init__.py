"""H-score feature evaluation, transferability and transfer curricula."""

__version__ = "0.1.0"
