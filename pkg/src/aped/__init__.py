"""Text-conditioned pronunciation error detection, desk scale."""

__version__ = "0.1.0"
