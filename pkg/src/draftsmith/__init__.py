"""Human-in-the-loop agent pipeline for review and perspective manuscripts."""

__version__ = "0.1.0"
