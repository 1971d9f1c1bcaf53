"""Model-based algorithm configuration that can warmstart from earlier configuration runs."""

__version__ = "0.1.0"
