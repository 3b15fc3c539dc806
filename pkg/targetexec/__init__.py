"""Target-based liquidation strategies and their Monte Carlo evaluation."""

__version__ = "0.1.0"
