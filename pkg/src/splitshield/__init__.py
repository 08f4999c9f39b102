"""Two-party split learning: label leakage attacks, gradient noise defenses,
private set union alignment and synthetic-data union training."""

__version__ = "0.1.0"
