"""Co-simulation engine for adaptive split federated learning over wireless links."""

__version__ = "0.1.0"
