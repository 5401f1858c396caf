"""Fine-grained resource management for SLO-oriented microservices, on a simulated cluster."""

__version__ = "0.1.0"
