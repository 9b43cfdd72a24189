"""Training-free language-guided anomaly detection engine."""

__version__ = "0.1.0"
