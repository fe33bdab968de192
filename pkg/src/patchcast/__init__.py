"""Self-supervised patch-transformer forecasting for physical sensor signals."""

__version__ = "0.1.0"
