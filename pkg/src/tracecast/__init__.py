"""Forecast-based anomaly prediction for multivariate sensor traces."""
__version__ = "0.1.0"
