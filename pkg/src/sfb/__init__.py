"""Seasonal forecasting benchmark: SVR, neural networks and ARMA on monthly series."""

__version__ = "0.1.0"
