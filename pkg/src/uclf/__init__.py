"""Bayesian cumulative-probit forecasting of three-outcome football matches."""

__version__ = "0.1.0"
