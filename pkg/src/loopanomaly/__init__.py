"""Brownian loop measures, conformal factors and the Polyakov-Alvarez anomaly."""

__version__ = "0.1.0"
