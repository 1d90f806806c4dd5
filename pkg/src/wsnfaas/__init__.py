"""Serverless function platform over a simulated wireless sensor network."""

__version__ = "0.1.0"
