"""Parameterized neural networks: one shared MLP, one trainable vector per task."""

__version__ = "0.1.0"
