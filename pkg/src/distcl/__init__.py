"""Distributional constraint learning: train, embed and optimise with mean/std networks."""
__version__ = "0.1.0"
