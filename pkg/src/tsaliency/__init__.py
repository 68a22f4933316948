"""Temporal saliency maps and mask-augmented training for multivariate time
series forecasting."""

__version__ = "0.1.0"
