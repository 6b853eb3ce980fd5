"""Bayesian competing-risks survival analysis with random-measure mixture hazards."""

__version__ = "0.1.0"
