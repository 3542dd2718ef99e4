"""Physics-informed networks with Bayesian last layers and uncertainty propagation."""

__version__ = "0.1.0"
