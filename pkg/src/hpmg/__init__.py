"""High-order finite elements with h-, p- and low-order multigrid."""
__version__ = "0.1.0"
