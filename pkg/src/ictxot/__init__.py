"""In-context estimation of optimal transport maps between Gaussians and beyond."""

__version__ = "0.1.0"
