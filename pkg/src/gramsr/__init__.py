"""Example-based super-resolution and texture synthesis with Gram-matrix priors."""

__version__ = "0.1.0"
