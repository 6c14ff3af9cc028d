"""Generalized Kaehler blow-ups of local models, computed and certified numerically."""

__version__ = "0.1.0"
