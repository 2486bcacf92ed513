"""Off-policy evaluation and optimization of discrete pricing policies."""
__version__ = "0.1.0"
