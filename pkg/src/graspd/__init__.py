"""Differentiable grasp synthesis on signed-distance objects."""
__version__ = "0.1.0"
