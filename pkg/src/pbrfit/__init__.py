"""Differentiable physically based inverse rendering on factored volume fields."""

__version__ = "0.1.0"
