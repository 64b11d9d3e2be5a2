"""Gradient-guided renaming attacks on a path-attention code classifier,
and defenses against them."""

__version__ = "0.1.0"
