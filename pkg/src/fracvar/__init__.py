"""Fractional calculus of variations with the combined Caputo derivative."""

__version__ = "0.1.0"
