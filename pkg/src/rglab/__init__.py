"""Numerical laboratory for the hierarchical |φ|^4 renormalisation group."""

__version__ = "0.1.0"
