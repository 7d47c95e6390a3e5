"""Curvature, Laplacians and gradient flows of Hamiltonians on cotangent bundles."""

__version__ = "0.1.0"
