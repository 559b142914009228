"""Certified nonlinear MPC for two-agent lane merging with interval-verified barrier certificates."""

__version__ = "0.1.0"
