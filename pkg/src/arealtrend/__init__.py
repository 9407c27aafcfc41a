"""Bayesian hierarchical models for areal count panels.

Fits neighborhood-specific levels and time trends to counts aggregated
over areal units, with optional Leroux CAR local shrinkage and
data-driven detection of borders that act as barriers to spatial
smoothing.
"""

__version__ = "0.1.0"
