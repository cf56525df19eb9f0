"""Rewrites statistical SQL into differentially private SQL."""

__version__ = "0.1.0"
