"""Causal network discovery over omic components using genotype-derived instruments."""

__version__ = "0.1.0"
