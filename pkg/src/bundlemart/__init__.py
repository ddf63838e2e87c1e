"""Stochastic differential geometry on charted manifolds and fiber bundles."""

__version__ = "0.1.0"
