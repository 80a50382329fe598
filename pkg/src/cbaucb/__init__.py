"""Contextual bandits with a sparse TPBN prior and variational inference."""

__version__ = "0.1.0"
