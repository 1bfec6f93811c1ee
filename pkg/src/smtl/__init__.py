"""Semantic multi-task learning on a from-scratch dense network substrate."""

__version__ = "0.1.0"
