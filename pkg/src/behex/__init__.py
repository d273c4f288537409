"""Behavioral exploration in tabular MDPs: coverage-conditioned cloning of demonstrations."""

__version__ = "0.1.0"
