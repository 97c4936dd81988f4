"""Transient district-heating pipeline models and integrated heat-and-power dispatch."""

__version__ = "0.1.0"
