"""Bounds on heat transport by steady and unsteady incompressible flows."""

__version__ = "0.1.0"
