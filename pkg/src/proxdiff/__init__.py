"""Multitask diffusion LMS over clustered networks with proximal coregularization."""

__version__ = "0.1.0"
