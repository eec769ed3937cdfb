"""Desk-scale neural-operator super-resolution with one-step generative refinement."""

__version__ = "0.1.0"
