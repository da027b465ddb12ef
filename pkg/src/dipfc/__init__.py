"""Averaged-model simulator and design tools for a transformerless series/shunt power-flow controller."""

__version__ = "0.1.0"
