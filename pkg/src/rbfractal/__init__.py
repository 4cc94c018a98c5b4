"""rbfractal: fractal functions as fixed points of Read-Bajractarević operators."""

__version__ = "0.1.0"
