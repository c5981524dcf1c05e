"""Coagulating Brownian particles: simulation, kernel recipe, Smoluchowski solvers."""

__version__ = "0.1.0"
