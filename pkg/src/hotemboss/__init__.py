"""Thermo-viscoelastic finite-element simulation of hot-embossing cooling and demolding."""

__version__ = "0.1.0"
