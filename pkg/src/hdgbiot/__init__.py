"""Hybridizable discontinuous Galerkin solver for coupled Navier-Stokes / Biot flow."""

__version__ = "0.1.0"
