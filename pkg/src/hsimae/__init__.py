"""Desk-scale masked-autoencoder pipeline for hyperspectral cubes."""

__version__ = "0.1.0"
