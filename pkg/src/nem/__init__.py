"""Noisy VQE followed by neural-network tomography and VMC refinement."""

__version__ = "0.1.0"
