"""Wigner fragments on a Clifford torus: classical point charges and high-spin Hartree-Fock."""

__version__ = "0.1.0"
