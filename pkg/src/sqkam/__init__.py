"""Square-matrix analysis of nonlinear Hamiltonian dynamics on a 2-torus."""

__version__ = "0.1.0"
