"""Forward and inverse spectral computations for quadratic differential
pencils with interior jumps and quasi-periodic boundary conditions."""

__version__ = "0.1.0"
