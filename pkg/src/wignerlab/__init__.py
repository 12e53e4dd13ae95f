"""Numerical laboratory for mesoscopic deformations of diagonal matrices.

Subpackages mirror the pipeline: deterministic spectral theory (freeconv),
matrix sampling (ensembles), stochastic flows (dynamics), the multi-particle
moment dynamics (momentflow), Monte Carlo experiments (verify), and the
configuration-driven runner (cli).
"""

__version__ = "0.1.0"

from . import dynamics, ensembles, freeconv, momentflow  # noqa: F401
