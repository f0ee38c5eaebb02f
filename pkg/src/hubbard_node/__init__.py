"""Exact quench dynamics of a small Fermi-Hubbard chain, reduced density
matrices and cumulants, regime diagnostics, and a neural-ODE surrogate for
the mixed-spin two-particle reduced density matrix.

The physics layer (``hilbert``, ``model``, ``propagator``, ``rdm``,
``cumulants``, ``diagnostics``) depends only on numpy and scipy; the learning
layer lives in :mod:`hubbard_node.node` and needs torch.
"""

__version__ = "0.1.0"

from .hilbert import FockBasis, build_basis
from .model import ModelParams, build_hamiltonian
from .propagator import EvolutionSpec, evolve, ground_state

__all__ = ["__version__", "FockBasis", "build_basis", "ModelParams", "build_hamiltonian",
           "EvolutionSpec", "evolve", "ground_state"]
