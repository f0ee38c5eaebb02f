"""Fermi-Hubbard chain Hamiltonian with an optional harmonic trap."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hilbert import DOWN, UP, FockBasis, annihilator


@dataclass(frozen=True)
class ModelParams:
    """Chain parameters; energies in units of the hopping ``J``."""

    U: float
    V: float
    n_sites: int = 6
    J: float = 1.0

    def __post_init__(self):
        if not self.J > 0:
            raise ValueError(f"J must be positive, got {self.J}")
        if not (math.isfinite(self.U) and math.isfinite(self.V)):
            raise ValueError("U and V must be finite")
        if self.n_sites < 1:
            raise ValueError("n_sites must be positive")


@dataclass(frozen=True)
class Hamiltonian:
    matrix: sp.csr_matrix
    trapped: bool
    params: ModelParams

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def trap_profile(params: ModelParams, site: int) -> float:
    """Pre-quench trap energy at 1-based ``site``: ``V**2/2 * (i - (M+1)/2)**2``."""
    if not 1 <= site <= params.n_sites:
        raise ValueError(f"site {site} outside 1..{params.n_sites}")
    return 0.5 * params.V**2 * (site - 0.5 * (params.n_sites + 1)) ** 2


def trap_potentials(params: ModelParams) -> np.ndarray:
    """Trap energies for all sites, 0-based array."""
    return np.array([trap_profile(params, i + 1) for i in range(params.n_sites)])


def hopping_matrix(n_sites: int, J: float = 1.0) -> np.ndarray:
    """Single-particle open-chain hopping matrix ``-J`` on nearest neighbours."""
    h = np.zeros((n_sites, n_sites))
    idx = np.arange(n_sites - 1)
    h[idx, idx + 1] = h[idx + 1, idx] = -J
    return h


def one_body_matrix(params: ModelParams, trapped: bool) -> np.ndarray:
    h = hopping_matrix(params.n_sites, params.J)
    if trapped:
        h = h + np.diag(trap_potentials(params))
    return h


def build_hamiltonian(basis: FockBasis, params: ModelParams, trapped: bool = False) -> Hamiltonian:
    """Sparse many-body Hamiltonian on ``basis``.

    Hopping terms are assembled as ``A_i^T A_j`` from the annihilation
    matrices, which carries the Jordan-Wigner signs automatically.
    """
    if basis.n_sites != params.n_sites:
        raise ValueError("basis and params disagree on the number of sites")
    M = basis.n_sites
    dim = basis.dim
    H = sp.csr_matrix((dim, dim))
    for spin in (UP, DOWN):
        if (basis.n_up, basis.n_down)[spin] == 0:
            continue
        ann = [annihilator(basis, i, spin)[1] for i in range(M)]
        for i in range(M - 1):
            hop = ann[i].T @ ann[i + 1]
            H = H - params.J * (hop + hop.T)
    n_up = basis.occupations(UP).astype(float)
    n_down = basis.occupations(DOWN).astype(float)
    diag = params.U * np.sum(n_up * n_down, axis=1)
    if trapped:
        diag = diag + (n_up + n_down) @ trap_potentials(params)
    H = (H + sp.diags(diag)).tocsr()
    H.sum_duplicates()
    H.eliminate_zeros()
    H.sort_indices()
    return Hamiltonian(H, bool(trapped), params)


def expectation(H: Hamiltonian, psi: np.ndarray, norm_tol: float = 1e-8) -> float:
    """Energy ``<psi|H|psi>`` of a normalized state."""
    psi = np.asarray(psi)
    norm = np.vdot(psi, psi).real
    if abs(norm - 1.0) > norm_tol:
        raise ValueError(f"state not normalized: <psi|psi> = {norm}")
    value = np.vdot(psi, H.matrix @ psi)
    assert abs(value.imag) < 1e-12 * max(1.0, abs(value.real)), value
    return float(value.real)
