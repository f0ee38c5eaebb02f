"""Trapped ground state and exact post-quench time evolution."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .hilbert import FockBasis
from .model import Hamiltonian

NORM_TOL = 1e-10


class NormDriftError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionSpec:
    """Snapshot grid ``t_k = k * dt * stride`` up to ``t_end`` (units of 1/J)."""

    dt: float = 0.01
    t_end: float = 70.0
    stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def times(self) -> np.ndarray:
        k = np.arange(0, self.n_steps + 1, self.stride)
        return k * self.dt


@dataclass
class WaveTrajectory:
    basis: FockBasis
    times: np.ndarray
    states: np.ndarray  # (n_times, dim)

    def __len__(self) -> int:
        return len(self.times)


def fix_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate so the largest-magnitude amplitude (first on ties) is real positive."""
    vec = np.asarray(vec, dtype=complex)
    k = int(np.argmax(np.round(np.abs(vec), 12)))
    return vec * (abs(vec[k]) / vec[k])


def eigensystem(H: Hamiltonian) -> tuple[np.ndarray, np.ndarray]:
    return la.eigh(H.dense())


def ground_state(H: Hamiltonian, degeneracy_tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Lowest eigenpair ``(E0, psi0)`` with a deterministic global phase."""
    evals, evecs = eigensystem(H)
    if len(evals) > 1 and evals[1] - evals[0] < degeneracy_tol:
        warnings.warn(
            f"ground state degenerate within {degeneracy_tol}: gap {evals[1] - evals[0]:.3e}; "
            "taking the first eigenvector in basis order",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(evals[0]), fix_phase(evecs[:, 0])


def evolve(psi0: np.ndarray, H: Hamiltonian, spec: EvolutionSpec = EvolutionSpec(),
           basis: FockBasis | None = None, times: np.ndarray | None = None) -> WaveTrajectory:
    """Spectral propagation ``psi(t) = V exp(-i E t) V^† psi0``.

    ``times`` overrides the uniform grid of ``spec`` (used for
    finite-difference stencils at arbitrary instants).
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.vdot(psi0, psi0).real - 1.0) > NORM_TOL:
        raise ValueError("initial state is not normalized")
    evals, evecs = eigensystem(H)
    coeffs = evecs.T @ psi0  # real orthogonal eigenvectors
    t = spec.times() if times is None else np.asarray(times, dtype=float)
    phases = np.exp(-1j * np.outer(t, evals))
    states = (phases * coeffs) @ evecs.T
    norms = np.einsum("ti,ti->t", states.conj(), states).real
    drift = np.max(np.abs(norms - 1.0)) if len(norms) else 0.0
    if drift > NORM_TOL:
        raise NormDriftError(f"norm drift {drift:.3e} exceeds {NORM_TOL}")
    return WaveTrajectory(basis, t, states)
