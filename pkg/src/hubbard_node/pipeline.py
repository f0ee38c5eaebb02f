"""One quench from start to finish: ground state, evolution, RDMs, indicators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rdm
from .cumulants import CumulantSeries, norm_series
from .dataset import SplitSpec, TrajectoryData, pack
from .diagnostics import RegimeIndicators, regime_indicators
from .hilbert import FockBasis, build_basis
from .model import Hamiltonian, ModelParams, build_hamiltonian, expectation
from .propagator import EvolutionSpec, WaveTrajectory, evolve, ground_state


@dataclass
class Quench:
    basis: FockBasis
    params: ModelParams
    H_trap: Hamiltonian
    H: Hamiltonian
    E0: float
    trajectory: WaveTrajectory

    @property
    def energy(self) -> float:
        """Post-quench energy, conserved along the trajectory."""
        return expectation(self.H, self.trajectory.states[0])


def quench(params: ModelParams, spec: EvolutionSpec = EvolutionSpec(), n_up: int = 3,
           n_down: int = 3, times: np.ndarray | None = None) -> Quench:
    """Ground state of the trapped lattice evolved with the trap switched off."""
    basis = build_basis(params.n_sites, n_up, n_down)
    H_trap = build_hamiltonian(basis, params, trapped=True)
    H = build_hamiltonian(basis, params, trapped=False)
    E0, psi0 = ground_state(H_trap)
    return Quench(basis, params, H_trap, H, E0, evolve(psi0, H, spec, basis, times))


@dataclass
class SimulationResult:
    quench: Quench
    series: CumulantSeries
    indicators: RegimeIndicators
    data: TrajectoryData


def simulate_point(params: ModelParams, spec: EvolutionSpec = EvolutionSpec(), n_up: int = 3,
                   n_down: int = 3, T: float = 50.0, t0: float = 10.0,
                   split: SplitSpec | None = None, **thresholds) -> SimulationResult:
    """Run one grid point and assemble its persisted artifacts."""
    q = quench(params, spec, n_up, n_down)
    traj = q.trajectory
    series = norm_series(q.basis, traj.times, traj.states, params.U, keep_updown=True)
    ind = regime_indicators(series, params, T, t0, **thresholds)
    packed = pack(series.updown)
    energies = _energies(q.H, traj.states[[0, -1]])
    data = TrajectoryData(
        U=params.U, V=params.V, dt=spec.dt * spec.stride, times=traj.times, packed=packed,
        norms=series.norms, correlation_energy=series.correlation_energy,
        occupations=series.occupations, doublons=series.doublons,
        indicators={k: float(v) for k, v in ind.as_dict().items()},
        n_sites=params.n_sites, n_up=n_up, n_down=n_down, J=params.J,
        split=split or SplitSpec(dt=spec.dt * spec.stride),
        extra={"E0_trapped": q.E0, "energy_first": energies[0], "energy_last": energies[1]},
    )
    series.updown = None
    return SimulationResult(q, series, ind, data)


def _energies(H: Hamiltonian, states: np.ndarray) -> list[float]:
    return [expectation(H, s) for s in states]


def exact_updown(q: Quench, index) -> np.ndarray:
    """Exact 2RDM mixed blocks at trajectory indices ``index``."""
    return rdm.two_rdm_updown(q.basis, q.trajectory.states[index])
