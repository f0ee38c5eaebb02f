"""Quench a trapped six-site Hubbard chain and check what must be conserved.

The ground state of the chain with a harmonic trap is evolved after the trap
is switched off.  Along the way we check the norm, the energy and the traces
and positivity of the mixed-spin 2RDM and its hole counterpart, and watch
the cumulants grow out of the initial state.

Run:  python demos/01_quench_invariants.py [U] [V]
"""

import sys

import numpy as np

from hubbard_node import cumulants as cu
from hubbard_node import rdm
from hubbard_node.model import ModelParams, expectation
from hubbard_node.pipeline import quench
from hubbard_node.propagator import EvolutionSpec

U = float(sys.argv[1]) if len(sys.argv) > 1 else 3.1
V = float(sys.argv[2]) if len(sys.argv) > 2 else 1.0

q = quench(ModelParams(U=U, V=V), EvolutionSpec(dt=0.01, t_end=20.0, stride=100))
states = q.trajectory.states
print(f"U = {U}, V = {V}: {q.basis.dim} basis states, trapped ground energy {q.E0:.6f} J")

energies = np.array([expectation(q.H, s) for s in states])
print(f"post-quench energy {energies[0]:.10f} J, max drift {np.abs(energies - energies[0]).max():.2e}")

D12 = rdm.two_rdm_updown(q.basis, states)
D1 = rdm.one_rdm(q.basis, states)
Q = rdm.two_hole_rdm(D12, D1)
print(f"Tr D12 in [{np.trace(D12, axis1=1, axis2=2).real.min():.12f}, "
      f"{np.trace(D12, axis1=1, axis2=2).real.max():.12f}] (N_up * N_down = 9)")
print(f"Tr Q   in [{np.trace(Q, axis1=1, axis2=2).real.min():.12f}, "
      f"{np.trace(Q, axis1=1, axis2=2).real.max():.12f}] (holes: 3 * 3 = 9)")
print(f"smallest eigenvalues: D12 {np.linalg.eigvalsh(D12).min():.2e}, Q {np.linalg.eigvalsh(Q).min():.2e}")

print("\n  t     |D12 ud|  |D12 uu|  |D123|    |D123 K|  n_1     d_1")
n, d = rdm.occupations(D1=D1, D12=D12)
for k, (t, psi) in enumerate(zip(q.trajectory.times, states)):
    if k % 2:
        continue
    norms = cu.snapshot(q.basis, psi).norms
    print(f"{t:5.1f}  {norms['d12_updown']:.5f}  {norms['d12_upup']:.5f}  {norms['d123']:.5f}  "
          f"{norms['d123k']:.5f}  {n[k, 0]:.4f}  {d[k, 0]:.4f}")
