"""Fixed-sector fermionic Fock basis and operator actions.

Modes are ordered with all spin-up sites first (site ascending), followed by
all spin-down sites.  A configuration is packed into one integer
``up_bits | (down_bits << n_sites)`` and the Jordan-Wigner sign of an
operator on mode ``k`` is ``(-1)**popcount(bits & ((1 << k) - 1))``.
Consequently a spin-down operator picks up the parity of the full spin-up
string in addition to the down-spin sites below it.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

UP, DOWN = 0, 1
CREATE, ANNIHILATE = "+", "-"

_SPIN_NAMES = {UP: UP, DOWN: DOWN, "up": UP, "down": DOWN, "u": UP, "d": DOWN}
_KIND_NAMES = {
    CREATE: CREATE, ANNIHILATE: ANNIHILATE,
    "create": CREATE, "annihilate": ANNIHILATE, "c": CREATE, "a": ANNIHILATE,
}


@dataclass(frozen=True)
class FockConfig:
    up_bits: int
    down_bits: int

    def packed(self, n_sites: int) -> int:
        return self.up_bits | (self.down_bits << n_sites)


@dataclass(frozen=True)
class FockBasis:
    """Occupation-number basis of the ``(n_up, n_down)`` sector on ``n_sites``.

    Configurations are sorted lexicographically by ``(up_bits, down_bits)``.
    """

    n_sites: int
    n_up: int
    n_down: int
    configs: tuple[FockConfig, ...] = field(repr=False)
    index: dict = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.configs)

    def __len__(self) -> int:
        return len(self.configs)

    @functools.cached_property
    def packed(self) -> np.ndarray:
        """Packed integer configurations, one per basis state."""
        return np.array([c.packed(self.n_sites) for c in self.configs], dtype=np.int64)

    def occupations(self, spin) -> np.ndarray:
        """0/1 occupation table of shape ``(dim, n_sites)`` for one spin."""
        spin = _spin(spin)
        shift = spin * self.n_sites
        sites = np.arange(self.n_sites)
        return ((self.packed[:, None] >> (sites + shift)) & 1).astype(np.int8)


def _spin(s) -> int:
    try:
        return _SPIN_NAMES[s]
    except (KeyError, TypeError):
        raise ValueError(f"unknown spin label {s!r}") from None


def _kind(k) -> str:
    try:
        return _KIND_NAMES[k]
    except (KeyError, TypeError):
        raise ValueError(f"unknown operator kind {k!r}") from None


def _bitmasks(n_sites: int, n_particles: int) -> list[int]:
    return sorted(sum(1 << i for i in occ) for occ in combinations(range(n_sites), n_particles))


@functools.lru_cache(maxsize=None)
def build_basis(n_sites: int, n_up: int, n_down: int) -> FockBasis:
    """Enumerate the Fock basis with fixed particle numbers per spin.

    >>> build_basis(6, 3, 3).dim
    400
    """
    if not isinstance(n_sites, (int, np.integer)) or n_sites < 1:
        raise ValueError(f"n_sites must be a positive integer, got {n_sites!r}")
    for name, n in (("n_up", n_up), ("n_down", n_down)):
        if not 0 <= n <= n_sites:
            raise ValueError(f"{name}={n} outside [0, {n_sites}]")
    ups = _bitmasks(n_sites, n_up)
    downs = _bitmasks(n_sites, n_down)
    configs = tuple(FockConfig(u, d) for u in ups for d in downs)
    index = {c: k for k, c in enumerate(configs)}
    assert len(configs) == comb(n_sites, n_up) * comb(n_sites, n_down)
    return FockBasis(int(n_sites), int(n_up), int(n_down), configs, index)


def _packed_index(basis: FockBasis) -> dict[int, int]:
    return {int(p): k for k, p in enumerate(basis.packed)}


@functools.lru_cache(maxsize=None)
def _operator_cached(n_sites, n_up, n_down, kind, site, spin):
    src = build_basis(n_sites, n_up, n_down)
    delta = 1 if kind == CREATE else -1
    counts = [n_up, n_down]
    counts[spin] += delta
    if not 0 <= counts[spin] <= n_sites:
        return None, None
    dst = build_basis(n_sites, *counts)
    dst_index = _packed_index(dst)
    mode = spin * n_sites + site
    bit = 1 << mode
    below = bit - 1
    rows, cols, vals = [], [], []
    for col, p in enumerate(src.packed):
        p = int(p)
        occupied = bool(p & bit)
        if occupied == (kind == CREATE):
            continue
        sign = -1.0 if bin(p & below).count("1") % 2 else 1.0
        rows.append(dst_index[p ^ bit])
        cols.append(col)
        vals.append(sign)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(dst.dim, src.dim))
    mat.sort_indices()
    return dst, mat


def operator_matrix(basis: FockBasis, kind, site: int, spin) -> tuple[FockBasis | None, sp.csr_matrix | None]:
    """Sparse matrix of a single creation/annihilation operator.

    Returns ``(target_basis, matrix)`` where ``matrix`` maps amplitudes over
    ``basis`` to amplitudes over ``target_basis``.  If the target sector does
    not exist (e.g. annihilating from an empty species) both are ``None``.
    """
    kind, spin = _kind(kind), _spin(spin)
    if not 0 <= site < basis.n_sites:
        raise ValueError(f"site {site} out of range for {basis.n_sites} sites")
    return _operator_cached(basis.n_sites, basis.n_up, basis.n_down, kind, int(site), spin)


def annihilator(basis: FockBasis, site: int, spin) -> tuple[FockBasis | None, sp.csr_matrix | None]:
    return operator_matrix(basis, ANNIHILATE, site, spin)


def string_matrix(basis: FockBasis, ops: Sequence[tuple]) -> tuple[FockBasis | None, sp.csr_matrix | None]:
    """Matrix of an operator product written left to right.

    ``ops`` lists ``(kind, site, spin)`` factors in the order they are written,
    so the rightmost factor acts first.
    """
    current = basis
    total = sp.identity(basis.dim, format="csr")
    for kind, site, spin in reversed(list(ops)):
        nxt, mat = operator_matrix(current, kind, site, spin)
        if nxt is None:
            return None, None
        total = (mat @ total).tocsr()
        current = nxt
    return current, total


def apply_ops(basis: FockBasis, ops: Sequence[tuple], psi: np.ndarray) -> tuple[FockBasis | None, np.ndarray]:
    """Apply an operator string to ``psi``; returns ``(target_basis, vector)``.

    An operator string that leaves the allowed sectors yields ``(None, zeros)``
    of the input size.
    """
    psi = np.asarray(psi)
    if psi.shape[0] != basis.dim:
        raise ValueError(f"state has {psi.shape[0]} amplitudes, basis has {basis.dim}")
    target, mat = string_matrix(basis, ops)
    if target is None:
        return None, np.zeros_like(psi, dtype=np.result_type(psi, float))
    return target, mat @ psi


def apply_pair(basis: FockBasis, ops: Sequence[tuple], psi: np.ndarray) -> np.ndarray:
    """Apply a sector-conserving operator string (e.g. ``a†_x a_y``) to ``psi``.

    Strings that change ``(n_up, n_down)`` are rejected; use :func:`apply_ops`.
    """
    target, out = apply_ops(basis, ops, psi)
    if target is not None and (target.n_up, target.n_down) != (basis.n_up, basis.n_down):
        raise ValueError("operator string does not conserve the particle-number sector")
    return out


def basis_vector(basis: FockBasis, up_sites: Iterable[int], down_sites: Iterable[int]) -> np.ndarray:
    """Unit vector of the configuration with the given occupied sites."""
    up = sum(1 << i for i in up_sites)
    down = sum(1 << i for i in down_sites)
    vec = np.zeros(basis.dim, dtype=complex)
    vec[basis.index[FockConfig(up, down)]] = 1.0
    return vec
