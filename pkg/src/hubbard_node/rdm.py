"""Reduced density matrices of fixed-sector wavefunctions.

Index conventions
-----------------
* ``D1[s, j, i] = <a†_{i s} a_{j s}>`` with ``s = 0`` (up) or ``1`` (down).
* Two-particle blocks use composite indices ``p = j1 * M + j2`` (bra side,
  rows) and ``q = i1 * M + i2`` (ket side, columns)::

      updown[p, q] = <a†_{i1↑} a†_{i2↓} a_{j2↓} a_{j1↑}>
      upup[p, q]   = <a†_{i1↑} a†_{i2↑} a_{j2↑} a_{j1↑}>

* The up-up-down three-particle block uses ``(j1 * M + j2) * M + j3``::

      uud[P, Q] = <a†_{i1↑} a†_{i2↑} a†_{i3↓} a_{j3↓} a_{j2↑} a_{j1↑}>

Every block is a Gram matrix ``X X^†`` of annihilated states, so Hermiticity
and positive semi-definiteness hold by construction.  All functions accept a
single state ``(dim,)`` or a stack ``(T, dim)``.
"""

from __future__ import annotations

import functools

import numpy as np
import scipy.sparse as sp

from .hilbert import ANNIHILATE, DOWN, UP, FockBasis, string_matrix

HOLE_ORDERINGS = ("psd", "literal")
CHUNK = 256


@functools.lru_cache(maxsize=None)
def _stacked(basis: FockBasis, spins: tuple[int, ...], rows: tuple[int, ...] | None = None
             ) -> tuple[sp.csr_matrix, int, int]:
    """Stack the annihilation strings ``a_{s_k} ... a_{s_1}`` for site tuples.

    Returns ``(matrix, n_ops, target_dim)``; row block ``c`` holds the string
    for the ``c``-th composite index in ``rows`` (all tuples by default, first
    spin slowest).
    """
    M = basis.n_sites
    if rows is None:
        rows = tuple(range(M ** len(spins)))
    n_ops = len(rows)
    blocks = []
    target_dim = None
    for c in rows:
        sites = np.unravel_index(c, (M,) * len(spins))
        # written order: a_{last} ... a_{first}; the first factor acts first
        ops = [(ANNIHILATE, int(s), spin) for s, spin in zip(sites, spins)][::-1]
        target, mat = string_matrix(basis, ops)
        if target is not None:
            target_dim = target.dim
        blocks.append(mat)
    if target_dim is None:
        return sp.csr_matrix((n_ops, basis.dim)), n_ops, 1
    blocks = [b if b is not None else sp.csr_matrix((target_dim, basis.dim)) for b in blocks]
    return sp.vstack(blocks, format="csr"), n_ops, target_dim


def _gram(basis: FockBasis, spins: tuple[int, ...], psi: np.ndarray,
          rows: tuple[int, ...] | None = None) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    single = psi.ndim == 1
    states = psi[None] if single else psi
    mat, n_ops, tdim = _stacked(basis, spins, rows)
    out = np.empty((len(states), n_ops, n_ops), dtype=complex)
    for start in range(0, len(states), CHUNK):
        chunk = states[start:start + CHUNK]
        X = np.ascontiguousarray((mat @ chunk.T).T).reshape(len(chunk), n_ops, tdim)
        Xh = np.ascontiguousarray(X.conj().transpose(0, 2, 1))
        out[start:start + CHUNK] = X @ Xh
    return out[0] if single else out


def one_rdm(basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """Spin-resolved 1RDM, shape ``(..., 2, M, M)`` indexed ``[spin, j, i]``."""
    return np.stack([_gram(basis, (UP,), psi), _gram(basis, (DOWN,), psi)], axis=-3)


def two_rdm_updown(basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """Mixed-spin 2RDM block, ``(..., M*M, M*M)``."""
    return _gram(basis, (UP, DOWN), psi)


def two_rdm_upup(basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """Same-spin (up-up) 2RDM block, antisymmetric in each index pair."""
    return _gram(basis, (UP, UP), psi)


def three_rdm_uud(basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """Up-up-down 3RDM block, ``(..., M**3, M**3)``."""
    return _gram(basis, (UP, UP, DOWN), psi)


@functools.lru_cache(maxsize=None)
def upup_pairs(M: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ordered pair table for antisymmetric up-up indices.

    Returns ``(pairs, index, sign)``: ``pairs`` lists ``(a, b)`` with
    ``a < b``; ``index[a, b]`` is the pair number of ``{a, b}`` (``len(pairs)``
    on the diagonal, pointing at a zero pad row) and ``sign[a, b]`` is
    ``+1`` for ``a < b``, ``-1`` for ``a > b`` and ``0`` for ``a == b``.
    """
    pairs = np.array([(a, b) for a in range(M) for b in range(a + 1, M)], dtype=int).reshape(-1, 2)
    index = np.full((M, M), len(pairs), dtype=int)
    sign = np.zeros((M, M))
    for k, (a, b) in enumerate(pairs):
        index[a, b] = index[b, a] = k
        sign[a, b], sign[b, a] = 1.0, -1.0
    return pairs, index, sign


def _reduced_rows(M: int) -> tuple[int, ...]:
    pairs = upup_pairs(M)[0]
    return tuple(int((a * M + b) * M + c) for a, b in pairs for c in range(M))


def three_rdm_uud_reduced(basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """Up-up-down 3RDM restricted to ``j1 < j2`` and ``i1 < i2``.

    Rows/columns are ``pair * M + j3`` with pairs from :func:`upup_pairs`.
    """
    return _gram(basis, (UP, UP, DOWN), psi, _reduced_rows(basis.n_sites))


def expand_uud(reduced: np.ndarray, M: int) -> np.ndarray:
    """Rebuild the dense ``(M**3, M**3)`` tensor from its ordered-pair part."""
    pairs, index, sign = upup_pairs(M)
    P = len(pairs)
    R = reduced.reshape(reduced.shape[:-2] + (P, M, P, M))
    pad = [(0, 0)] * (R.ndim - 4) + [(0, 1), (0, 0), (0, 1), (0, 0)]
    R = np.pad(R, pad)
    rows = index.reshape(-1)
    full = np.take(np.take(R, rows, axis=-4), rows, axis=-2)  # (..., M*M, M, M*M, M)
    s = sign.reshape(-1)
    full = full * s[:, None, None, None] * s[None, None, :, None]
    return full.reshape(reduced.shape[:-2] + (M**3, M**3))


def two_hole_rdm(D12: np.ndarray, D1: np.ndarray, ordering: str = "psd") -> np.ndarray:
    """Mixed-spin two-hole RDM from the 2RDM block and the 1RDM.

    ``ordering="psd"`` evaluates ``<a_{j1↑} a_{j2↓} a†_{i2↓} a†_{i1↑}>``::

        Q = δδ - δ_{j1 i1} D1↓[j2, i2] - δ_{j2 i2} D1↑[j1, i1] + D12

    which is positive semi-definite.  ``ordering="literal"`` swaps the two
    creators, ``<a_{j1↑} a_{j2↓} a†_{i1↑} a†_{i2↓}>``, which is ``-Q``.
    """
    if ordering not in HOLE_ORDERINGS:
        raise ValueError(f"ordering must be one of {HOLE_ORDERINGS}")
    D12 = np.asarray(D12)
    D1 = np.asarray(D1)
    M = D1.shape[-1]
    eye = np.eye(M)
    up = D1[..., 0, :, :]
    down = D1[..., 1, :, :]
    kron_down = np.einsum("ac,...bd->...abcd", eye, down).reshape(D12.shape)
    kron_up = np.einsum("...ac,bd->...abcd", up, eye).reshape(D12.shape)
    Q = np.eye(M * M) - kron_down - kron_up + D12
    return Q if ordering == "psd" else -Q


def one_rdm_from_updown(D12: np.ndarray, n_up: int, n_down: int) -> np.ndarray:
    """Contract the mixed block to the 1RDM, ``(..., 2, M, M)``.

    ``D1↑[j, i] = Σ_m D12[(j, m), (i, m)] / N↓`` and symmetrically for down.
    """
    D12 = np.asarray(D12)
    M = int(round(np.sqrt(D12.shape[-1])))
    T = D12.reshape(D12.shape[:-2] + (M, M, M, M))
    up = np.einsum("...jmim->...ji", T) / n_down
    down = np.einsum("...mjmi->...ji", T) / n_up
    return np.stack([up, down], axis=-3)


def occupations(D1: np.ndarray | None = None, D12: np.ndarray | None = None,
                n_up: int | None = None, n_down: int | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Site occupations ``n_i`` and doublon occupations ``d_i``.

    ``D1`` is used when given; otherwise it is contracted from ``D12`` (which
    then requires ``n_up`` and ``n_down``).  Doublons need ``D12``.
    """
    if D1 is None:
        if D12 is None or n_up is None or n_down is None:
            raise ValueError("need D1, or D12 together with n_up and n_down")
        D1 = one_rdm_from_updown(D12, n_up, n_down)
    n = np.real(np.diagonal(D1[..., 0, :, :], axis1=-2, axis2=-1)
                + np.diagonal(D1[..., 1, :, :], axis1=-2, axis2=-1))
    d = None
    if D12 is not None:
        M = D1.shape[-1]
        diag = np.real(np.diagonal(D12, axis1=-2, axis2=-1))
        d = diag[..., np.arange(M) * (M + 1)]
    return n, d


def hermitian_part(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
