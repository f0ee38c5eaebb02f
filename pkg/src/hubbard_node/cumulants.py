"""Two- and three-particle cumulants and the trace-free kernel component.

Index conventions follow :mod:`hubbard_node.rdm`.  With ``D↑ = D1[0]``,
``D↓ = D1[1]`` the decompositions are::

    updown: Δ[(j1 j2),(i1 i2)] = D12 - D↑[j1,i1] D↓[j2,i2]
    upup:   Δ[(j1 j2),(i1 i2)] = D12 - D↑[j1,i1] D↑[j2,i2] + D↑[j2,i1] D↑[j1,i2]

and for the up-up-down block the pair cumulants enter through every
distinct way of attaching one particle by a 1RDM line::

    D123 = (D↑[j1,i1] D↑[j2,i2] - D↑[j2,i1] D↑[j1,i2]) D↓[j3,i3]
         + Δ↑↑[(j1 j2),(i1 i2)] D↓[j3,i3]
         + Δ↑↓[(j1 j3),(i1 i3)] D↑[j2,i2] + Δ↑↓[(j2 j3),(i2 i3)] D↑[j1,i1]
         - Δ↑↓[(j1 j3),(i2 i3)] D↑[j2,i1] - Δ↑↓[(j2 j3),(i1 i3)] D↑[j1,i2]
         + Δ123
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rdm
from .hilbert import FockBasis

NORM_COLUMNS = ("d12_upup", "d12_updown", "d123", "d123k")


def _as4(A: np.ndarray, M: int) -> np.ndarray:
    return A.reshape(A.shape[:-2] + (M, M, M, M))


def _as6(A: np.ndarray, M: int) -> np.ndarray:
    return A.reshape(A.shape[:-2] + (M,) * 6)


def delta12(D12: np.ndarray, D1: np.ndarray, kind: str = "updown") -> np.ndarray:
    """Two-particle cumulant of an ``updown`` or ``upup`` block."""
    M = D1.shape[-1]
    up, down = D1[..., 0, :, :], D1[..., 1, :, :]
    if kind == "updown":
        prod = np.einsum("...ac,...bd->...abcd", up, down)
    elif kind == "upup":
        prod = (np.einsum("...ac,...bd->...abcd", up, up)
                - np.einsum("...bc,...ad->...abcd", up, up))
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    return D12 - prod.reshape(D12.shape)


def disconnected_uud(D1: np.ndarray, d12_upup: np.ndarray, d12_updown: np.ndarray) -> np.ndarray:
    """All terms of the up-up-down 3RDM built from 1RDMs and pair cumulants."""
    M = D1.shape[-1]
    up, down = D1[..., 0, :, :], D1[..., 1, :, :]
    uu = _as4(d12_upup, M)
    ud = _as4(d12_updown, M)
    # indices: a=j1 b=j2 c=j3 | d=i1 e=i2 f=i3
    ein = np.einsum
    terms = (
        ein("...ad,...be,...cf->...abcdef", up, up, down)
        - ein("...bd,...ae,...cf->...abcdef", up, up, down)
        + ein("...abde,...cf->...abcdef", uu, down)
        + ein("...acdf,...be->...abcdef", ud, up)
        + ein("...bcef,...ad->...abcdef", ud, up)
        - ein("...acef,...bd->...abcdef", ud, up)
        - ein("...bcdf,...ae->...abcdef", ud, up)
    )
    return terms.reshape(terms.shape[:-6] + (M**3, M**3))


def delta123(D123: np.ndarray, D1: np.ndarray, d12_upup: np.ndarray, d12_updown: np.ndarray) -> np.ndarray:
    """Three-particle (up-up-down) cumulant."""
    return D123 - disconnected_uud(D1, d12_upup, d12_updown)


def partial_trace(T: np.ndarray, slot: int, M: int) -> np.ndarray:
    """Contract bra and ket index of particle ``slot`` (0, 1 or 2) of a 3-body tensor."""
    T6 = _as6(T, M)
    subs = {0: "...xbcxef->...bcef", 1: "...axcdxf->...acdf", 2: "...abxdex->...abde"}[slot]
    out = np.einsum(subs, T6)
    return out.reshape(out.shape[:-4] + (M * M, M * M))


def _remove_trace(T6: np.ndarray, slot: int, M: int) -> np.ndarray:
    bra, ket = T6.ndim - 6 + slot, T6.ndim - 3 + slot
    tr = np.expand_dims(np.trace(T6, axis1=bra, axis2=ket) / M, (bra, ket))
    shape = [1] * T6.ndim
    shape[bra] = shape[ket] = M
    return T6 - tr * np.eye(M).reshape(shape)


def kernel_component(D123_cumulant: np.ndarray, M: int | None = None) -> np.ndarray:
    """Orthogonal projection onto tensors whose three partial traces vanish.

    For each particle slot ``k`` the map ``p_k(T) = δ_k ⊗ Tr_k(T) / M`` is the
    Frobenius-orthogonal projector onto the trace-carrying part of that slot.
    The ``p_k`` commute, so ``(1 - p_1)(1 - p_2)(1 - p_3)`` projects onto the
    intersection of their kernels.
    """
    T = np.asarray(D123_cumulant)
    if M is None:
        M = int(round(T.shape[-1] ** (1 / 3)))
    T6 = _as6(T, M)
    for slot in range(3):
        T6 = _remove_trace(T6, slot, M)
    return T6.reshape(T.shape)


def disconnected_uud_reduced(D1: np.ndarray, d12_upup: np.ndarray, d12_updown: np.ndarray) -> np.ndarray:
    """:func:`disconnected_uud` evaluated only on ordered up pairs (``j1 < j2``, ``i1 < i2``)."""
    M = D1.shape[-1]
    pairs = rdm.upup_pairs(M)[0]
    a = np.repeat(pairs[:, 0], M)
    b = np.repeat(pairs[:, 1], M)
    c = np.tile(np.arange(M), len(pairs))
    A, B, C = a[:, None], b[:, None], c[:, None]
    D, E, F = a[None, :], b[None, :], c[None, :]
    up, down = D1[..., 0, :, :], D1[..., 1, :, :]
    uu = _as4(d12_upup, M)
    ud = _as4(d12_updown, M)
    dn = down[..., C, F]
    return ((up[..., A, D] * up[..., B, E] - up[..., B, D] * up[..., A, E]) * dn
            + uu[..., A, B, D, E] * dn
            + ud[..., A, C, D, F] * up[..., B, E]
            + ud[..., B, C, E, F] * up[..., A, D]
            - ud[..., A, C, E, F] * up[..., B, D]
            - ud[..., B, C, D, F] * up[..., A, E])


def _sq(A: np.ndarray, naxes: int) -> np.ndarray:
    return np.sum(np.abs(A) ** 2, axis=tuple(range(-naxes, 0)))


def reduced_norms(d123_reduced: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Frobenius norms of the dense cumulant and of its kernel component.

    Uses ``||P Δ||² = <Δ, P Δ>`` with ``P = (1 - p_1)(1 - p_2)(1 - p_3)``,
    which needs only the partial traces of ``Δ``.  Every ordered-pair entry
    appears four times (with signs) in the dense tensor.
    """
    pairs, index, sign = rdm.upup_pairs(M)
    P = len(pairs)
    R = d123_reduced.reshape(d123_reduced.shape[:-2] + (P, M, P, M))
    full_sq = 4.0 * _sq(R, 4)
    # trace over the down slot: reduced up-up block
    tr3 = np.einsum("...pxqx->...pq", R)
    pad = [(0, 0)] * (R.ndim - 4) + [(0, 1), (0, 0), (0, 1), (0, 0)]
    Rp = np.pad(R, pad)
    # trace over the first up slot; equals the trace over the second up slot
    tr1 = 0
    for x in range(M):
        g = np.take(np.take(Rp, index[x], axis=-4), index[x], axis=-2)  # (..., j2, j3, i2, i3)
        tr1 = tr1 + g * sign[x][:, None, None, None] * sign[x][None, None, :, None]
    tr12 = np.einsum("...yayb->...ab", tr1)
    tr13 = np.einsum("...ayby->...ab", tr1)
    total = np.einsum("...aa->...", tr12)
    kernel_sq = (full_sq
                 - (2.0 * _sq(tr1, 4) + 4.0 * _sq(tr3, 2)) / M
                 + (_sq(tr12, 2) + 2.0 * _sq(tr13, 2)) / M**2
                 - np.abs(total) ** 2 / M**3)
    return np.sqrt(full_sq), np.sqrt(np.clip(kernel_sq, 0.0, None))


def frobenius(A: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(A) ** 2, axis=(-2, -1)))


@dataclass
class CumulantSnapshot:
    d12_updown: np.ndarray
    d12_upup: np.ndarray
    d123: np.ndarray
    d123k: np.ndarray

    @property
    def norms(self) -> dict[str, float]:
        return {name: float(frobenius(getattr(self, name))) for name in
                ("d12_upup", "d12_updown", "d123", "d123k")}


def snapshot(basis: FockBasis, psi: np.ndarray) -> CumulantSnapshot:
    """All cumulant tensors of one state."""
    D1 = rdm.one_rdm(basis, psi)
    ud = delta12(rdm.two_rdm_updown(basis, psi), D1, "updown")
    uu = delta12(rdm.two_rdm_upup(basis, psi), D1, "upup")
    d3 = delta123(rdm.three_rdm_uud(basis, psi), D1, uu, ud)
    return CumulantSnapshot(ud, uu, d3, kernel_component(d3, basis.n_sites))


@dataclass
class CumulantSeries:
    """Per-time observables of a trajectory.

    ``norms`` has columns :data:`NORM_COLUMNS`.  ``packed_updown`` is filled
    only when the caller asks for the 2RDM blocks.
    """

    times: np.ndarray
    norms: np.ndarray
    correlation_energy: np.ndarray
    occupations: np.ndarray
    doublons: np.ndarray
    one_rdm0: np.ndarray
    updown: np.ndarray | None = field(default=None, repr=False)

    def norm(self, name: str) -> np.ndarray:
        return self.norms[:, NORM_COLUMNS.index(name)]


def norm_series(basis: FockBasis, times: np.ndarray, states: np.ndarray, U: float = 0.0,
                keep_updown: bool = False, chunk: int = 100) -> CumulantSeries:
    """Stream a trajectory through RDM extraction and cumulant norms.

    Works chunk by chunk so the up-up-down tensors (``M**6`` entries per
    snapshot) are never held for the whole trajectory.
    """
    from .diagnostics import correlation_energy

    states = np.asarray(states)
    if len(states) == 0:
        raise ValueError("empty trajectory")
    T = len(states)
    M = basis.n_sites
    norms = np.empty((T, 4))
    ecorr = np.empty(T)
    occ = np.empty((T, M))
    dbl = np.empty((T, M))
    updown = np.empty((T, M * M, M * M), dtype=complex) if keep_updown else None
    D1_first = None
    for start in range(0, T, chunk):
        psi = states[start:start + chunk]
        D1 = rdm.one_rdm(basis, psi)
        D12 = rdm.two_rdm_updown(basis, psi)
        ud = delta12(D12, D1, "updown")
        uu = delta12(rdm.two_rdm_upup(basis, psi), D1, "upup")
        d3r = rdm.three_rdm_uud_reduced(basis, psi) - disconnected_uud_reduced(D1, uu, ud)
        n3, n3k = reduced_norms(d3r, M)
        sl = slice(start, start + len(psi))
        norms[sl] = np.stack([frobenius(uu), frobenius(ud), n3, n3k], axis=-1)
        ecorr[sl] = correlation_energy(ud, U)
        occ[sl], dbl[sl] = rdm.occupations(D1, D12)
        if keep_updown:
            updown[sl] = D12
        if D1_first is None:
            D1_first = D1[0]
    return CumulantSeries(np.asarray(times, dtype=float), norms, ecorr, occ, dbl, D1_first, updown)
