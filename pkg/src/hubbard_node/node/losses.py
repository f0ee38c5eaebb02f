"""Trajectory and physics-constraint losses on packed 2RDM predictions.

All functions take tensors with the packed width in the last axis; any
leading axes (time, batch) are averaged over.  Constraint terms act on
*physical* (denormalized) values; :class:`PhysicalMap` performs the
denormalization and unpacking as fixed linear maps so gradients flow through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..dataset import Normalizer, _layout

EIG_BAND = 1e-12
TERMS = ("mse", "psd_D", "psd_Q", "tr_D", "tr_Q")


def loss_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """``(1/K) Σ_k ||pred_k - target_k||²`` over a window ``(K+1, ..., width)``.

    The first row is the shared initial condition and is excluded from the
    average; further leading axes (batch) are averaged.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.shape[0] < 2:
        raise ValueError("window needs at least two time points")
    sq = ((pred[1:] - target[1:]) ** 2).sum(dim=-1)
    return sq.mean()


def eig_penalty(mats: torch.Tensor, band: float = EIG_BAND) -> torch.Tensor:
    """``mean_t Σ_j relu(-λ_j)²`` for Hermitian ``(..., n, n)`` matrices."""
    herm = 0.5 * (mats + mats.conj().transpose(-1, -2))
    lam = torch.linalg.eigvalsh(herm)
    neg = torch.where(lam < -band, -lam, torch.zeros_like(lam))
    return (neg ** 2).sum(dim=-1).mean()


def trace_penalty(traces: torch.Tensor, target: float) -> torch.Tensor:
    """``mean_t (trace - target)²``."""
    return ((traces - target) ** 2).mean()


class PhysicalMap:
    """Denormalize and unpack packed predictions into Hermitian matrices.

    Parameters
    ----------
    normalizer : Normalizer or None
        ``None`` means the inputs are already physical.
    n_sites, n_up, n_down : int
        Lattice size and particle numbers; they fix the trace targets
        ``N↑N↓`` and ``(M-N↑)(M-N↓)``.
    """

    def __init__(self, normalizer: Normalizer | None, n_sites: int = 6, n_up: int = 3, n_down: int = 3,
                 dtype: torch.dtype = torch.float64):
        self.M = n_sites
        self.n = n_sites * n_sites
        self.n_up, self.n_down = n_up, n_down
        self.width = self.n * self.n
        self.dtype = dtype
        if normalizer is None:
            lo, scale = np.zeros(self.width), np.ones(self.width)
        else:
            lo, scale = normalizer.lo, normalizer.scale
        self.lo = torch.as_tensor(lo, dtype=dtype)
        self.scale = torch.as_tensor(scale, dtype=dtype)
        re_map, im_map = _unpack_maps(self.n)
        self.re_map = torch.as_tensor(re_map, dtype=dtype)
        self.im_map = torch.as_tensor(im_map, dtype=dtype)
        self.diag_idx = torch.arange(self.n)
        self.trace_D = float(n_up * n_down)
        self.trace_Q = float((n_sites - n_up) * (n_sites - n_down))

    def physical(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.scale + self.lo

    def matrices(self, x: torch.Tensor) -> torch.Tensor:
        """Complex ``(..., 36, 36)`` 2RDM blocks from normalized packed rows."""
        phys = self.physical(x)
        re = (phys @ self.re_map).reshape(x.shape[:-1] + (self.n, self.n))
        im = (phys @ self.im_map).reshape(x.shape[:-1] + (self.n, self.n))
        return torch.complex(re, im)

    def trace_D12(self, x: torch.Tensor) -> torch.Tensor:
        return self.physical(x)[..., : self.n].sum(dim=-1)

    def hole(self, D12: torch.Tensor) -> torch.Tensor:
        """Two-hole matrix from the mixed block, 1RDM by contraction."""
        M = self.M
        T = D12.reshape(D12.shape[:-2] + (M, M, M, M))
        up = torch.einsum("...jmim->...ji", T) / self.n_down
        down = torch.einsum("...mjmi->...ji", T) / self.n_up
        eye = torch.eye(M, dtype=D12.dtype)
        kron_down = torch.einsum("ac,...bd->...abcd", eye, down).reshape(D12.shape)
        kron_up = torch.einsum("...ac,bd->...abcd", up, eye).reshape(D12.shape)
        return torch.eye(self.n, dtype=D12.dtype) - kron_down - kron_up + D12

    def terms(self, x: torch.Tensor, which: tuple[str, ...] = ("psd_D", "psd_Q", "tr_D", "tr_Q")) -> dict:
        """Constraint losses for normalized predictions ``x``."""
        out: dict[str, torch.Tensor] = {}
        if not which:
            return out
        D = self.matrices(x)
        Q = self.hole(D) if ("psd_Q" in which or "tr_Q" in which) else None
        if "psd_D" in which:
            out["psd_D"] = eig_penalty(D)
        if "psd_Q" in which:
            out["psd_Q"] = eig_penalty(Q)
        if "tr_D" in which:
            out["tr_D"] = trace_penalty(self.trace_D12(x), self.trace_D)
        if "tr_Q" in which:
            out["tr_Q"] = trace_penalty(torch.diagonal(Q, dim1=-2, dim2=-1).real.sum(-1), self.trace_Q)
        return out


def _unpack_maps(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrices mapping packed rows to row-major flattened Re and Im parts."""
    width = n * n
    rows, cols = _layout(n)
    re = np.zeros((width, width))
    im = np.zeros((width, width))
    for k in range(n):
        re[k, k * n + k] = 1.0
    for m, (r, c) in enumerate(zip(rows, cols)):
        pr, pi = n + 2 * m, n + 2 * m + 1
        re[pr, r * n + c] = 1.0
        re[pr, c * n + r] = 1.0
        im[pi, r * n + c] = 1.0
        im[pi, c * n + r] = -1.0
    return re, im


@dataclass(frozen=True)
class LossWeights:
    """Constraint weights; zero disables a term."""

    psd_D: float = 0.0
    psd_Q: float = 0.0
    tr_D: float = 0.0
    tr_Q: float = 0.0

    def __post_init__(self):
        for name in ("psd_D", "psd_Q", "tr_D", "tr_Q"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")

    def active(self) -> tuple[str, ...]:
        return tuple(name for name in ("psd_D", "psd_Q", "tr_D", "tr_Q") if getattr(self, name) > 0)


def total_loss(pred: torch.Tensor, target: torch.Tensor, weights: LossWeights,
               phys: PhysicalMap | None, report: tuple[str, ...] = ()) -> tuple[torch.Tensor, dict]:
    """``MSE + Σ α_i L_i``; ``report`` lists extra terms to evaluate (no gradient weight)."""
    parts = {"mse": loss_mse(pred, target)}
    wanted = tuple(dict.fromkeys(weights.active() + tuple(report)))
    if wanted:
        if phys is None:
            raise ValueError("constraint terms need a PhysicalMap")
        parts.update(phys.terms(pred[1:], wanted))
    total = parts["mse"]
    for name in weights.active():
        total = total + getattr(weights, name) * parts[name]
    return total, parts
