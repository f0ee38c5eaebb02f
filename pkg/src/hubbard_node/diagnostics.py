"""Regime indicators from exact cumulant dynamics, and an equation-of-motion check."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import ModelParams, hopping_matrix, trap_potentials

BUILDUP_THRESHOLD = 0.65
RATIO_THRESHOLD = -0.1
VARIANCE_TOL = 1e-20


def _window(times: np.ndarray, start: float, stop: float) -> slice:
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        raise ValueError("need at least two samples")
    dt = times[1] - times[0]
    eps = 1e-6 * dt
    if times[0] > start + eps or times[-1] < stop - eps:
        raise ValueError(f"series covers [{times[0]}, {times[-1]}], need [{start}, {stop}]")
    lo = int(np.searchsorted(times, start - eps))
    hi = int(np.searchsorted(times, stop + eps))
    return slice(lo, hi)


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w / w.sum()


def time_average(times, values, start: float, stop: float) -> float:
    """Trapezoidal ``1/(stop-start) ∫ values dt`` on a uniform grid."""
    sl = _window(times, start, stop)
    v = np.asarray(values, dtype=float)[sl]
    return float(_trapezoid_weights(len(v)) @ v)


def correlation_buildup(times, kernel_norms, T: float = 50.0) -> float:
    """Time-averaged growth of the kernel-cumulant norm over ``[0, T]``."""
    kernel_norms = np.asarray(kernel_norms, dtype=float)
    sl = _window(times, 0.0, T)
    if sl.start != 0:
        raise ValueError("series must start at t = 0")
    return time_average(times, kernel_norms - kernel_norms[0], 0.0, T)


def correlation_energy(d12_updown: np.ndarray, U: float) -> np.ndarray:
    """``U Σ_j Δ[(j j),(j j)]`` of the mixed-spin pair cumulant."""
    M = int(round(math.sqrt(d12_updown.shape[-1])))
    diag = np.diagonal(d12_updown, axis1=-2, axis2=-1)[..., np.arange(M) * (M + 1)]
    value = U * np.sum(diag, axis=-1)
    return np.real(value)


def interaction_matrix(n_sites: int, U: float) -> np.ndarray:
    """On-site interaction in the mixed-spin composite basis (diagonal)."""
    w = np.zeros(n_sites * n_sites)
    w[np.arange(n_sites) * (n_sites + 1)] = U
    return np.diag(w)


def correlation_energy_trace(d12_updown: np.ndarray, U: float) -> np.ndarray:
    """Same quantity as :func:`correlation_energy`, via ``Tr(W Δ)``."""
    M = int(round(math.sqrt(d12_updown.shape[-1])))
    W = interaction_matrix(M, U)
    return np.real(np.einsum("qp,...pq->...", W, d12_updown))


def e_pot0(D1_initial: np.ndarray, params: ModelParams) -> float:
    """Trap energy ``Σ_{i,s} V_i D1_s[i, i]`` of the pre-quench state."""
    occ = np.real(np.diagonal(D1_initial[0]) + np.diagonal(D1_initial[1]))
    return float(trap_potentials(params) @ occ)


def pearson(times, f, g, t0: float = 10.0, T: float = 50.0, var_tol: float = VARIANCE_TOL) -> float:
    """Trapezoid-weighted Pearson coefficient of two series on ``[t0, T]``.

    Returns ``nan`` when either series has (numerically) zero variance.
    """
    sl = _window(times, t0, T)
    f = np.asarray(f, dtype=float)[sl]
    g = np.asarray(g, dtype=float)[sl]
    w = _trapezoid_weights(len(f))
    df = f - w @ f
    dg = g - w @ g
    vf, vg = w @ (df * df), w @ (dg * dg)
    if vf <= var_tol or vg <= var_tol:
        return math.nan
    return float(np.clip((w @ (df * dg)) / math.sqrt(vf * vg), -1.0, 1.0))


@dataclass
class RegimeIndicators:
    U: float
    V: float
    buildup: float
    e_corr_avg: float
    e_pot0: float
    ratio: float
    pearson_uu: float
    pearson_ud: float
    strong_buildup: bool
    strong_corr_energy: bool
    pearson_valid: bool

    FIELDS = ("U", "V", "buildup", "e_corr_avg", "e_pot0", "ratio", "pearson_uu", "pearson_ud",
              "strong_buildup", "strong_corr_energy", "pearson_valid")

    @property
    def buildup_regime(self) -> str:
        return "strong" if self.strong_buildup else "moderate"

    def as_dict(self) -> dict:
        return asdict(self)


def classify(buildup: float, ratio: float, buildup_threshold: float = BUILDUP_THRESHOLD,
             ratio_threshold: float = RATIO_THRESHOLD) -> tuple[bool, bool]:
    """Threshold flags ``(strong three-particle buildup, strong correlation-energy rise)``."""
    strong_ratio = bool(np.isfinite(ratio) and ratio > ratio_threshold)
    return bool(buildup > buildup_threshold), strong_ratio


def regime_indicators(series, params: ModelParams, T: float = 50.0, t0: float = 10.0,
                      buildup_threshold: float = BUILDUP_THRESHOLD,
                      ratio_threshold: float = RATIO_THRESHOLD) -> RegimeIndicators:
    """All scalar diagnostics of one quench from its :class:`CumulantSeries`."""
    times = series.times
    buildup = correlation_buildup(times, series.norm("d123k"), T)
    e_avg = time_average(times, series.correlation_energy, 0.0, T)
    ep = e_pot0(series.one_rdm0, params)
    ratio = e_avg / ep if ep != 0 else math.nan
    k = series.norm("d123k")
    p_uu = pearson(times, series.norm("d12_upup"), k, t0, T)
    p_ud = pearson(times, series.norm("d12_updown"), k, t0, T)
    strong_b, strong_r = classify(buildup, ratio, buildup_threshold, ratio_threshold)
    return RegimeIndicators(
        U=params.U, V=params.V, buildup=buildup, e_corr_avg=e_avg, e_pot0=ep, ratio=ratio,
        pearson_uu=p_uu, pearson_ud=p_ud, strong_buildup=strong_b, strong_corr_energy=strong_r,
        pearson_valid=bool(np.isfinite(p_uu) and np.isfinite(p_ud)),
    )


def collision_term(D123_uud: np.ndarray, U: float, n_sites: int) -> np.ndarray:
    """``Tr_3 [W_13 + W_23, D_123]`` for the mixed-spin block.

    Needs the up-down-down block as well as up-down-up; the former is read off
    the up-up-down tensor through the up/down exchange symmetry of an
    ``N↑ = N↓`` spin-symmetric state.
    """
    M = n_sites
    T6 = D123_uud.reshape((M,) * 6)
    j1, j2, i1, i2 = np.meshgrid(*(np.arange(M),) * 4, indexing="ij")
    # <a†_{y1↑} a†_{y2↓} a†_{y3↓} a_{x3↓} a_{x2↓} a_{x1↑}> = T[(x2 x3 x1),(y2 y3 y1)]
    # <a†_{y1↑} a†_{y2↓} a†_{y3↑} a_{x3↑} a_{x2↓} a_{x1↑}> = T[(x1 x3 x2),(y1 y3 y2)]
    w13 = T6[j2, j1, j1, i2, j1, i1] - T6[j2, i1, j1, i2, i1, i1]
    w23 = T6[j1, j2, j2, i1, j2, i2] - T6[j1, i2, j2, i1, i2, i2]
    return (U * (w13 + w23)).reshape(M * M, M * M)


def two_body_generator(n_sites: int, U: float, J: float = 1.0) -> np.ndarray:
    """``h⊗1 + 1⊗h + W`` on the mixed-spin composite basis (post-quench ``h``)."""
    h = hopping_matrix(n_sites, J)
    eye = np.eye(n_sites)
    return np.kron(h, eye) + np.kron(eye, h) + interaction_matrix(n_sites, U)


def bbgky_residual(D12_prev: np.ndarray, D12: np.ndarray, D12_next: np.ndarray, D123_uud: np.ndarray,
                   dt: float, U: float, J: float = 1.0) -> float:
    """Frobenius norm of the central-difference residual of the 2RDM equation of motion.

    ``i dD/dt - [h1 + h2 + W12, D] - Tr_3[W13 + W23, D123]`` at the middle snapshot.
    """
    if D12_prev is None or D12_next is None:
        raise ValueError("central difference needs both neighbouring snapshots")
    if not dt > 0:
        raise ValueError("dt must be positive")
    M = int(round(math.sqrt(D12.shape[-1])))
    K = two_body_generator(M, U, J)
    lhs = 1j * (D12_next - D12_prev) / (2 * dt)
    rhs = K @ D12 - D12 @ K + collision_term(D123_uud, U, M)
    return float(np.linalg.norm(lhs - rhs))
