"""Scores for predicted 2RDM trajectories against the exact ones."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rdm
from .dataset import TrajectoryData, unpack

#: Every entry of a valid ↑↓ 2RDM block obeys |D_pq| <= 1: diagonals are pair
#: occupations in [0, 1] and off-diagonals are bounded by Cauchy-Schwarz.
DEFAULT_GUARD = 1.0
GUARD_TARGETS = ("physical", "normalized")
VARIANCE_TOL = 1e-20
REPORT_COLUMNS = ("U", "V", "t0", "horizon", "pearson_packed", "delta_n1", "delta_d1",
                  "divergence_time", "failed_at")
CURVE_COLUMNS = ("t_pred", "pearson", "mse", "psd_D", "psd_Q", "tr_D", "tr_Q")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    va, vb = float(a @ a), float(b @ b)
    if va <= VARIANCE_TOL * len(a) or vb <= VARIANCE_TOL * len(b):
        return math.nan
    return float(np.clip((a @ b) / math.sqrt(va * vb), -1.0, 1.0))


def prediction_pearson(pred: np.ndarray, target: np.ndarray, per_feature: bool = False) -> float:
    """Pearson coefficient of two aligned ``(time, width)`` series.

    By default all ``time × width`` pairs are pooled.  ``per_feature=True``
    averages the coefficients of the individual columns instead, skipping
    columns without variance.  Returns ``nan`` when undefined.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if not per_feature:
        return _pearson(pred.ravel(), target.ravel())
    values = [_pearson(pred[:, k], target[:, k]) for k in range(pred.shape[1])]
    values = [v for v in values if math.isfinite(v)]
    return float(np.mean(values)) if values else math.nan


def occupation_deviation(times, pred, target, t0: float | None = None, T: float | None = None,
                         site: int | None = None) -> float:
    """``∫|target - pred| dt / ∫ target dt`` over ``[t0, t0 + T]`` (trapezoidal).

    ``pred`` and ``target`` are ``(time,)`` series or ``(time, sites)`` with
    ``site`` selecting a column.  ``t0`` defaults to the first time, ``T``
    to the whole series.  A vanishing denominator gives ``nan``.
    """
    times = np.asarray(times, dtype=float)
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if site is not None:
        pred, target = pred[:, site], target[:, site]
    t0 = times[0] if t0 is None else t0
    stop = times[-1] if T is None else t0 + T
    eps = 1e-9 * max(1.0, abs(stop))
    sel = (times >= t0 - eps) & (times <= stop + eps)
    if sel.sum() < 2:
        raise ValueError("integration window holds fewer than two samples")
    t = times[sel]
    num = np.trapezoid(np.abs(target[sel] - pred[sel]), t)
    den = np.trapezoid(target[sel], t)
    if abs(den) <= 1e-300:
        return math.nan
    return float(num / den)


def divergence_time(times, values, guard: float = DEFAULT_GUARD, failed_at: float | None = None) -> float | None:
    """First time any component leaves ``[-guard, guard]``, or the failure time.

    Non-finite values count as leaving the band.  ``None`` if the series
    stays bounded and integration did not fail.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    bad = ~np.all(np.isfinite(values) & (np.abs(values) <= guard), axis=tuple(range(1, values.ndim)))
    hits = np.flatnonzero(bad)
    first = float(times[hits[0]]) if len(hits) else None
    if failed_at is not None and (first is None or failed_at < first):
        return float(failed_at)
    return first


def occupations_from_packed(packed: np.ndarray, n_up: int = 3, n_down: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Site and doublon occupations from physical packed 2RDM rows."""
    D12 = unpack(packed)
    D12 = 0.5 * (D12 + np.conj(np.swapaxes(D12, -1, -2)))
    return rdm.occupations(D12=D12, n_up=n_up, n_down=n_down)


def constraint_values(packed: np.ndarray, n_sites: int = 6, n_up: int = 3, n_down: int = 3) -> dict[str, np.ndarray]:
    """Per-row positivity and trace violations of physical packed 2RDMs."""
    D12 = unpack(packed)
    D1 = rdm.one_rdm_from_updown(D12, n_up, n_down)
    Q = rdm.two_hole_rdm(D12, D1)
    out = {}
    for name, mats in (("D", D12), ("Q", Q)):
        lam = np.linalg.eigvalsh(mats)
        out[f"psd_{name}"] = np.sum(np.where(lam < -1e-12, lam, 0.0) ** 2, axis=-1)
    out["tr_D"] = (np.real(np.trace(D12, axis1=-2, axis2=-1)) - n_up * n_down) ** 2
    target_q = (n_sites - n_up) * (n_sites - n_down)
    out["tr_Q"] = (np.real(np.trace(Q, axis1=-2, axis2=-1)) - target_q) ** 2
    return out


@dataclass
class PredictionReport:
    """Scores of one forecast, one entry per evaluated horizon."""

    U: float
    V: float
    t0: float
    horizons: list[float]
    pearson_packed: list[float]
    delta_n1: list[float]
    delta_d1: list[float]
    divergence_time: float | None
    failed_at: float | None = None
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {"U": self.U, "V": self.V, "t0": self.t0, "horizon": h, "pearson_packed": p,
             "delta_n1": dn, "delta_d1": dd,
             "divergence_time": math.nan if self.divergence_time is None else self.divergence_time,
             "failed_at": math.nan if self.failed_at is None else self.failed_at}
            for h, p, dn, dd in zip(self.horizons, self.pearson_packed, self.delta_n1, self.delta_d1)
        ]

    def as_dict(self) -> dict:
        return asdict(self)


def _target_block(data: TrajectoryData, t0: float, n: int) -> tuple[int, np.ndarray]:
    start = int(round((t0 - data.times[0]) / data.dt))
    return start, data.packed[start:start + n]


def evaluate_prediction(data: TrajectoryData, times: np.ndarray, packed_pred: np.ndarray, t0: float,
                        horizons=(20.0, 25.0), site: int = 0, guard: float = DEFAULT_GUARD,
                        normalized_pred: np.ndarray | None = None, failed_at: float | None = None,
                        per_feature: bool = False, guard_on: str = "physical") -> PredictionReport:
    """Score physical packed predictions starting at ``t0`` against ``data``.

    ``times`` are prediction times ``t - t0`` on the data grid.  Horizons the
    forecast (or the data) does not reach score ``nan``.  The divergence
    guard band ``[-guard, guard]`` is applied to the physical values by
    default, or to ``normalized_pred`` with ``guard_on="normalized"``.
    """
    if guard_on not in GUARD_TARGETS:
        raise ValueError(f"guard_on must be one of {GUARD_TARGETS}")
    if guard_on == "normalized" and normalized_pred is None:
        raise ValueError("guard_on='normalized' needs normalized_pred")
    times = np.asarray(times, dtype=float)
    packed_pred = np.asarray(packed_pred, dtype=float)
    start, target = _target_block(data, t0, len(times))
    n_pred, d_pred = occupations_from_packed(packed_pred, data.n_up, data.n_down)
    pear, dn, dd = [], [], []
    for h in horizons:
        n = int(round(h / data.dt)) + 1
        if n > len(times) or n > len(target):
            pear.append(math.nan), dn.append(math.nan), dd.append(math.nan)
            continue
        pear.append(prediction_pearson(packed_pred[:n], target[:n], per_feature))
        tt = times[:n]
        dn.append(occupation_deviation(tt, n_pred[:n], data.occupations[start:start + n], site=site))
        dd.append(occupation_deviation(tt, d_pred[:n], data.doublons[start:start + n], site=site))
    guarded = normalized_pred if guard_on == "normalized" else packed_pred
    div = divergence_time(times, guarded, guard, failed_at)
    return PredictionReport(data.U, data.V, t0, list(map(float, horizons)), pear, dn, dd, div, failed_at)


def horizon_curves(data: TrajectoryData, times: np.ndarray, packed_pred: np.ndarray, t0: float,
                   every: float = 1.0, normalized_pred: np.ndarray | None = None) -> list[dict]:
    """Quality versus prediction length: cumulative Pearson, pointwise error and violations."""
    times = np.asarray(times, dtype=float)
    start, target = _target_block(data, t0, len(times))
    m = min(len(times), len(target))
    stride = max(1, int(round(every / data.dt)))
    idx = np.arange(stride, m, stride)
    viol = constraint_values(packed_pred[idx], data.n_sites, data.n_up, data.n_down) if len(idx) else {}
    if normalized_pred is not None and data.normalizer is not None:
        err = np.sum((normalized_pred[idx] - data.normalizer.apply(target[idx])) ** 2, axis=-1)
    else:
        err = np.sum((packed_pred[idx] - target[idx]) ** 2, axis=-1)
    rows = []
    for k, i in enumerate(idx):
        rows.append({"t_pred": float(times[i]),
                     "pearson": prediction_pearson(packed_pred[: i + 1], target[: i + 1]),
                     "mse": float(err[k]), **{name: float(v[k]) for name, v in viol.items()}})
    return rows
