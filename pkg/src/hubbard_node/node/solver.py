"""Explicit integrators for the learned vector field (torch, autograd-friendly)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_ERR = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))
# midpoint of the continuous extension (Shampine 1986)
_MID = (
    6025192743 / 30085553152 / 2, 0.0, 51252292925 / 65400821598 / 2,
    -2691868925 / 45128329728 / 2, 187940372067 / 1594534317056 / 2,
    -1776094331 / 19743644256 / 2, 11237099 / 235043384 / 2,
)

Field = Callable[[torch.Tensor], torch.Tensor]


class IntegrationError(RuntimeError):
    """Raised when the solver cannot continue; carries the time reached."""

    def __init__(self, message: str, t_reached: float, states: torch.Tensor | None = None):
        super().__init__(f"{message} (t = {t_reached:.6g})")
        self.t_reached = t_reached
        self.states = states


@dataclass(frozen=True)
class SolverConfig:
    """``method`` is ``"dopri5"`` (adaptive) or ``"rk4"`` (fixed ``step``)."""

    method: str = "dopri5"
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 200_000
    step: float | None = None

    def __post_init__(self):
        if self.method not in ("dopri5", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")

    def to_json(self) -> dict:
        return asdict(self)


def _grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid.detach().cpu() if isinstance(t_grid, torch.Tensor) else t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("t_grid must be a non-empty 1-d sequence")
    if np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be ascending")
    return t


def _check(x: torch.Tensor, t: float, done: list[torch.Tensor]) -> None:
    if not torch.isfinite(x).all():
        raise IntegrationError("non-finite state", t, torch.stack(done) if done else None)


def rk4(f: Field, x0: torch.Tensor, t_grid, step: float | None = None) -> torch.Tensor:
    """Classical RK4; each output interval is split into equal substeps no longer than ``step``."""
    t = _grid(t_grid)
    out = [x0]
    x = x0
    for a, b in zip(t[:-1], t[1:]):
        span = b - a
        n = 1 if step is None or span <= step else math.ceil(span / step - 1e-9)
        h = span / n
        for _ in range(n):
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check(x, float(b), out)
        out.append(x)
    return torch.stack(out)


def _rms(x: torch.Tensor) -> float:
    return float(torch.sqrt(torch.mean(x.detach() ** 2)))


def _initial_step(f, x0, f0, rtol, atol) -> float:
    scale = atol + rtol * x0.detach().abs()
    d0, d1 = _rms(x0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = f(x0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri5(f: Field, x0: torch.Tensor, t_grid, rtol: float = 1e-6, atol: float = 1e-8,
           max_steps: int = 200_000) -> torch.Tensor:
    """Adaptive Dormand-Prince 5(4) with quartic dense output at ``t_grid``."""
    t = _grid(t_grid)
    out = [x0]
    if len(t) == 1:
        return torch.stack(out)
    x, tc = x0, float(t[0])
    k_first = f(x)
    h = _initial_step(f, x0, k_first, rtol, atol)
    nxt = 1
    steps = 0
    while nxt < len(t):
        if steps >= max_steps:
            raise IntegrationError(f"step limit {max_steps} reached", tc, torch.stack(out))
        steps += 1
        h = min(h, float(t[-1]) - tc) if float(t[-1]) - tc > 0 else h
        ks = [k_first]
        for i in range(1, 7):
            xi = x + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
            ks.append(f(xi))
        x_new = x + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_ERR, ks) if e != 0.0)
        if not torch.isfinite(x_new).all():
            if h < 1e-12:
                raise IntegrationError("non-finite state", tc, torch.stack(out))
            h *= 0.2
            continue
        scale = atol + rtol * torch.maximum(x.detach().abs(), x_new.detach().abs())
        enorm = _rms(err / scale)
        if enorm <= 1.0:
            t_new = tc + h
            x_mid = x + h * sum(c * k for c, k in zip(_MID, ks) if c != 0.0)
            f0, f1 = ks[0], ks[6]
            while nxt < len(t) and t[nxt] <= t_new + 1e-12 * max(1.0, abs(t_new)):
                s = (float(t[nxt]) - tc) / h
                out.append(_quartic(x, x_new, x_mid, f0, f1, h, s))
                nxt += 1
            x, tc, k_first = x_new, t_new, ks[6]
        factor = 10.0 if enorm == 0 else min(10.0, max(0.2, 0.9 * enorm ** (-1 / 5)))
        if enorm > 1.0:
            factor = min(1.0, factor)
        h *= factor
        if h < 1e-12 * max(1.0, abs(tc)):
            raise IntegrationError("step size underflow", tc, torch.stack(out))
    return torch.stack(out)


def _quartic(y0, y1, ymid, f0, f1, h, s):
    a = 2 * h * (f1 - f0) - 8 * (y1 + y0) + 16 * ymid
    b = h * (5 * f0 - 3 * f1) + 18 * y0 + 14 * y1 - 32 * ymid
    c = h * (f1 - 4 * f0) - 11 * y0 - 5 * y1 + 16 * ymid
    d = h * f0
    return (((a * s + b) * s + c) * s + d) * s + y0


def integrate(f: Field, x0: torch.Tensor, t_grid, config: SolverConfig = SolverConfig()) -> torch.Tensor:
    """States at ``t_grid`` (first entry is ``x0``), shape ``(len(t_grid), *x0.shape)``."""
    if config.method == "rk4":
        return rk4(f, x0, t_grid, config.step)
    return dopri5(f, x0, t_grid, config.rtol, config.atol, config.max_steps)
