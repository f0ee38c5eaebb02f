"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch
from torch import nn


def directional_gradient_check(module: nn.Module, loss_fn: Callable[[], torch.Tensor], n_directions: int = 20,
                               eps: float = 1e-6, seed: int = 0) -> np.ndarray:
    """Relative errors between autograd and central differences along random directions.

    ``loss_fn`` evaluates the scalar loss with the module's current
    parameters.  Each direction is a unit vector in the flattened parameter
    space; the relative error is ``|g·v - fd| / max(|g·v|, |fd|, tiny)``.
    Run in float64 for meaningful results.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    g = torch.cat([gr.reshape(-1) for gr in grads]).detach()
    theta0 = [p.detach().clone() for p in params]
    gen = torch.Generator().manual_seed(seed)
    errors = []
    for _ in range(n_directions):
        v = torch.randn(g.shape, generator=gen, dtype=g.dtype)
        v /= torch.linalg.norm(v)
        values = []
        for sgn in (1.0, -1.0):
            with torch.no_grad():
                offset = 0
                for p, p0 in zip(params, theta0):
                    n = p.numel()
                    p.copy_(p0 + sgn * eps * v[offset:offset + n].reshape(p.shape))
                    offset += n
                values.append(float(loss_fn()))
        with torch.no_grad():
            for p, p0 in zip(params, theta0):
                p.copy_(p0)
        fd = (values[0] - values[1]) / (2 * eps)
        an = float(g @ v)
        errors.append(abs(an - fd) / max(abs(an), abs(fd), 1e-300))
    return np.array(errors)
