"""MLP vector field ``dx/dt = F(x)`` on the packed 2RDM."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

ACTIVATIONS = {
    "tanh": (nn.Tanh, 1.0),
    "relu": (nn.ReLU, 1.0),
    "softplus": (nn.Softplus, 1.0),
    "silu": (nn.SiLU, 1.1),
    "identity": (nn.Identity, 1.0),
}


class NonFiniteError(FloatingPointError):
    pass


class VectorField(nn.Module):
    """Fully connected network ``[width, *hidden, width]``.

    Parameters
    ----------
    width : int
        Input and output dimension (1296 for the packed 2RDM).
    hidden : sequence of int
        Hidden layer widths; ``()`` gives a single affine layer.
    activation : str
        One of :data:`ACTIVATIONS`, applied after every hidden layer.
    """

    def __init__(self, width: int = 1296, hidden: Sequence[int] = (2048, 2048), activation: str = "tanh"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = [int(width), *map(int, hidden), int(width)]
        self.activation = activation
        act, _ = ACTIVATIONS[activation]
        layers: list[nn.Module] = []
        for k, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            layers.append(nn.Linear(a, b))
            if k < len(self.widths) - 2:
                layers.append(act())
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def linears(self) -> list[nn.Linear]:
        return [m for m in self.net if isinstance(m, nn.Linear)]

    def zero_(self) -> "VectorField":
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def parameter_norm(self) -> float:
        with torch.no_grad():
            return float(torch.sqrt(sum((p.double() ** 2).sum() for p in self.parameters())))

    def lipschitz_bound(self) -> float:
        """Product of layer spectral norms times activation Lipschitz constants."""
        _, lip = ACTIVATIONS[self.activation]
        bound = 1.0
        with torch.no_grad():
            for k, lin in enumerate(self.linears()):
                bound *= float(torch.linalg.matrix_norm(lin.weight.double(), ord=2))
                if k < len(self.widths) - 2:
                    bound *= lip
        return bound

    def checked(self, x: torch.Tensor) -> torch.Tensor:
        out = self(x)
        if not torch.isfinite(out).all():
            raise NonFiniteError(
                f"vector field produced non-finite values (|theta| = {self.parameter_norm():.3e}, "
                f"max |x| = {float(x.detach().abs().max()):.3e})")
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name.replace(".", "_"): p.detach().double().cpu().numpy()
                for name, p in self.state_dict().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        sd = self.state_dict()
        new = {}
        for name, ref in sd.items():
            new[name] = torch.as_tensor(arrays[name.replace(".", "_")], dtype=ref.dtype)
        self.load_state_dict(new)
