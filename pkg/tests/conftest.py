import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hubbard_node.hilbert import build_basis
from hubbard_node.model import ModelParams
from hubbard_node.pipeline import quench
from hubbard_node.propagator import EvolutionSpec


@pytest.fixture(scope="session")
def basis6():
    return build_basis(6, 3, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def short_quench():
    """(U, V) = (1, 1) quench sampled every 0.5 up to t = 5."""
    return quench(ModelParams(U=1.0, V=1.0), EvolutionSpec(dt=0.01, t_end=5.0, stride=50))


@pytest.fixture(scope="session")
def free_quench():
    return quench(ModelParams(U=0.0, V=1.0), EvolutionSpec(dt=0.01, t_end=5.0, stride=50))


def random_state(basis, rng):
    psi = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return psi / np.linalg.norm(psi)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
