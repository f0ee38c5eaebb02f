from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hubbard_node.hilbert import (
    ANNIHILATE,
    CREATE,
    DOWN,
    UP,
    apply_ops,
    apply_pair,
    basis_vector,
    build_basis,
    operator_matrix,
    string_matrix,
)


def test_half_filled_six_site_sector_has_400_states(basis6):
    assert basis6.dim == 400
    assert len(set(basis6.packed.tolist())) == 400


@given(st.integers(1, 5).flatmap(lambda m: st.tuples(st.just(m), st.integers(0, m), st.integers(0, m))))
@settings(max_examples=30, deadline=None)
def test_dimension_is_product_of_binomials(args):
    M, nu, nd = args
    assert build_basis(M, nu, nd).dim == comb(M, nu) * comb(M, nd)


@pytest.mark.parametrize("args", [(0, 0, 0), (3, 4, 0), (3, 0, -1)])
def test_invalid_sector_rejected(args):
    with pytest.raises(ValueError):
        build_basis(*args)


class TestCanonicalAnticommutation:
    """{a_x, a†_y} = δ_xy and {a_x, a_y} = 0 on every sector of a 3-site chain."""

    modes = [(s, spin) for spin in (UP, DOWN) for s in range(3)]

    @pytest.mark.parametrize("sector", [(1, 1), (2, 1), (1, 2), (2, 2)])
    def test_creation_annihilation(self, sector):
        basis = build_basis(3, *sector)
        for x in self.modes:
            for y in self.modes:
                t1, m1 = string_matrix(basis, [(ANNIHILATE, *x), (CREATE, *y)])
                t2, m2 = string_matrix(basis, [(CREATE, *y), (ANNIHILATE, *x)])
                total = sum(m.toarray() for m in (m1, m2) if m is not None)
                expected = np.eye(basis.dim) if x == y else np.zeros_like(total)
                np.testing.assert_array_equal(total, expected)

    @pytest.mark.parametrize("sector", [(2, 2), (3, 3)])
    def test_annihilators_anticommute(self, sector):
        basis = build_basis(3, *sector)
        for x in self.modes:
            for y in self.modes:
                _, m1 = string_matrix(basis, [(ANNIHILATE, *x), (ANNIHILATE, *y)])
                _, m2 = string_matrix(basis, [(ANNIHILATE, *y), (ANNIHILATE, *x)])
                np.testing.assert_array_equal((m1 + m2).toarray(), 0.0)


def test_down_operator_counts_all_up_particles():
    """Mode order is all up sites, then all down sites."""
    basis = build_basis(3, 1, 0)
    psi = basis_vector(basis, [2], [])
    target, out = apply_ops(basis, [(CREATE, 0, DOWN)], psi)
    assert (target.n_up, target.n_down) == (1, 1)
    np.testing.assert_allclose(out, -basis_vector(target, [2], [0]))


def test_up_operator_sign_from_lower_sites():
    basis = build_basis(3, 1, 0)
    psi = basis_vector(basis, [0], [])
    target, out = apply_ops(basis, [(CREATE, 2, UP)], psi)
    np.testing.assert_allclose(out, -basis_vector(target, [0, 2], []))


def test_number_operator_counts_occupation(basis6, rng):
    _, mat = string_matrix(basis6, [(CREATE, 4, "down"), (ANNIHILATE, 4, "down")])
    np.testing.assert_array_equal(mat.diagonal(), basis6.occupations(DOWN)[:, 4])


def test_leaving_the_sector_returns_none():
    basis = build_basis(2, 0, 1)
    assert operator_matrix(basis, ANNIHILATE, 0, UP) == (None, None)
    target, vec = apply_ops(basis, [(ANNIHILATE, 0, UP)], np.ones(basis.dim))
    assert target is None and not vec.any()


def test_apply_pair_rejects_sector_change(basis6):
    with pytest.raises(ValueError):
        apply_pair(basis6, [(CREATE, 0, UP), (ANNIHILATE, 0, DOWN)], np.ones(basis6.dim))


def test_site_out_of_range(basis6):
    with pytest.raises(ValueError):
        operator_matrix(basis6, CREATE, 6, UP)
