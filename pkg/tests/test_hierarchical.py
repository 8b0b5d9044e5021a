import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rglab.hierarchical import (FINAL, HierGeometry, coalescence_scale, covariance_block_matrix,
                                covariance_entry, gamma_j, gff_sample_tree, green_diag,
                                hier_bubble, hier_laplacian_entry, moments, vartheta)


def block_average(geom, j, exact=False):
    """Q_j as a dense matrix, built from integer division of coordinates."""
    s = geom.sites() // geom.L ** j
    same = np.all(s[:, None, :] == s[None, :, :], axis=-1)
    w = Fraction(1, geom.L ** (geom.d * j)) if exact else geom.L ** (-geom.d * j)
    return np.where(same, w, 0 * w).astype(object if exact else float)


def dense(fn, geom):
    S = [tuple(x) for x in geom.sites()]
    return np.array([[fn(x, y) for y in S] for x in S], dtype=object)


@pytest.mark.parametrize("d,L,N", [(1, 2, 3), (2, 2, 2), (1, 3, 2), (1, 2, 1)])
def test_laplacian_matches_block_projections_exactly(d, L, N):
    g = HierGeometry(d, L, N)
    Q = [block_average(g, j, exact=True) for j in range(N + 1)]
    lap = sum(-Fraction(1, L ** (2 * (j - 1))) * (Q[j - 1] - Q[j]) for j in range(1, N + 1))
    got = dense(lambda x, y: hier_laplacian_entry(x, y, g, exact=True), g)
    assert (got == lap).all()


@pytest.mark.parametrize("d,L,N,m2", [(1, 2, 3, 0.3), (2, 2, 2, 1.0), (1, 3, 2, 0.05), (2, 2, 3, 0.7)])
def test_decomposition_inverts_operator(d, L, N, m2):
    g = HierGeometry(d, L, N)
    C = sum(dense(lambda x, y: covariance_entry(j, x, y, m2, g), g) for j in range(1, N + 1))
    C = C.astype(float) + 1 / (m2 * L ** (d * N))
    lap = dense(lambda x, y: hier_laplacian_entry(x, y, g), g).astype(float)
    target = np.linalg.inv(-lap + m2 * np.eye(g.volume))
    assert np.max(np.abs(C - target)) < 1e-12


def test_final_covariance_needs_mass():
    g = HierGeometry(1, 2, 2)
    with pytest.raises(ValueError):
        covariance_entry(FINAL, (0,), (1,), 0, g)


@given(st.integers(1, 2), st.integers(2, 3), st.integers(1, 3),
       st.fractions(min_value=0, max_value=5, max_denominator=50))
def test_zero_sum_and_symmetry_exact(d, L, N, m2):
    g = HierGeometry(d, L, N)
    if g.volume > 64:
        return
    S = [tuple(x) for x in g.sites()]
    for j in range(1, N + 1):
        row = [covariance_entry(j, S[0], y, m2, g) for y in S]
        assert sum(row) == 0
        k = len(S) - 1
        assert covariance_entry(j, S[1 % len(S)], S[k], m2, g) == covariance_entry(j, S[k], S[1 % len(S)], m2, g)


@pytest.mark.parametrize("d,L", [(1, 2), (2, 2), (4, 2), (2, 3)])
def test_moments_equal_block_sums_exact(d, L):
    N = 3 if L ** (d * 3) <= 512 else 2
    g = HierGeometry(d, L, N)
    S = [tuple(x) for x in g.sites()]
    for j in range(N):
        col = [covariance_entry(j + 1, S[0], y, 0, g) for y in S]
        t = moments(j, 0, d, L)
        assert t.c == col[0]
        assert t.c2 == sum(c ** 2 for c in col)
        assert t.c3 == sum(c ** 3 for c in col)
        assert t.c4 == sum(c ** 4 for c in col)


def test_moments_float_mass():
    d, L, N, m2 = 2, 2, 3, 0.37
    g = HierGeometry(d, L, N)
    S = [tuple(x) for x in g.sites()]
    for j in range(N):
        col = np.array([covariance_entry(j + 1, S[0], y, m2, g) for y in S])
        t = moments(j, m2, d, L)
        for k, v in ((2, t.c2), (3, t.c3), (4, t.c4)):
            assert abs(np.sum(col ** k) - v) <= 1e-12 * abs(v)


def test_green_diag_d4_is_five_quarters():
    val, tail = green_diag(0, 4, 2, jmax=200)
    assert abs(val - 1.25) < 1e-14 and tail < 1e-50


def test_green_diag_finite_volume_matches_dense():
    g = HierGeometry(2, 2, 3)
    lap = dense(lambda x, y: hier_laplacian_entry(x, y, g), g).astype(float)
    G = np.linalg.inv(-lap + np.eye(g.volume))
    val, _ = green_diag(1, 2, 2, N=3)
    assert abs(float(val) - G[0, 0]) < 1e-12


def test_bubble_log_asymptote():
    b = hier_bubble(1e-12, 4, 2)
    assert abs(b.log_ratio / b.asymptote - 1) < 0.03
    assert abs(b.asymptote - 15 / 16 / math.log(2)) < 1e-15


def test_block_matrix_zero_mode():
    M = covariance_block_matrix(2, 0.1, 2, 2)
    ev = np.linalg.eigvalsh(M)
    assert abs(ev[0]) < 1e-15 and np.all(ev[1:] > 0)


def test_vartheta_decay():
    assert vartheta(0, 0.0, 2) == 1.0
    assert vartheta(40, 2.0 ** -20, 2) < vartheta(20, 2.0 ** -20, 2)


def test_coalescence():
    g = HierGeometry(2, 2, 3)
    assert coalescence_scale((0, 0), (1, 0), g) == 1
    assert coalescence_scale((0, 0), (0, 7), g) == 3
    assert gamma_j(1, 0, 2) == 1


def test_sampler_covariance():
    g = HierGeometry(1, 2, 2)
    m2 = 0.5
    phi = gff_sample_tree(g, m2, seed=3, count=200000)
    lap = dense(lambda x, y: hier_laplacian_entry(x, y, g), g).astype(float)
    target = np.linalg.inv(-lap + m2 * np.eye(4))
    emp = phi.T @ phi / len(phi)
    assert np.max(np.abs(emp - target)) < 0.03
