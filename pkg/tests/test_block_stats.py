import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_and_basis, kernel
from wander.block_stats import (
    ContractionError,
    CovMatrixC,
    WeightedSeq,
    analytic_cov,
    c_entry,
    c_entry_basis,
    confined_path,
    discrete_cov,
    eta_functionals,
    eta_vector,
    identity_cov,
    in_block,
    lambda_asymptotics,
    operator_norm,
    residual_orthogonality,
    seq_weights,
    solve_delta,
    solve_delta_batch,
    solve_delta_dense,
    v_batch,
    v_discrete,
    v_from_path,
    weighted_offdiag_sum,
)
from wander.gaussian_core import GridSpec, cov_matrix, sample_field
from wander.polymer_mc import sample_paths


def test_triangle_entries_by_hand():
    # w = 2 and 2s >= w: C(0) = 1 - 1/(3s), C(1) = 1/(6s), C(d >= 2) = 0
    k = kernel("triangle", 2.0)
    for t in [10.0, 100.0]:
        s = t**0.55
        for method in ["fbar_form", "quadrature2d"]:
            assert c_entry(k, t, 0.55, 0, method) == pytest.approx(1 - 1 / (3 * s), rel=1e-10)
            assert c_entry(k, t, 0.55, 1, method) == pytest.approx(1 / (6 * s), rel=1e-10)
            assert c_entry(k, t, 0.55, 2, method) == 0.0


@pytest.mark.parametrize("family,param", [("cauchy_fast", 1.0), ("cauchy_slow", 0.25)])
def test_entries_two_routes(family, param):
    k = kernel(family, param)
    for lag in [0, 1, 4]:
        a = c_entry(k, 10.0, 0.55, lag, "fbar_form")
        b = c_entry(k, 10.0, 0.55, lag, "quadrature2d")
        assert a == pytest.approx(b, rel=1e-8)


def test_entry_arguments():
    with pytest.raises(ValueError):
        c_entry(kernel(), 10.0, 0.55, -1)
    with pytest.raises(ValueError):
        c_entry(kernel(), 10.0, 0.55, 0, "simpson")


def test_discrete_cov_matches_closed_form_and_analytic():
    g, b = grid_and_basis(t=20.0, band_N=8)
    c = discrete_cov(g, b)
    closed = np.array([c_entry_basis(b, g.t, g.alpha, d) for d in range(c.size)])
    assert np.max(np.abs(c.first_row - closed)) <= 1e-12
    a = analytic_cov(kernel(), g)
    # the reconstruction error of Q bounds the entry difference
    assert np.max(np.abs(c.first_row - a.first_row)) <= 2 * b.error_bound


def test_discrete_cov_equals_functional_covariance():
    g, b = grid_and_basis(t=20.0, band_N=4)
    etas = eta_functionals(g, b)
    assert np.allclose(cov_matrix(etas), discrete_cov(g, b).matrix, atol=1e-13)


def test_cov_is_positive_definite():
    for family, param in [("cauchy_fast", 1.0), ("cauchy_slow", 0.25), ("triangle", 2.0)]:
        g = GridSpec(t=100.0, n_t=20, band_N=16)
        c = analytic_cov(kernel(family, param), g)
        assert c.min_eig() > 0
        assert c.lam > 1


def test_cov_source_checked():
    with pytest.raises(ValueError):
        CovMatrixC(np.ones(3), "magic", 1.0, 0.55)


def test_lambda_asymptotics_shape():
    rows = lambda_asymptotics(kernel(), 0.55, [10.0, 100.0, 1000.0])
    assert rows.shape == (3, 3)
    assert np.all(rows[:, 1] > 1)
    with pytest.raises(ValueError):
        lambda_asymptotics(kernel(), 0.55, [5.0, 100.0])


def test_weighted_seq():
    v = WeightedSeq(np.array([1.0, -2.0, 3.0, 0.5]), 0.5, 1, -1)
    assert v[1] == 3.0
    assert list(v.indices) == [-1, 0, 1, 2]
    assert v.norm() == pytest.approx(3 + 2 + 1 * 2**0.5 + 0.5)
    assert v.offcenter() == pytest.approx(v.norm() - 3)
    assert np.all(seq_weights(np.arange(-2, 3), 0, 0.5) >= 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.floats(0.0, 0.9), st.integers(0, 10_000))
def test_operator_norm_is_induced(n, tau, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    w = seq_weights(np.arange(n), n // 2, tau)
    op = operator_norm(a, w)
    for _ in range(20):
        x = rng.standard_normal(n)
        assert np.sum(np.abs(a @ x) * w) <= op * np.sum(np.abs(x) * w) * (1 + 1e-12)
    # attained at a unit vector
    j = int(np.argmax((w @ np.abs(a)) / w))
    e = np.zeros(n)
    e[j] = 1.0
    assert np.sum(np.abs(a @ e) * w) / w[j] == pytest.approx(op, rel=1e-12)


def test_identity_solve_is_exact():
    rng = np.random.default_rng(0)
    v = WeightedSeq(rng.standard_normal(9), 0.5, 0, -4)
    sol = solve_delta(identity_cov(9), v)
    assert np.array_equal(sol.delta.values, v.values)
    assert sol.n_terms <= 2


def test_series_matches_dense():
    g = GridSpec(t=100.0, n_t=20, band_N=16)
    c = analytic_cov(kernel(), g)
    rng = np.random.default_rng(1)
    v = WeightedSeq(rng.uniform(0, 1, c.size), 0.5, 0, -16)
    sol = solve_delta(c, v)
    assert sol.a_norm < 1
    assert sol.dense_rel_diff <= 1e-10
    batch = solve_delta_batch(c, np.stack([v.values, 2 * v.values]), v.weights())
    assert np.allclose(batch[1], 2 * batch[0])
    assert np.allclose(batch[0], solve_delta_dense(c, v.values[None])[0], rtol=1e-9, atol=1e-14)


def test_contraction_failure_raises():
    # C with a large off-diagonal entry makes ||Id - lambda C|| exceed 1
    row = np.array([1.0, 0.9, 0.0])
    with pytest.raises(ContractionError):
        solve_delta(CovMatrixC(row, "analytic", 1.0, 0.55), WeightedSeq(np.ones(3), 0.5, 0, -1))


def test_offdiag_sum_triangle():
    g = GridSpec(t=100.0, n_t=20, band_N=8)
    c = analytic_cov(kernel("triangle", 2.0), g)
    assert weighted_offdiag_sum(c, 0.5) == pytest.approx(2 * c.lam * c.first_row[1], rel=1e-12)
    with pytest.raises(ValueError):
        weighted_offdiag_sum(c, 0.5, k=20)


def test_confined_path_stays_in_block():
    g = GridSpec(t=100.0, n_t=50, band_N=8)
    rng = np.random.default_rng(0)
    for k in [-2, 0, 3]:
        for _ in range(20):
            b = confined_path(g, k, rng)
            assert b[0] == 0.0 and b.size == g.n_t + 1
            assert in_block(g, b, k)


def test_eta_shift_identity_exact():
    g, b = grid_and_basis(t=20.0, band_N=8)
    field = sample_field(g, b, 2)
    k = 3
    shifted = eta_vector(field, g, b, shift_k=k)
    moved = eta_vector(field, g, b, center=k)
    assert np.array_equal(shifted.eta, moved.eta)


def test_v_two_routes_agree():
    g, b = grid_and_basis(t=20.0, band_N=8)
    pos = sample_paths(g, 5)
    for p in pos:
        va = v_from_path(kernel(), g, p)
        vd = v_discrete(g, b, p)
        assert np.max(np.abs(va.values - vd.values)) <= 4 * b.error_bound
    assert np.allclose(v_batch(g, pos, 0, "analytic", kernel=kernel())[2], v_from_path(kernel(), g, pos[2]).values)
    assert np.allclose(v_batch(g, pos, 0, "discrete", basis=b)[2], v_discrete(g, b, pos[2]).values, atol=1e-14)
    with pytest.raises(ValueError):
        v_batch(g, pos, 0, "other")


def test_v_total_mass():
    # the band sums to the kernel mass seen by the path, at most 1
    g = GridSpec(t=100.0, n_t=50, band_N=16)
    pos = confined_path(g, 0, np.random.default_rng(3))
    v = v_from_path(kernel(), g, pos)
    assert 0.99 <= v.values.sum() <= 1.0 + 1e-12
    assert np.all(v.values >= 0)


def test_residual_orthogonal():
    g, b = grid_and_basis(t=20.0, band_N=8)
    rng = np.random.default_rng(4)
    assert residual_orthogonality(g, b, confined_path(g, 0, rng)) <= 1e-10


def test_eta_normalization():
    # var(eta_tilde_0) = C(0) and eta = t^{(1-alpha)/2} eta_tilde / 2
    g, b = grid_and_basis(t=20.0, band_N=8)
    etas_t = eta_functionals(g, b)
    etas = eta_functionals(g, b, tilde=False)
    c = discrete_cov(g, b)
    assert etas_t[8].var() == pytest.approx(c.first_row[0], rel=1e-12)
    assert etas[8].var() == pytest.approx(c.first_row[0] * g.t ** (1 - g.alpha) / 4, rel=1e-12)
    assert math.isclose(c.lam * c.first_row[0], 1.0)
