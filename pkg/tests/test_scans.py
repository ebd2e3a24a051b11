import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wander.config import from_mapping
from wander.kernel import make_kernel
from wander.polymer_mc import McEstimate
from wander.scans import (
    ScanAbort,
    check_t_grid,
    combine_fields,
    exponent_scan,
    fit_slope,
    reference_exponent,
    wandering_cell,
)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3), st.integers(2, 8))
def test_noise_free_slope(slope, intercept, n):
    t = np.geomspace(4, 256, n)
    est = np.exp(intercept) * t**slope
    fit = fit_slope(t, est, np.zeros(n))
    assert abs(fit.slope - slope) <= 1e-10
    assert not fit.weighted
    assert (fit.ci is None) == (n < 4)


def test_weighted_fit_and_interval():
    t = np.array([8.0, 16.0, 32.0, 64.0])
    rng = np.random.default_rng(0)
    est = t**0.6 * np.exp(0.01 * rng.standard_normal(4))
    fit = fit_slope(t, est, 0.01 * est)
    assert fit.weighted
    lo, hi = fit.ci
    assert lo < fit.slope < hi
    assert lo < 0.6 < hi
    with pytest.raises(ValueError):
        fit_slope([1.0], [1.0], [0.1])


def test_combine_fields():
    per = [McEstimate(1.0, 0.1, 10), McEstimate(3.0, 0.1, 10)]
    c = combine_fields(per)
    assert c.mean == 2.0
    assert c.stderr == pytest.approx(math.sqrt(1.0 + 0.01))
    assert combine_fields([per[0]]).stderr == pytest.approx(0.1)


def test_t_grid_checks():
    check_t_grid([8, 16, 32, 64])
    for bad in [[8, 16, 32], [8, 16, 30, 64], [64, 32, 16, 8]]:
        with pytest.raises(ValueError):
            check_t_grid(bad)


def test_reference_exponents():
    assert reference_exponent(make_kernel("cauchy_fast", 1.0)) == 0.6
    assert reference_exponent(make_kernel("triangle", 2.0)) == 0.6
    assert reference_exponent(make_kernel("cauchy_slow", 0.5)) == pytest.approx(0.5 + 0.5 / 5)
    assert reference_exponent(make_kernel("cauchy_slow", 0.1)) == pytest.approx(0.5 + 0.1 / 5.8)


def _cfg(**exp):
    base = {"grid": {"n_t": 16, "band_N": 1}, "experiment": {"t_grid": [4.0, 8.0, 16.0, 32.0],
                                                            "beta_grid": [0.0], "n_paths": 2000}}
    base["experiment"].update(exp)
    return from_mapping(base)


def test_control_is_exact_half_and_kernel_free():
    cfg = _cfg()
    (a,) = exponent_scan(cfg, make_kernel("cauchy_fast", 1.0))
    (b,) = exponent_scan(cfg, make_kernel("triangle", 2.0))
    assert abs(a.fit.slope - 0.5) <= 1e-10
    assert np.array_equal(a.est, b.est)
    assert a.n_fields == 0


def test_beta_zero_first():
    cfg = _cfg(beta_grid=[0.25], n_fields=4, n_paths=200)
    res = exponent_scan(cfg)
    assert [r.beta for r in res] == [0.0, 0.25]
    assert np.all(np.isfinite(res[1].est))


def test_degenerate_weights_abort():
    cfg = _cfg(n_fields=4, n_paths=20)
    from wander.polymer_mc import path_increments

    z = path_increments(0, range(20), 16)
    with pytest.raises(ScanAbort):
        wandering_cell(make_kernel("cauchy_fast", 1.0), cfg, 64.0, 3.0, z, 4)
