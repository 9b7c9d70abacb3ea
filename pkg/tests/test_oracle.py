import math
import warnings

import numpy as np
import pytest

import gamsplit as g
from gamsplit.oracle import (bridge_precision, dense_bridge_sampler, direct_mc,
                             direct_mc_max_level, gamblers_ruin_exact)
from gamsplit.paths import ChainModel


def harmonic_solve(p_up, start, top):
    """Independent check: solve the tridiagonal harmonic system
    h(i) = p*h(i+1) + (1-p)*h(i-1), h(0)=0, h(top)=1."""
    n = top - 1
    a = np.zeros((n, n))
    b = np.zeros(n)
    for row, i in enumerate(range(1, top)):
        a[row, row] = -1.0
        if i + 1 < top:
            a[row, row + 1] = p_up
        else:
            b[row] -= p_up
        if i - 1 >= 1:
            a[row, row - 1] = 1.0 - p_up
    h = np.linalg.solve(a, b)
    return h[start - 1]


def test_gamblers_ruin_symmetric():
    assert gamblers_ruin_exact(0.5, 3, 10) == 0.3


def test_gamblers_ruin_reference_value():
    # r = 1.5: (1 - 1.5) / (1 - 1.5^9), about 1.3354e-2
    p = gamblers_ruin_exact(0.4, 1, 9)
    assert math.isclose(p, (1 - 1.5) / (1 - 1.5 ** 9), rel_tol=1e-15)
    assert math.isclose(p, 1.3354e-2, rel_tol=1e-4)


def test_gamblers_ruin_vs_harmonic_system():
    rng = np.random.default_rng(9)
    for _ in range(50):
        p_up = float(rng.uniform(0.15, 0.85))
        top = int(rng.integers(3, 14))
        start = int(rng.integers(1, top))
        assert math.isclose(gamblers_ruin_exact(p_up, start, top),
                            harmonic_solve(p_up, start, top),
                            rel_tol=1e-12, abs_tol=1e-14)


def test_gamblers_ruin_limits_and_validation():
    assert gamblers_ruin_exact(0.999999, 8, 9) > 0.999
    with pytest.raises(ValueError):
        gamblers_ruin_exact(0.0, 1, 9)
    with pytest.raises(ValueError):
        gamblers_ruin_exact(0.4, 9, 9)


def jump_to_b_model():
    return ChainModel(
        name="jump-b", x0=np.array([1.0]), dim=1,
        transition=lambda s, rng: np.array([10.0]),
        region_a=lambda s: s[0] < 0.0,
        region_b=lambda s: s[0] > 5.0,
        xi=lambda st: np.asarray(st, dtype=float)[..., 0],
        z_max=5.0, path_cap=10)


def test_direct_mc_certain_event():
    res = direct_mc(jump_to_b_model(), 500, np.random.default_rng(0))
    assert res.value == 1.0
    assert res.hits == 500
    assert not res.degenerate


def test_direct_mc_zero_hits_degenerate():
    model = g.drifted_bm_model(beta=24.0)
    res = direct_mc(model, 1000, g.oracle_generator(70, 0))
    assert res.value == 0.0
    assert res.degenerate
    assert res.standard_error == 0.0


def test_direct_mc_few_hits_warns():
    model = g.random_walk_model(0.4, 1, 9)  # p about 1.3e-2
    with pytest.warns(UserWarning):
        direct_mc(model, 150, g.oracle_generator(70, 1))


def test_direct_mc_walk_matches_closed_form():
    model = g.random_walk_model(0.4, 1, 9)
    res = direct_mc(model, 200_000, g.oracle_generator(70, 2))
    p = gamblers_ruin_exact(0.4, 1, 9)
    assert abs(res.value - p) <= 4 * res.standard_error


def test_direct_mc_max_level_threshold():
    model = g.random_walk_model(0.4, 1, 9)
    res = direct_mc_max_level(model, 5.0, 200_000, g.oracle_generator(70, 3))
    # exceeding level 5 before absorption at 0 equals hitting 6 before 0
    p = gamblers_ruin_exact(0.4, 1, 6)
    assert abs(res.value - p) <= 4 * res.standard_error


def test_bridge_precision_shape():
    q = bridge_precision(3)
    assert np.array_equal(q, [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])


def test_dense_bridge_kappa1_variance():
    rng = g.oracle_generator(71, 0)
    x = dense_bridge_sampler(1, rng, size=200_000)[:, 0]
    assert abs(x.var() - 0.5) <= 3 * math.sqrt(2.0 / x.size) * 0.5


def test_dense_bridge_kappa2_covariance():
    # inverse of [[2,-1],[-1,2]] is [[2/3,1/3],[1/3,2/3]]
    rng = g.oracle_generator(71, 1)
    x = dense_bridge_sampler(2, rng, size=300_000)
    emp = np.cov(x.T, bias=True)
    expect = np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
    assert np.allclose(emp, expect, atol=3 * math.sqrt(2.0 / x.shape[0]))


def test_dense_bridge_covariance_matches_inverse_precision():
    kappa, n = 6, 300_000
    x = dense_bridge_sampler(kappa, g.oracle_generator(71, 2), size=n)
    cov = np.linalg.inv(bridge_precision(kappa))
    emp = np.cov(x.T, bias=True)
    for i in range(kappa):
        for j in range(kappa):
            se = math.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / n)
            assert abs(emp[i, j] - cov[i, j]) <= 3.5 * se
