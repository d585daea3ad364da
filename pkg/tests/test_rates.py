import math

import numpy as np
import pytest

from rtp_ldp.rates import (SwitchRateFamily, curie_weiss_fixed_points,
                           curie_weiss_magnetization_rhs, evaluate_switch_rate)

# m* solving m = tanh(2m), frozen from mpmath findroot at 30 digits
M_STAR_BETA2 = 0.9575040240772687


def test_constant_family_evaluates_to_one():
    fam = SwitchRateFamily.constant()
    assert evaluate_switch_rate(fam, 1, 0.3) == 1.0
    assert evaluate_switch_rate(fam, -1, -0.99) == 1.0


def test_curie_weiss_values():
    fam = SwitchRateFamily.curie_weiss(2.0)
    assert evaluate_switch_rate(fam, 1, 0.5) == pytest.approx(math.exp(-1.0), abs=1e-15)
    fam1 = SwitchRateFamily.curie_weiss(1.0)
    assert evaluate_switch_rate(fam1, -1, 0.0) == 1.0


def test_domain_errors():
    fam = SwitchRateFamily.constant()
    with pytest.raises(ValueError):
        evaluate_switch_rate(fam, 1, 1.5)
    with pytest.raises(ValueError):
        evaluate_switch_rate(fam, 2, 0.0)
    with pytest.raises(ValueError):
        SwitchRateFamily.curie_weiss(-1.0)


def test_bounds_hold_on_dense_grid():
    for fam in (SwitchRateFamily.constant(),
                SwitchRateFamily.curie_weiss(2.5),
                SwitchRateFamily.tabulated([-1, 0, 1], [0.5, 1.0, 2.0], [2.0, 1.0, 0.5])):
        for m in np.linspace(-1, 1, 201):
            for sigma in (1, -1):
                c = evaluate_switch_rate(fam, sigma, m)
                assert fam.c_min - 1e-12 <= c <= fam.c_max + 1e-12
                assert c > 0


def test_lipschitz_scan():
    rng = np.random.default_rng(7)
    families = [SwitchRateFamily.curie_weiss(2.0),
                SwitchRateFamily.tabulated([-1, -0.25, 0.5, 1],
                                           [0.3, 1.4, 0.9, 2.0],
                                           [1.0, 0.8, 1.7, 0.4])]
    for fam in families:
        m1 = rng.uniform(-1, 1, 1000)
        m2 = rng.uniform(-1, 1, 1000)
        for sigma in (1, -1):
            lhs = np.abs(fam.rate_array(sigma, m1) - fam.rate_array(sigma, m2))
            assert np.all(lhs <= fam.lipschitz * np.abs(m1 - m2) + 1e-12)


def test_tabulated_interpolation_and_validation():
    fam = SwitchRateFamily.tabulated([-1, 0, 1], [1.0, 2.0, 1.0], [0.5, 0.5, 0.5])
    assert evaluate_switch_rate(fam, 1, 0.5) == pytest.approx(1.5)
    assert fam.c_min == 0.5 and fam.c_max == 2.0 and fam.lipschitz == 1.0
    with pytest.raises(ValueError):
        SwitchRateFamily.tabulated([-1, 1], [0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        SwitchRateFamily.tabulated([-1, 0.5], [1.0, 1.0], [1.0, 1.0])


def test_json_round_trip():
    for fam in (SwitchRateFamily.constant(),
                SwitchRateFamily.curie_weiss(1.5),
                SwitchRateFamily.tabulated([-1, 0, 1], [1, 2, 1], [2, 1, 2])):
        clone = SwitchRateFamily.from_json(fam.to_json())
        m = np.linspace(-1, 1, 41)
        for sigma in (1, -1):
            assert np.allclose(clone.rate_array(sigma, m), fam.rate_array(sigma, m))


def test_fixed_points_subcritical():
    for beta in (0.5, 1.0):
        roots = curie_weiss_fixed_points(beta, tol=1e-10)
        assert roots.shape == (1,)
        assert abs(roots[0]) < 1e-10


def test_fixed_points_supercritical():
    roots = curie_weiss_fixed_points(2.0, tol=1e-10)
    assert roots.shape == (3,)
    assert roots[1] == pytest.approx(0.0, abs=1e-10)
    assert roots[2] == pytest.approx(M_STAR_BETA2, abs=1e-9)
    assert roots[0] == pytest.approx(-M_STAR_BETA2, abs=1e-9)
    # independent residual check
    for r in roots:
        assert abs(r - math.tanh(2.0 * r)) < 1e-9


def test_fixed_points_large_beta():
    roots = curie_weiss_fixed_points(50.0, tol=1e-10)
    assert roots.shape == (3,)
    assert roots[-1] == pytest.approx(1.0, abs=1e-6)
    for r in roots:
        assert abs(r - math.tanh(50.0 * r)) < 1e-9


def test_curie_weiss_rhs_matches_flip_balance():
    beta = 1.7
    fam = SwitchRateFamily.curie_weiss(beta)
    for m in np.linspace(-0.99, 0.99, 21):
        balance = fam.rate(-1, m) * (1 - m) - fam.rate(1, m) * (1 + m)
        assert balance == pytest.approx(float(curie_weiss_magnetization_rhs(beta, m)), abs=1e-13)
