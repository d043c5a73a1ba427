import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patefair.privacy import (
    PrivacyError,
    PrivacyLedger,
    compose,
    epsilon_at,
    min_epsilon,
    min_epsilon_grid,
    rdp_per_query,
    rdp_to_dp,
)


def test_rdp_per_query():
    assert rdp_per_query(50, 2) == pytest.approx(0.0008)
    assert rdp_per_query(50, 1) == pytest.approx(1 / 2500)
    assert rdp_per_query(500, 3) == pytest.approx(rdp_per_query(50, 3) / 100)
    with pytest.raises(PrivacyError):
        rdp_per_query(50, 0.5)
    with pytest.raises(PrivacyError):
        rdp_per_query(0, 2)


def test_compose():
    assert compose(PrivacyLedger(50, 200), 2) == pytest.approx(0.16)
    assert compose(PrivacyLedger(50, 0), 2) == 0.0
    a, b = compose(PrivacyLedger(7, 30), 4), compose(PrivacyLedger(7, 45), 4)
    assert compose(PrivacyLedger(7, 75), 4) == pytest.approx(a + b)


def test_rdp_to_dp():
    assert rdp_to_dp(2, 0.16, 1e-5) == pytest.approx(11.672925464970229, rel=1e-12)
    assert rdp_to_dp(2, 0.16, 1 - 1e-12) == pytest.approx(0.16)
    assert rdp_to_dp(5, 0.1, 1e-5) < rdp_to_dp(3, 0.1, 1e-5)
    with pytest.raises(PrivacyError):
        rdp_to_dp(1.0, 0.1, 1e-5)


def test_min_epsilon_reference():
    eps, gamma = min_epsilon(PrivacyLedger(50, 200, 1e-5))
    assert eps == pytest.approx(1.999410364875238, abs=1e-9)
    assert gamma == pytest.approx(12.9963139, abs=1e-6)


def test_min_epsilon_no_queries():
    assert min_epsilon(PrivacyLedger(10, 0)) == (0.0, math.inf)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 500), st.integers(1, 10_000), st.floats(1e-10, 0.5))
def test_grid_agrees_with_analytic(sigma, m, delta):
    led = PrivacyLedger(sigma, m, delta)
    eps, g = min_epsilon(led)
    eps_g, _ = min_epsilon_grid(led, points=20_001)
    assert eps_g >= eps * (1 - 1e-12)
    assert abs(eps_g - eps) <= 1e-6 * eps
    # analytic point is a minimum of the convex curve
    assert epsilon_at(led, g * 1.01) >= eps and epsilon_at(led, 1 + (g - 1) * 0.99) >= eps


def test_monotonicity():
    eps_sigma = [min_epsilon(PrivacyLedger(s, 200))[0] for s in (5, 10, 50, 100)]
    assert all(a > b for a, b in zip(eps_sigma, eps_sigma[1:]))
    eps_m = [min_epsilon(PrivacyLedger(50, m))[0] for m in (1, 10, 200, 5000)]
    assert all(a <= b for a, b in zip(eps_m, eps_m[1:]))


def test_ledger_validation():
    with pytest.raises(PrivacyError):
        PrivacyLedger(50, 10, delta=1.0)
    with pytest.raises(PrivacyError):
        PrivacyLedger(-1, 10)
    with pytest.raises(PrivacyError):
        PrivacyLedger(50, 10, sensitivity=1)
