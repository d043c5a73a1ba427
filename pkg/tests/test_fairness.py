import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from patefair.fairness import (
    AuditError,
    audit,
    closeness,
    cor2_rhs,
    excessive_risk,
    group_gap,
    per_sample_risk,
    sensitivity_stats,
    spearman,
    spearman_permutation_test,
    thm1_rhs,
    thm3_rhs,
)
from patefair.models import ModelParams, objective, random_params


def logistic(theta):
    theta = np.asarray(theta, dtype=float)
    return ModelParams("logistic", (theta.size - 1, 1), theta, 2)


def perturbed(p, R=5, scale=0.1, seed=0):
    return p.theta + np.random.default_rng(seed).normal(scale=scale, size=(R, p.theta.size))


def test_sensitivity_examples():
    p = logistic([1.0, 2.0, 3.0])
    st0 = sensitivity_stats(p, [p.theta, p.theta])
    assert st0.u1 == 0.0 and st0.u2 == 0.0
    st1 = sensitivity_stats(p, [p.theta + np.array([3.0, 4.0, 0.0])])
    assert st1.u1 == pytest.approx(5.0) and st1.u2 == pytest.approx(25.0)
    assert st1.rep_count == 1


def test_sensitivity_arch_mismatch():
    p = logistic([1.0, 2.0, 3.0])
    other = random_params("mlp2", (2, 1, 1, 2), 0)
    with pytest.raises(AuditError):
        sensitivity_stats(p, [other])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 20))
def test_jensen(seed, R):
    p = random_params("logistic", (3, 1), seed)
    s = sensitivity_stats(p, perturbed(p, R, 1.0, seed))
    assert s.u2 >= s.u1**2 * (1 - 1e-12)


def test_excessive_risk_identity_and_single_rep():
    p = random_params("logistic", (2, 1), 1)
    X = np.random.default_rng(0).normal(size=(6, 2))
    T = np.eye(2)[[0, 1, 1, 0, 0, 1]]
    assert abs(excessive_risk(X, p, [p.theta] * 3, T, lam=0.5)) <= 1e-9
    q = random_params("logistic", (2, 1), 2)
    direct = objective(q, X, T, 0.5) - objective(p, X, T, 0.5)
    assert excessive_risk(X, p, [q.theta], T, 0.5) == pytest.approx(direct, rel=1e-12)


def test_excessive_risk_empty():
    p = random_params("logistic", (2, 1), 1)
    with pytest.raises(AuditError):
        excessive_risk(np.zeros((0, 2)), p, [p.theta], np.zeros((0, 2)), 1.0)


def test_population_is_weighted_group_risk():
    p = random_params("logistic", (3, 1), 3)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    T = np.eye(2)[rng.integers(0, 2, 40)]
    g = rng.integers(0, 3, 40)
    tilde = perturbed(p, 7, 0.3, 3)
    total = excessive_risk(X, p, tilde, T, 0.2)
    parts = sum((g == a).sum() * excessive_risk(X[g == a], p, tilde, T[g == a], 0.2) for a in range(3))
    assert total == pytest.approx(parts / 40, rel=1e-10)


def test_per_sample_risk_modes_consistent():
    p = random_params("logistic", (3, 1), 4)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(10, 3))
    T = np.eye(2)[rng.integers(0, 2, 10)]
    tilde = perturbed(p, 4, 0.5, 4)
    with_reg, _ = per_sample_risk(p, tilde, X, T, 0.3)
    assert with_reg.mean() == pytest.approx(excessive_risk(X, p, tilde, T, 0.3), rel=1e-10)
    with pytest.raises(AuditError):
        per_sample_risk(p, tilde, X, T, 0.3, mode="other")


def test_thm1_examples():
    assert thm1_rhs(1, 1, 2, [0, 0], [3, 4]) == 0.0
    assert thm1_rhs(1, 1, 2, [0.5, 0.5], [2, 4]) == pytest.approx(1.5)
    assert thm1_rhs(1, 2, 2, [0.5, 0.5], [2, 4]) == pytest.approx(0.75)
    with pytest.raises(AuditError):
        thm1_rhs(1, 0, 2, [0.5, 0.5], [2, 4])


def test_cor2_examples():
    assert cor2_rhs(1, 1, 1, [0.0], [2.0]) == 0.0
    assert cor2_rhs(1, 1, 1, [0.5], [2.0]) == pytest.approx(1.0)
    with pytest.raises(AuditError):
        cor2_rhs(1, 0, 1, [0.5], [2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.1, 10), st.floats(0.01, 100))
def test_cor2_dominates_squared_thm1_on_equal_norms(ps, norm, lam):
    m = len(ps)
    g = [norm] * m
    # Cauchy-Schwarz: (sum p)^2 <= m sum p^2
    assert cor2_rhs(1, lam, m, ps, g) * (1 + 1e-12) + 1e-300 >= thm1_rhs(1, lam, m, ps, g) ** 2


def test_thm3_examples():
    p = logistic([0.0, 0.0])
    zero = sensitivity_stats(p, [p.theta])
    assert thm3_rhs(1.0, 2.0, zero) == 0.0
    s = sensitivity_stats(p, [p.theta])
    s = type(s)(u1=0.1, u2=0.04, rep_count=1, per_rep_norms=np.array([0.2]))
    assert thm3_rhs(1.0, 2.0, s) == pytest.approx(0.14)
    np.testing.assert_allclose(thm3_rhs(np.array([1.0, 0.0]), np.array([2.0, 2.0]), s), [0.14, 0.04])


def test_closeness_examples():
    assert closeness(logistic([0.0, 0.0]), [1.0]) == pytest.approx(0.5)
    assert closeness(logistic([1e4, 0.0]), [1.0]) == pytest.approx(0.0, abs=1e-12)
    p4 = ModelParams("mlp2", (2, 3, 3, 4), np.zeros(9 + 12 + 16), 4)
    assert closeness(p4, [0.5, 0.5]) == pytest.approx(0.75)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_closeness_range(seed):
    p = random_params("mlp2", (3, 4, 4, 3), seed, scale=3.0)
    s = closeness(p, np.random.default_rng(seed).normal(size=(10, 3)))
    assert np.all(s >= -1e-15) and np.all(s <= 1 - 1 / 3 + 1e-12)


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5)
    assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))
    with pytest.raises(AuditError):
        spearman([1], [2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.floats(-10, 10)), min_size=3, max_size=30))
def test_spearman_matches_scipy_and_monotone_invariance(pairs):
    xs = np.array([p[0] for p in pairs], dtype=float)
    ys = np.array([p[1] for p in pairs])
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        return
    rho = spearman(xs, ys)
    assert rho == pytest.approx(spearmanr(xs, ys).statistic, abs=1e-12)
    # exact strictly monotone transforms: cubes of small ints, doubling of floats
    assert spearman(xs**3 + 7, 2 * ys) == pytest.approx(rho, abs=1e-12)


def test_permutation_test():
    rng = np.random.default_rng(0)
    x = rng.normal(size=100)
    strong = spearman_permutation_test(x, x + 0.3 * rng.normal(size=100), 999, seed=1)
    assert strong.p_value == pytest.approx(1 / 1000)
    none = spearman_permutation_test(x, rng.normal(size=100), 999, seed=1)
    assert none.p_value > 0.01
    flat = spearman_permutation_test(x, np.ones(100), 99)
    assert math.isnan(flat.statistic) and flat.p_value == 1.0


def test_group_gap():
    assert group_gap([0.1, 0.4]) == pytest.approx(0.3)
    assert group_gap([0.4, 0.1, float("nan")]) == pytest.approx(0.3)
    assert group_gap([0.2]) == 0.0


def test_audit_end_to_end_small():
    rng = np.random.default_rng(7)
    p = random_params("logistic", (3, 1), 7, scale=0.5)
    X = rng.normal(size=(30, 3))
    T = np.eye(2)[rng.integers(0, 2, 30)]
    groups = rng.integers(0, 2, 30)
    tilde = perturbed(p, 10, 0.05, 7)
    flips = rng.uniform(0, 0.3, 30)
    rep = audit(p, tilde, X, groups, T, 1.0, flips, np.zeros(30), p, X, T.argmax(1), correlation_permutations=99)
    assert rep.population_risk == pytest.approx(rep.risk.mean(), rel=1e-9)
    assert rep.risk_gap == pytest.approx(abs(rep.group_risk[0] - rep.group_risk[1]))
    assert rep.thm1 == pytest.approx(thm1_rhs(1, 1.0, 30, flips, np.linalg.norm(np.c_[X, np.ones(30)], axis=1)))
    cols = rep.columns()
    assert all(len(v) == 30 for v in cols.values())
    for key, v in rep.correlations.items():
        if key.startswith("spearman"):
            assert -1 <= v <= 1
    summary = rep.summary()
    assert summary["u1"] == rep.sensitivity.u1


def test_audit_identical_models_zero_risk():
    rng = np.random.default_rng(8)
    p = random_params("mlp2", (3, 4, 4, 2), 8)
    X = rng.normal(size=(12, 3))
    T = np.eye(2)[rng.integers(0, 2, 12)]
    rep = audit(p, [p.theta] * 4, X, rng.integers(0, 2, 12), T, 1.0, np.zeros(12), np.zeros(12), p, correlation_permutations=0)
    assert np.all(np.abs(rep.risk) <= 1e-12)
    assert rep.sensitivity.u1 == 0.0 and rep.risk_gap == 0.0
