import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from conftest import brute_hessian, brute_loglik, brute_score, brute_sums, random_instance
from linkedcox.coxfit import hessian, log_partial_likelihood, newton_solve, risk_sums, score
from linkedcox.dataset import Episodes
from linkedcox.errors import EmptyRiskSet, SingularHessian


def _fd_grad(f, b, h=1e-6):
    g = np.zeros_like(b)
    for j in range(len(b)):
        e = np.zeros_like(b)
        e[j] = h
        g[j] = (f(b + e) - f(b - e)) / (2 * h)
    return g


def _fd_jac(f, b, h=1e-6):
    cols = []
    for j in range(len(b)):
        e = np.zeros_like(b)
        e[j] = h
        cols.append((f(b + e) - f(b - e)) / (2 * h))
    return np.column_stack(cols)


# risk_sums --------------------------------------------------------------

def test_risk_sums_single_subject():
    ep = Episodes.from_arrays([2.0], [1], [[0.0]])
    rs = risk_sums(ep, [0.0], 1.0)
    assert rs.s0 == 1.0
    assert rs.s1.tolist() == [0.0]
    assert rs.s2.tolist() == [[0.0]]


def test_risk_sums_two_subjects_log2():
    ep = Episodes.from_arrays([2.0, 3.0], [1, 1], [[0.0], [1.0]])
    rs = risk_sums(ep, [math.log(2)], 1.0)
    assert rs.s0 == pytest.approx(3 / 2, rel=1e-15)
    assert rs.s1[0] == pytest.approx(2 / 2, rel=1e-15)


def test_risk_sums_matches_brute_force(rng):
    ep = random_instance(rng, n=6, p=2, weighted=True, episodes=True)
    beta = rng.normal(size=2)
    for t in np.linspace(0.01, ep.stop.max(), 17):
        rs = risk_sums(ep, beta, t)
        s0, s1, s2 = brute_sums(ep, beta, t)
        assert rs.s0 == pytest.approx(s0, rel=1e-12, abs=1e-15)
        np.testing.assert_allclose(rs.s1, s1, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(rs.s2, s2, rtol=1e-12, atol=1e-15)


def test_empty_weighted_risk_set_raises():
    ep = Episodes.from_arrays([1.0, 2.0], [1, 0], [[0.0], [1.0]], weight=[0.0, 1.0])
    # the only event has zero weight: no weighted events
    with pytest.raises(EmptyRiskSet):
        score(ep, [0.0])


# score / hessian / log partial likelihood -----------------------------------

def test_score_zero_when_covariates_identical(rng):
    ep = Episodes.from_arrays(rng.exponential(size=10), np.ones(10), np.full((10, 1), 3.0))
    for b in (-2.0, 0.0, 1.5):
        assert abs(score(ep, [b])[0]) < 1e-14


def test_hessian_zero_for_constant_covariate(rng):
    ep = Episodes.from_arrays(rng.exponential(size=10), np.ones(10), np.full((10, 1), 3.0))
    assert abs(hessian(ep, [0.7])[0, 0]) < 1e-12


def test_loglik_closed_form_all_at_risk():
    # all subjects at risk at every event time only if events happen at the end;
    # with beta=0 and one tied event time every term is -log n
    n, d = 7, 3
    t = np.full(n, 5.0)
    delta = np.zeros(n)
    delta[:d] = 1
    ep = Episodes.from_arrays(t, delta, np.arange(n, dtype=float)[:, None])
    assert log_partial_likelihood(ep, [0.0]) == pytest.approx(-(d / n) * math.log(n), rel=1e-14)


@pytest.mark.parametrize("ties", [False, True])
@pytest.mark.parametrize("weighted", [False, True])
@pytest.mark.parametrize("episodes", [False, True])
def test_engine_matches_double_loop(ties, weighted, episodes):
    rng = np.random.default_rng(7 + 2 * ties + 4 * weighted + 8 * episodes)
    for _ in range(5):
        ep = random_instance(rng, n=9, p=2, ties=ties, weighted=weighted, episodes=episodes)
        beta = rng.normal(scale=0.5, size=2)
        assert log_partial_likelihood(ep, beta) == pytest.approx(brute_loglik(ep, beta), rel=1e-12)
        np.testing.assert_allclose(score(ep, beta), brute_score(ep, beta), rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(hessian(ep, beta), brute_hessian(ep, beta), rtol=1e-10, atol=1e-13)


def test_finite_differences_50_instances():
    """Score is the gradient of the log partial likelihood and the Hessian
    minus the Jacobian of the score, on 50 random instances."""
    rng = np.random.default_rng(2024)
    for k in range(50):
        ep = random_instance(rng, n=int(rng.integers(5, 30)), p=int(rng.integers(1, 4)),
                             ties=k % 2 == 0, weighted=k % 3 == 0, episodes=k % 5 == 0)
        beta = rng.normal(scale=0.5, size=ep.p)
        g = score(ep, beta)
        g_fd = _fd_grad(lambda b: log_partial_likelihood(ep, b), beta)
        np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-8)
        a = hessian(ep, beta)
        a_fd = -_fd_jac(lambda b: score(ep, b), beta)
        np.testing.assert_allclose(a, a_fd, rtol=1e-5, atol=1e-7)
        np.testing.assert_array_equal(a, a.T)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.05, 0.95))
def test_loglik_concave_on_random_pairs(seed, lam):
    rng = np.random.default_rng(seed)
    ep = random_instance(rng, n=12, p=2, weighted=True)
    b1, b2 = rng.normal(size=2), rng.normal(size=2)
    mid = lam * b1 + (1 - lam) * b2
    lhs = log_partial_likelihood(ep, mid)
    rhs = lam * log_partial_likelihood(ep, b1) + (1 - lam) * log_partial_likelihood(ep, b2)
    assert lhs >= rhs - 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 10.0))
def test_weight_scale_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    ep = random_instance(rng, n=15, p=2, weighted=True)
    beta = rng.normal(scale=0.3, size=2)
    np.testing.assert_allclose(score(ep.scaled(c), beta), c * score(ep, beta), rtol=1e-10, atol=1e-14)
    f1 = newton_solve(ep)
    f2 = newton_solve(ep.scaled(c))
    if f1.converged and f2.converged:
        np.testing.assert_allclose(f1.beta_hat, f2.beta_hat, rtol=1e-7, atol=1e-8)


# newton_solve ------------------------------------------------------------

def test_newton_identical_covariates_singular(rng):
    ep = Episodes.from_arrays(rng.exponential(size=10), np.ones(10), np.full((10, 1), 1.0))
    with pytest.raises(SingularHessian):
        newton_solve(ep)


def test_newton_recovers_log4_within_bootstrap_se():
    rng = np.random.default_rng(99)
    n = 50
    x = (rng.random(n) < 0.5).astype(float)
    t = rng.exponential(size=n) / (0.06 * np.exp(-math.log(4) * x))
    ep = Episodes.from_arrays(t, np.ones(n), x[:, None])
    fit = newton_solve(ep)
    assert fit.converged
    boot = []
    for _ in range(200):
        i = rng.integers(0, n, n)
        fb = newton_solve(Episodes.from_arrays(t[i], np.ones(n), x[i][:, None]))
        boot.append(fb.beta_hat[0])
    se = np.std(boot, ddof=1)
    assert abs(fit.beta_hat[0] + math.log(4)) <= 3 * se


def test_newton_loglik_monotone_and_converged(rng):
    ep = random_instance(rng, n=40, p=3, weighted=True, episodes=True)
    path = []
    for it in range(1, 8):
        f = newton_solve(ep, max_iter=it)
        path.append(f.loglik)
        if f.converged:
            break
    assert all(b >= a - 1e-15 for a, b in zip(path, path[1:]))
    fit = newton_solve(ep)
    assert fit.converged and fit.score_norm <= 1e-9
    assert np.max(np.abs(score(ep, fit.beta_hat))) <= 1e-9


def test_golden_section_brute_force_small_n():
    """n <= 8, p = 1: Newton agrees with golden-section maximisation."""
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 25:
        n = int(rng.integers(3, 9))
        ep = random_instance(rng, n=n, p=1, ties=checked % 2 == 1, weighted=checked % 3 == 0)
        try:
            fit = newton_solve(ep)
        except SingularHessian:
            continue
        if not fit.converged or abs(fit.beta_hat[0]) > 8:
            continue  # monotone likelihood: no finite maximiser
        b_gs = optimize.golden(lambda b: -log_partial_likelihood(ep, [b]),
                               brack=(fit.beta_hat[0] - 3, fit.beta_hat[0], fit.beta_hat[0] + 3),
                               tol=1e-12)
        assert fit.beta_hat[0] == pytest.approx(b_gs, abs=1e-6)
        checked += 1


def test_matches_statsmodels_phreg_on_20_instances():
    sm = pytest.importorskip("statsmodels.duration.hazard_regression")
    rng = np.random.default_rng(77)
    for k in range(20):
        n = int(rng.integers(30, 120))
        x = rng.normal(size=(n, 2))
        t = rng.exponential(size=n) / np.exp(x @ np.array([0.5, -0.3]))
        if k % 2:
            t = np.round(t * 5) / 5 + 0.2  # ties
        d = (rng.random(n) < 0.8).astype(float)
        fit = newton_solve(Episodes.from_arrays(t, d, x))
        ref = sm.PHReg(t, x, status=d, ties="breslow").fit()
        np.testing.assert_allclose(fit.beta_hat, ref.params, rtol=1e-8, atol=1e-8)
        # A_n is the per-subject information: n A_n equals the observed information
        np.testing.assert_allclose(fit.hessian * n, np.linalg.inv(ref.cov_params()), rtol=1e-6)
