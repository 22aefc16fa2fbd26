import json
import warnings
from dataclasses import replace

import numpy as np
import pytest

from linkedcox.dataset import ChangePointSpec
from linkedcox.errors import EmptyRiskSet, InvalidInput
from linkedcox.estimators import (Method, Z_95, fit_cc, fit_ccplus, fit_iplw, fit_method, fit_nlac,
                                  fit_oracle)
from linkedcox.simgen import ScenarioConfig, analysis_design, simulate


@pytest.fixture(scope="module")
def clar():
    cfg = ScenarioConfig(n=1500, mechanism="CLAR", seed=17)
    return cfg, simulate(cfg, 0)


def test_method_parse():
    assert Method.parse("cc+") is Method.CCPLUS
    assert Method.parse("IPLW") is Method.IPLW
    with pytest.raises(InvalidInput):
        Method.parse("aiplw")


def test_reports_are_consistent(clar):
    cfg, data = clar
    _, spec = analysis_design(cfg)
    reps = {m: fit_method(m, data, spec) for m in Method}
    for m, r in reps.items():
        b = r.beta
        assert r.cox.converged and r.cox.score_norm <= 1e-9
        # centred up to floating-point rounding of the two additions
        np.testing.assert_allclose((r.ci_lo + r.ci_hi) / 2, b, rtol=4e-16, atol=1e-16)
        np.testing.assert_allclose(r.ci_hi - b, Z_95 * r.se, rtol=1e-14)
        assert np.all(r.ci_lo < r.ci_hi)
        np.testing.assert_array_equal(r.hr, np.exp(b))
        assert r.names == ("z1_1", "z1_2", "z1_1*I(t>5)")
        np.testing.assert_allclose(r.se, np.sqrt(np.diag(r.covariance())))
        json.dumps(r.to_dict())
    n = data.n
    assert reps[Method.CC].n_used <= reps[Method.CCPLUS].n_used == reps[Method.IPLW].n_used
    assert reps[Method.IPLW].n_used <= reps[Method.NLAC].n_used == reps[Method.ORACLE].n_used == n
    assert reps[Method.CC].n_used == int((data.l == 1).sum())
    assert reps[Method.IPLW].cox.cov_iplw is not None
    assert any("min fitted linkage probability" in d for d in reps[Method.IPLW].diagnostics)
    assert any("weight range" in d for d in reps[Method.IPLW].diagnostics)


def test_oracle_zero_events():
    data = simulate(ScenarioConfig(n=30, seed=1), 0)
    data = data.oracle_view().with_outcomes(data.t_obs_full, np.zeros(data.n))
    data.delta_full = np.zeros(data.n)
    with pytest.raises(EmptyRiskSet):
        fit_oracle(data)


def test_cc_no_linked_subjects(clar):
    _, data = clar
    q1 = data.subset(data.q == 1)
    with pytest.raises(InvalidInput):
        fit_cc(replace(q1, l=np.zeros(q1.n, dtype=np.int8)))


def test_all_linked_equivalences(clar):
    cfg, data = clar
    _, spec = analysis_design(cfg)
    full = data.oracle_view()
    o = fit_oracle(full, spec)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        i = fit_iplw(full, spec)
    np.testing.assert_allclose(i.beta, o.beta, rtol=0, atol=1e-8)
    assert "unit weights" in i.diagnostics[0]
    # cov_iplw with unit weights and no correction is the robust covariance
    np.testing.assert_array_equal(i.cox.cov_iplw, o.cox.cov_robust)
    np.testing.assert_array_equal(fit_nlac(full, spec).beta, o.beta)
    np.testing.assert_array_equal(fit_cc(full, spec).beta, o.beta)


def test_ccplus_equals_cc_without_q1(clar):
    cfg, data = clar
    _, spec = analysis_design(cfg)
    linked = data.oracle_view().subset(data.q == 0)
    np.testing.assert_array_equal(fit_ccplus(linked, spec).beta, fit_cc(linked, spec).beta)


def test_iplw_near_ccplus_with_no_class3(clar):
    cfg, data = clar
    _, spec = analysis_design(cfg)
    # nobody in class 3: drop them
    c3 = (data.l == 0) & (data.q == 0)
    sub = data.subset(~c3)
    a = fit_iplw(sub, spec).beta
    b = fit_ccplus(sub, spec).beta
    np.testing.assert_allclose(a, b, atol=1e-3)


def test_oracle_vs_iplw_within_joint_se(clar):
    cfg, data = clar
    _, spec = analysis_design(cfg)
    o = fit_oracle(data, spec)
    i = fit_iplw(data, spec)
    d = i.beta - o.beta
    stat = d @ np.linalg.solve(i.covariance(), d)
    assert stat < 9 * len(d)


def test_lcar_methods_agree_at_large_n():
    cfg = ScenarioConfig(n=10000, mechanism="LCAR", seed=23)
    _, spec = analysis_design(cfg)
    ok = 0
    reps = 10
    for r in range(reps):
        data = simulate(cfg, r)
        fits = [fit_method(m, data, spec) for m in (Method.ORACLE, Method.CC, Method.NLAC, Method.IPLW)]
        se = max(f.se.max() for f in fits)
        diffs = [np.abs(a.beta - b.beta).max() for a in fits for b in fits]
        ok += max(diffs) <= 3 * se
    assert ok >= 0.95 * reps


def test_linkage_covariate_subset_and_columns():
    cfg = ScenarioConfig(scenario="motivating", n=1500, mechanism="CLAR", seed=3)
    data = simulate(cfg, 0)
    r = fit_iplw(data, linkage_covariates=("z1_1", "z1_2"))
    assert r.linkage_gamma.shape == (3,)
    r2 = fit_iplw(data, columns=("z1_1", "z1_2", "z1_3_sq"), linkage_covariates=("z1_1", "z1_2"))
    assert r2.names == ("z1_1", "z1_2", "z1_3_sq")


def test_change_points_on_treatment():
    cfg = ScenarioConfig(n=800, mechanism="CLAR", seed=5)
    data = simulate(cfg, 0)
    r = fit_nlac(data, ChangePointSpec((4.0, 6.0), 0))
    assert len(r.beta) == 4
