"""End-to-end estimators: Oracle, CC, CC+, NLAC and IPLW."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .coxfit import CoxFit, _RiskIndex, newton_solve
from .dataset import as_cohort, split_episodes
from .errors import InvalidInput, NoConvergence
from .linkage import compute_weights, fit_linkage
from .variance import cov_iplw, cov_robust, influence_residuals

__all__ = [
    "Method",
    "FitReport",
    "Z_95",
    "fit_oracle",
    "fit_cc",
    "fit_ccplus",
    "fit_nlac",
    "fit_iplw",
    "fit_method",
    "design_names",
]

Z_95 = 1.960


class Method(str, enum.Enum):
    ORACLE = "Oracle"
    CC = "CC"
    CCPLUS = "CCPlus"
    NLAC = "NLAC"
    IPLW = "IPLW"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("+", "plus").replace("-", "")
        for m in cls:
            if m.value.lower() == key:
                return m
        raise InvalidInput(f"unknown method {name!r}")


@dataclass
class FitReport:
    method: Method
    cox: CoxFit
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    hr: np.ndarray
    hr_lo: np.ndarray
    hr_hi: np.ndarray
    n_used: int
    names: tuple = ()
    diagnostics: list = field(default_factory=list)
    linkage_gamma: np.ndarray | None = None

    @property
    def beta(self):
        return self.cox.beta_hat

    def covariance(self):
        if self.method is Method.IPLW:
            return self.cox.cov_iplw
        return self.cox.cov_robust

    def to_dict(self):
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            if isinstance(v, enum.Enum):
                return v.value
            if isinstance(v, np.generic):
                return v.item()
            return v

        d = {f: getattr(self, f) for f in self.__dataclass_fields__ if f != "cox"}
        d["cox"] = asdict(self.cox)
        d["beta_hat"] = self.cox.beta_hat
        return conv(d)


def design_names(cohort, spec):
    names = list(cohort.covariate_names)
    if spec is not None:
        a = names[spec.interacting_covariate_index]
        names += [f"{a}*I(t>{c:g})" for c in spec.change_times]
    return tuple(names)


def _select(cohort, columns):
    if columns is None:
        return cohort
    z = cohort.covariates(columns)
    return replace(cohort, z1=z, covariate_names=tuple(columns))


def _report(method, cohort, fit, cov, n_used, spec, diagnostics, gamma=None):
    var = np.diag(cov)
    se = np.sqrt(np.maximum(var, 0.0))
    b = fit.beta_hat
    lo, hi = b - Z_95 * se, b + Z_95 * se
    return FitReport(
        method=method, cox=fit, se=se, ci_lo=lo, ci_hi=hi,
        hr=np.exp(b), hr_lo=np.exp(lo), hr_hi=np.exp(hi),
        n_used=int(n_used), names=design_names(cohort, spec),
        diagnostics=list(diagnostics), linkage_gamma=gamma,
    )


def _cox(cohort, spec, weights, tol, max_iter):
    ep = split_episodes(cohort, spec, weights)
    idx = _RiskIndex(ep)
    fit = newton_solve(idx, tol=tol, max_iter=max_iter)
    if not fit.converged:
        raise NoConvergence(
            f"Cox fit did not converge in {max_iter} iterations (score {fit.score_norm:.3g})",
            best=fit,
        )
    return idx, fit


def _unweighted(method, cohort, spec, n_used, tol, max_iter, diagnostics=()):
    idx, fit = _cox(cohort, spec, None, tol, max_iter)
    u = influence_residuals(idx, fit.beta_hat)
    fit.cov_robust = cov_robust(fit, u)
    return _report(method, cohort, fit, fit.cov_robust, n_used, spec, diagnostics)


def fit_oracle(subjects, spec=None, columns=None, tol=1e-9, max_iter=50):
    """Unweighted fit on every subject's full outcome (simulation only)."""
    cohort = _select(as_cohort(subjects), columns)
    if cohort.has_latent:
        cohort = cohort.oracle_view()
    if np.any(np.isnan(cohort.t_obs)) or np.any(np.isnan(cohort.delta)):
        raise InvalidInput("oracle fit needs outcomes for every subject")
    return _unweighted(Method.ORACLE, cohort, spec, cohort.n, tol, max_iter)


def fit_cc(subjects, spec=None, columns=None, tol=1e-9, max_iter=50):
    """Complete cases: linked subjects only."""
    cohort = _select(as_cohort(subjects), columns)
    keep = cohort.l == 1
    if not keep.any():
        raise InvalidInput("no linked subjects")
    sub = cohort.subset(keep)
    return _unweighted(Method.CC, sub, spec, sub.n, tol, max_iter)


def fit_ccplus(subjects, spec=None, columns=None, tol=1e-9, max_iter=50):
    """Linked subjects plus unlinked subjects with an in-trial event."""
    cohort = _select(as_cohort(subjects), columns)
    keep = (cohort.l + cohort.q) > 0
    if not keep.any():
        raise InvalidInput("no subjects with observed outcome")
    sub = cohort.subset(keep)
    return _unweighted(Method.CCPLUS, sub, spec, sub.n, tol, max_iter)


def fit_nlac(subjects, spec=None, columns=None, tol=1e-9, max_iter=50):
    """Unlinked in-trial-censored subjects are censored at their trial exit."""
    cohort = _select(as_cohort(subjects), columns)
    c3 = (cohort.l == 0) & (cohort.q == 0)
    t = np.where(c3, cohort.c1, cohort.t_obs)
    d = np.where(c3, 0.0, cohort.delta)
    diags = [f"{int(c3.sum())} unlinked subject(s) censored at trial exit"]
    return _unweighted(Method.NLAC, cohort.with_outcomes(t, d), spec, cohort.n, tol, max_iter,
                       diags)


def fit_iplw(subjects, spec=None, linkage_covariates=None, columns=None, floor=0.01,
             truncate=False, tol=1e-9, max_iter=50):
    """Two-step inverse-probability-of-linkage weighted fit.

    Step 1 fits the logistic linkage model on ``Q = 0`` subjects; step 2
    solves the weighted partial score over subjects with ``L + Q > 0``.
    When every ``Q = 0`` subject is linked the logistic MLE does not exist;
    its limit (all probabilities one, unit weights) is used instead and a
    diagnostic recorded.
    """
    full = as_cohort(subjects)
    cohort = _select(full, columns)
    q0 = cohort.q == 0
    diags = []
    lfit = None
    if q0.any() and np.all(cohort.l[q0] == 1):
        w = np.where((cohort.l + cohort.q) > 0, 1.0, 0.0)
        diags.append("all in-trial-censored subjects linked: unit weights")
        gamma = None
    else:
        lcols = linkage_covariates
        if lcols is None and columns is not None:
            lcols = tuple(columns)
        lfit = fit_linkage(full, columns=lcols)
        wv = compute_weights(cohort, lfit, floor=floor, truncate=truncate)
        w = wv.w
        diags += wv.diagnostics
        gamma = lfit.gamma_hat
        pi = lfit.pi_hat[q0]
        diags.append(f"min fitted linkage probability {pi.min():.4g}")
        pos = w[w > 0]
        diags.append(f"weight range [{pos.min():.4g}, {pos.max():.4g}]")
    idx, fit = _cox(cohort, spec, w, tol, max_iter)
    u = influence_residuals(idx, fit.beta_hat)
    fit.cov_iplw = cov_iplw(fit, u, lfit, w, cohort.q, zero_qe=lfit is None)
    n_used = int(((cohort.l + cohort.q) > 0).sum())
    return _report(Method.IPLW, cohort, fit, fit.cov_iplw, n_used, spec, diags, gamma)


_DISPATCH = {
    Method.ORACLE: fit_oracle,
    Method.CC: fit_cc,
    Method.CCPLUS: fit_ccplus,
    Method.NLAC: fit_nlac,
    Method.IPLW: fit_iplw,
}


def fit_method(method, subjects, spec=None, **kw):
    m = method if isinstance(method, Method) else Method.parse(method)
    if m is not Method.IPLW:
        kw.pop("linkage_covariates", None)
        kw.pop("floor", None)
        kw.pop("truncate", None)
    return _DISPATCH[m](subjects, spec, **kw)
