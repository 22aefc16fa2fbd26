"""Covariance estimators for (weighted) Cox fits.

``cov_model`` is the inverse information, ``cov_robust`` the
Lin-Wei sandwich for unweighted fits, and ``cov_iplw`` the sandwich for
inverse-linkage-weighted fits, which also accounts for the linkage
model having been estimated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coxfit import _index, _sweep
from .errors import LinkedCoxError, SingularHessian, SingularLinkageInfo

__all__ = [
    "InfluenceSet",
    "influence_residuals",
    "cov_model",
    "cov_robust",
    "cov_iplw",
    "PSD_SLACK",
]

PSD_SLACK = 1e-8


@dataclass
class InfluenceSet:
    u: np.ndarray
    qe_hat: np.ndarray | None = None
    sigma_u: np.ndarray | None = None
    sigma0_inv: np.ndarray | None = None


def influence_residuals(episodes, beta_hat):
    """Per-subject score residuals at ``beta_hat``, shape ``(n, p)``.

    Row ``i`` is

        int [X_i(t) - xbar(t)] dN_i(t)
          - int Y_i(t) exp(beta'X_i(t)) / S0(t) [X_i(t) - xbar(t)] dNbar_w(t)

    with ``xbar = S1/S0`` and ``dNbar_w`` the weighted event increments
    divided by ``n``.  Subjects absent from ``episodes`` get zero rows.
    """
    idx = _index(episodes)
    ep = idx.ep
    beta = np.asarray(beta_hat, dtype=float)
    sw = _sweep(idx, beta, order=1)
    mean = sw.s1 / sw.s0[:, None]
    resid = np.zeros((len(ep), ep.p))

    # event part
    er = idx.event_rows
    resid[er] = ep.x[er] - mean[idx.event_slot]

    # compensator part, summed over event times inside each row's window
    a = idx.dw / sw.s0
    ca = np.concatenate([[0.0], np.cumsum(a)])
    cam = np.vstack([np.zeros((1, ep.p)), np.cumsum(a[:, None] * mean, axis=0)])
    lo = np.searchsorted(idx.times, ep.start, "right")
    hi = np.searchsorted(idx.times, ep.stop, "right")
    e = np.exp(sw.eta - sw.shift)
    resid -= e[:, None] * (ep.x * (ca[hi] - ca[lo])[:, None] - (cam[hi] - cam[lo]))

    u = np.zeros((ep.n, ep.p))
    np.add.at(u, ep.subject, resid)
    return u


def _inverse(fit):
    a = np.asarray(fit.hessian, dtype=float)
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise SingularHessian("information matrix is not positive definite") from None
    inv = np.linalg.inv(a)
    return (inv + inv.T) / 2


def _sandwich(a_inv, meat, n):
    cov = a_inv @ meat @ a_inv / n
    return (cov + cov.T) / 2


def _meat(u, w=None):
    uw = u if w is None else u * w[:, None]
    m = uw.T @ uw / u.shape[0]
    return (m + m.T) / 2


def _check_psd(m, what):
    eig = np.linalg.eigvalsh(m)
    top = max(eig.max(), 0.0)
    if eig.min() < -PSD_SLACK * max(top, np.finfo(float).tiny):
        raise LinkedCoxError(f"{what} is not positive semi-definite (min eigenvalue {eig.min():.3g})")


def cov_model(fit):
    """(1/n) A^{-1}."""
    return _inverse(fit) / fit.n


def cov_robust(fit, influence):
    """(1/n) A^{-1} B A^{-1} with B = (1/n) sum U_i U_i'."""
    u = influence.u if isinstance(influence, InfluenceSet) else np.asarray(influence)
    a_inv = _inverse(fit)
    return _sandwich(a_inv, _meat(u, np.ones(u.shape[0])), fit.n)


def cov_iplw(fit, influence, linkage_fit, weights, q, zero_qe=False):
    """Sandwich covariance for the inverse-linkage-weighted estimator.

    The meat is

        (1/n) sum w_i^2 U_i U_i'  -  Qe' Sigma_gamma^{-1} Qe,
        Qe = (1/n) sum w_i I(Q_i = 0) (1 - pi_i) Xt_i U_i'

    where ``Xt`` is the linkage design (intercept first) and
    ``Sigma_gamma`` the averaged logistic information.  The weighted
    empirical mean stands in for the expectation in ``Qe`` because
    ``U_i`` is unobserved for unlinked in-trial-censored subjects.

    Returns the covariance; ``influence`` is completed in place with
    ``qe_hat``, ``sigma_u`` and ``sigma0_inv``.
    """
    inf = influence if isinstance(influence, InfluenceSet) else InfluenceSet(np.asarray(influence))
    u = inf.u
    n = u.shape[0]
    w = np.asarray(weights, dtype=float)
    a_inv = _inverse(fit)
    meat = _meat(u, w)
    if zero_qe or linkage_fit is None:
        qe = np.zeros((0, u.shape[1]))
    else:
        xt = linkage_fit.design
        q0 = np.asarray(q) == 0
        c = w * q0 * (1.0 - linkage_fit.pi_hat)
        qe = (xt * c[:, None]).T @ u / n
        try:
            chol = np.linalg.cholesky(linkage_fit.info)
        except np.linalg.LinAlgError:
            raise SingularLinkageInfo("linkage information matrix is singular") from None
        half = np.linalg.solve(chol, qe)
        corr = half.T @ half
        meat = meat - (corr + corr.T) / 2
    _check_psd(meat, "IPLW score variance")
    inf.qe_hat, inf.sigma_u, inf.sigma0_inv = qe, meat, a_inv
    return _sandwich(a_inv, meat, fit.n)
