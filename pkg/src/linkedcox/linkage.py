"""Logistic model for the linkage probability and the resulting weights."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import as_cohort
from .errors import InvalidInput, NoConvergence, SeparationDetected, SingularDesign

__all__ = [
    "LinkageFit",
    "WeightVector",
    "PositivityWarning",
    "fit_linkage",
    "compute_weights",
    "linkage_design",
]

SEPARATION_BOUND = 30.0


class PositivityWarning(UserWarning):
    """Some fitted linkage probabilities fall below the positivity floor (D3)."""


@dataclass
class LinkageFit:
    gamma_hat: np.ndarray
    info: np.ndarray
    pi_hat: np.ndarray
    iterations: int
    converged: bool
    design: np.ndarray = field(repr=False)
    columns: tuple = ()
    score_norm: float = 0.0
    loglik: float = 0.0


@dataclass
class WeightVector:
    w: np.ndarray
    diagnostics: list = field(default_factory=list)


def linkage_design(cohort, columns=None):
    """Intercept plus the selected baseline covariates."""
    z = cohort.covariates(columns)
    return np.column_stack([np.ones(cohort.n), z])


def _expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _loglik(eta, y):
    # sum y*eta - log(1 + e^eta), overflow-safe
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_linkage(subjects, columns=None, tol=1e-10, max_iter=100, design=None):
    """Maximum-likelihood logistic fit of ``L`` on the ``Q = 0`` subjects.

    Convergence is declared when the score, averaged over all ``n``
    subjects, has sup-norm at most ``tol``.

    Parameters
    ----------
    subjects : Cohort or sequence of SubjectRecord
    columns : sequence of str, optional
        Covariate columns for the linkage model; defaults to all of ``z1``.
    design : ndarray, optional
        Explicit ``(n, d+1)`` design with the intercept column first.

    Raises
    ------
    SingularDesign
        The design restricted to ``Q = 0`` is rank deficient.
    SeparationDetected
        A coefficient exceeds 30 in absolute value, or ``L`` is constant
        among ``Q = 0`` subjects.
    NoConvergence
        ``max_iter`` Newton steps did not reach ``tol``.
    """
    cohort = as_cohort(subjects)
    n = cohort.n
    xt = linkage_design(cohort, columns) if design is None else np.asarray(design, dtype=float)
    q0 = cohort.q == 0
    x, y = xt[q0], cohort.l[q0].astype(float)
    if x.shape[0] == 0:
        raise InvalidInput("no in-trial-censored (Q=0) subjects to fit the linkage model on")
    if y.min() == y.max():
        raise SeparationDetected(
            f"linkage indicator is constant ({int(y[0])}) among Q=0 subjects"
        )
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularDesign("linkage design over Q=0 subjects is rank deficient")

    gamma = np.zeros(x.shape[1])
    eta = x @ gamma
    ll = _loglik(eta, y)
    it = 0
    converged = False
    while True:
        pi = _expit(eta)
        g = x.T @ (y - pi)
        if np.max(np.abs(g)) / n <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        h = (x * (pi * (1 - pi))[:, None]).T @ x
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            raise SingularDesign("singular logistic information during iteration") from None
        it += 1
        for _ in range(31):
            cand = gamma + step
            eta_c = x @ cand
            ll_c = _loglik(eta_c, y)
            if ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            step = step / 2
        gamma, eta, ll = cand, eta_c, ll_c
        if np.any(np.abs(gamma) > SEPARATION_BOUND):
            raise SeparationDetected(
                f"linkage coefficients diverging (|gamma| > {SEPARATION_BOUND:g})"
            )

    pi_all = _expit(xt @ gamma)
    wts = np.where(q0, pi_all * (1 - pi_all), 0.0)
    info = (xt * wts[:, None]).T @ xt / n
    fit = LinkageFit(
        gamma_hat=gamma,
        info=(info + info.T) / 2,
        pi_hat=pi_all,
        iterations=it,
        converged=converged,
        design=xt,
        columns=tuple(columns) if columns is not None else tuple(cohort.covariate_names),
        score_norm=float(np.max(np.abs(x.T @ (y - _expit(x @ gamma)))) / n),
        loglik=ll,
    )
    if not converged:
        raise NoConvergence("linkage model did not converge", best=fit)
    return fit


def compute_weights(subjects, fit, floor=0.01, truncate=False):
    """Inverse-linkage weights.

    ``1`` for in-trial events, ``1/pi`` for linked in-trial-censored
    subjects and ``0`` for the unlinked in-trial-censored.  Fitted
    probabilities below ``floor`` raise a :class:`PositivityWarning`; they
    are clipped to ``floor`` only when ``truncate`` is set.
    """
    cohort = as_cohort(subjects)
    pi = np.asarray(fit.pi_hat, dtype=float)
    q0 = cohort.q == 0
    diags = []
    low = q0 & (pi < floor)
    if np.any(low):
        msg = (f"positivity (D3): {int(low.sum())} in-trial-censored subject(s) have fitted "
               f"linkage probability below {floor:g} (min {pi[q0].min():.3g})")
        warnings.warn(msg, PositivityWarning, stacklevel=2)
        diags.append(msg)
        if truncate:
            pi = np.maximum(pi, floor)
            diags.append(f"linkage probabilities truncated at {floor:g}")
    w = np.where(cohort.q == 1, 1.0, np.where(cohort.l == 1, 1.0 / pi, 0.0))
    return WeightVector(w, diags)
