"""Weighted Cox partial likelihood on counting-process episodes.

All quantities follow the ``1/n`` normalisation: with row weights ``w``,

    S_k(beta, t) = (1/n) sum_rows w Y(t) exp(beta'x) x^{(x)k}

where a row ``(start, stop]`` is at risk at ``t`` when ``start < t <= stop``.
Ties among event times use the Breslow convention: every event at ``t``
shares the full risk set at ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyRiskSet, InvalidInput, SingularHessian

__all__ = [
    "RiskSums",
    "CoxFit",
    "risk_sums",
    "score",
    "hessian",
    "log_partial_likelihood",
    "newton_solve",
]


@dataclass(frozen=True)
class RiskSums:
    s0: float
    s1: np.ndarray
    s2: np.ndarray


@dataclass
class CoxFit:
    beta_hat: np.ndarray
    loglik: float
    score_norm: float
    hessian: np.ndarray
    iterations: int
    converged: bool
    n: int
    cov_model: np.ndarray | None = None
    cov_robust: np.ndarray | None = None
    cov_iplw: np.ndarray | None = None


class _RiskIndex:
    """beta-independent bookkeeping for sweeping risk sets over event times."""

    def __init__(self, ep):
        if len(ep) and np.any(ep.start >= ep.stop):
            raise InvalidInput("episode rows need start < stop")
        self.ep = ep
        ev = (ep.event == 1) & (ep.weight > 0)
        self.times, inv = np.unique(ep.stop[ev], return_inverse=True)
        self.event_rows = np.flatnonzero(ev)
        self.event_slot = inv
        w_ev = ep.weight[ev]
        self.dw = np.bincount(inv, weights=w_ev, minlength=len(self.times))
        self.xsum = np.zeros((len(self.times), ep.p))
        np.add.at(self.xsum, inv, w_ev[:, None] * ep.x[ev])
        self.stop_order = np.argsort(ep.stop, kind="stable")
        self.start_order = np.argsort(ep.start, kind="stable")
        self.stop_idx = np.searchsorted(ep.stop[self.stop_order], self.times, "left")
        self.start_idx = np.searchsorted(ep.start[self.start_order], self.times, "left")
        # rows with start >= every event time never enter a risk set
        self.any_late_start = bool(np.any(self.start_idx < len(ep)))
        p = ep.p
        feats = np.empty((len(ep), 1 + p + p * p))
        feats[:, 0] = 1.0
        feats[:, 1:1 + p] = ep.x
        feats[:, 1 + p:] = (ep.x[:, :, None] * ep.x[:, None, :]).reshape(len(ep), p * p)
        self.feats_stop = feats[self.stop_order]
        self.feats_start = feats[self.start_order]

    def at_times(self, values):
        """sum over rows at risk at each event time of ``values`` (rows first)."""
        out = _suffix(values[self.stop_order])[self.stop_idx]
        if self.any_late_start:
            out = out - _suffix(values[self.start_order])[self.start_idx]
        return out

    def moments(self, risk, order):
        """Risk-weighted [1, x, xx'] sums at every event time."""
        p = self.ep.p
        width = 1 + p + p * p if order >= 2 else 1 + p
        out = _suffix(risk[self.stop_order, None] * self.feats_stop[:, :width])[self.stop_idx]
        if self.any_late_start:
            late = risk[self.start_order, None] * self.feats_start[:, :width]
            out -= _suffix(late)[self.start_idx]
        return out


def _suffix(a):
    """suffix sums with a trailing zero: out[k] = a[k:].sum()."""
    out = np.empty((a.shape[0] + 1,) + a.shape[1:])
    out[-1] = 0.0
    np.cumsum(a[::-1], axis=0, out=out[-2::-1])
    return out


@dataclass
class _Sweep:
    s0: np.ndarray      # (K,) centred, unnormalised: sum w exp(eta - c)
    s1: np.ndarray      # (K, p)
    s2: np.ndarray | None
    shift: float        # c
    eta: np.ndarray     # per row
    risk: np.ndarray    # per row, w exp(eta - c)


def _sweep(idx, beta, order=2):
    ep = idx.ep
    eta = ep.x @ beta
    shift = float(eta.max()) if len(eta) else 0.0
    risk = ep.weight * np.exp(eta - shift)
    p = ep.p
    m = idx.moments(risk, order)
    s0 = m[:, 0]
    if np.any(s0[idx.dw > 0] <= 0):
        raise EmptyRiskSet("no weighted subject at risk at an event time")
    s1 = m[:, 1:1 + p]
    s2 = m[:, 1 + p:].reshape(-1, p, p) if order >= 2 else None
    return _Sweep(s0, s1, s2, shift, eta, risk)


def _index(episodes):
    return episodes if isinstance(episodes, _RiskIndex) else _RiskIndex(episodes)


def _check_events(idx):
    if idx.dw.sum() <= 0:
        raise EmptyRiskSet("no weighted events")


def risk_sums(episodes, beta, t):
    """S0, S1, S2 at a single time ``t`` (rows with start < t <= stop)."""
    ep = episodes
    beta = np.asarray(beta, dtype=float)
    at = (ep.start < t) & (t <= ep.stop)
    r = ep.weight[at] * np.exp(ep.x[at] @ beta)
    x = ep.x[at]
    s0 = r.sum() / ep.n
    if s0 <= 0:
        is_event = np.any((ep.stop == t) & (ep.event == 1) & (ep.weight > 0))
        if is_event:
            raise EmptyRiskSet(f"empty risk set at event time {t}")
    s1 = (r[:, None] * x).sum(axis=0) / ep.n
    s2 = np.einsum("i,ij,ik->jk", r, x, x) / ep.n
    return RiskSums(float(s0), s1, s2)


def score(episodes, beta):
    idx = _index(episodes)
    _check_events(idx)
    sw = _sweep(idx, np.asarray(beta, dtype=float), order=1)
    return _score(idx, sw)


def _score(idx, sw):
    mean = sw.s1 / sw.s0[:, None]
    return (idx.xsum - idx.dw[:, None] * mean).sum(axis=0) / idx.ep.n


def hessian(episodes, beta):
    """A_n(beta): minus the derivative of the score."""
    idx = _index(episodes)
    _check_events(idx)
    sw = _sweep(idx, np.asarray(beta, dtype=float))
    return _hessian(idx, sw)


def _hessian(idx, sw):
    mean = sw.s1 / sw.s0[:, None]
    cov = sw.s2 / sw.s0[:, None, None] - mean[:, :, None] * mean[:, None, :]
    a = np.tensordot(idx.dw, cov, axes=1) / idx.ep.n
    return (a + a.T) / 2


def log_partial_likelihood(episodes, beta):
    idx = _index(episodes)
    _check_events(idx)
    beta = np.asarray(beta, dtype=float)
    return _loglik(idx, _sweep(idx, beta, order=0), beta)


def _loglik(idx, sw, beta):
    log_s0 = np.log(sw.s0) + sw.shift
    return float((idx.xsum @ beta - idx.dw * log_s0).sum() / idx.ep.n)


def _second_moment_diag(idx, sw):
    return (idx.dw[:, None] * np.einsum("kjj->kj", sw.s2) / sw.s0[:, None]).sum(axis=0) / idx.ep.n


def _solve_or_raise(a, g, moment_diag, rel_tol=1e-10):
    scale = np.sqrt(np.where(moment_diag > 0, moment_diag, 1.0))
    a_s = a / np.outer(scale, scale)
    eig = np.linalg.eigvalsh(a_s) if a_s.size else np.array([1.0])
    if np.any(moment_diag <= 0) or eig.min() <= rel_tol:
        raise SingularHessian(
            f"information matrix is singular (smallest scaled eigenvalue {eig.min():.3g})"
        )
    return np.linalg.solve(a, g)


def newton_solve(episodes, init=None, tol=1e-9, max_iter=50, max_halvings=20):
    """Maximise the weighted log partial likelihood by Newton-Raphson.

    Steps that lower the likelihood are halved up to ``max_halvings``
    times.  On failure to reach ``tol`` the best iterate is returned with
    ``converged=False``; callers decide whether that is fatal.

    Raises
    ------
    EmptyRiskSet
        No weighted events.
    SingularHessian
        The information matrix is (numerically) singular along the path.
    """
    idx = _index(episodes)
    _check_events(idx)
    p = idx.ep.p
    beta = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    sw = _sweep(idx, beta)
    ll = _loglik(idx, sw, beta)
    u = _score(idx, sw)
    a = _hessian(idx, sw)
    it = 0
    converged = bool(np.max(np.abs(u), initial=0.0) <= tol)
    while not converged and it < max_iter:
        step = _solve_or_raise(a, u, _second_moment_diag(idx, sw))
        it += 1
        for _ in range(max_halvings + 1):
            cand = beta + step
            sw_c = _sweep(idx, cand)
            ll_c = _loglik(idx, sw_c, cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-15 * max(1.0, abs(ll)):
                break
            step = step / 2
        else:
            break
        beta, sw, ll = cand, sw_c, ll_c
        u = _score(idx, sw)
        a = _hessian(idx, sw)
        converged = bool(np.max(np.abs(u)) <= tol)
    if converged:
        # the final information must be usable for variance estimation
        _solve_or_raise(a, u, _second_moment_diag(idx, sw))
    return CoxFit(
        beta_hat=beta,
        loglik=ll,
        score_norm=float(np.max(np.abs(u), initial=0.0)),
        hessian=a,
        iterations=it,
        converged=converged,
        n=idx.ep.n,
    )
