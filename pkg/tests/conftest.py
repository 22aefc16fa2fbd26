"""Shared fixtures and independent reference implementations.

The ``brute_*`` helpers recompute Cox quantities by looping over
subjects and event times in plain Python.  They share no code with the
vectorised engine and serve as oracles.
"""

import math

import numpy as np
import pytest

from linkedcox.dataset import Episodes


def random_instance(rng, n=8, p=2, ties=False, weighted=False, episodes=False):
    """Small random Cox data set as Episodes.

    With ``episodes=True`` each subject's follow-up is cut at a random
    time and the second row gets a shifted covariate, so covariates vary
    over time.
    """
    t = rng.exponential(1.0, n)
    if ties:
        t = np.round(t * 4) / 4 + 0.25
    d = (rng.random(n) < 0.7).astype(int)
    d[0] = 1
    x = rng.normal(size=(n, p))
    w = rng.choice([1.0, 2.0, 0.5], size=n) if weighted else np.ones(n)
    if not episodes:
        return Episodes.from_arrays(t, d, x, w)
    subj, start, stop, ev, xs, ws = [], [], [], [], [], []
    for i in range(n):
        cut = t[i] * rng.uniform(0.2, 0.8)
        shift = rng.normal(size=p)
        subj += [i, i]
        start += [0.0, cut]
        stop += [cut, t[i]]
        ev += [0, d[i]]
        xs += [x[i], x[i] + shift]
        ws += [w[i], w[i]]
    return Episodes(np.array(subj), np.array(start), np.array(stop), np.array(ev, dtype=np.int8),
                    np.array(xs), np.array(ws), n, np.array(subj))


def rows_at_risk(ep, t):
    return [k for k in range(len(ep)) if ep.start[k] < t <= ep.stop[k]]


def event_times(ep):
    return sorted({float(ep.stop[k]) for k in range(len(ep)) if ep.event[k] == 1 and ep.weight[k] > 0})


def brute_sums(ep, beta, t):
    p = ep.p
    s0, s1, s2 = 0.0, np.zeros(p), np.zeros((p, p))
    for k in rows_at_risk(ep, t):
        r = ep.weight[k] * math.exp(float(np.dot(ep.x[k], beta)))
        s0 += r
        s1 += r * ep.x[k]
        s2 += r * np.outer(ep.x[k], ep.x[k])
    return s0 / ep.n, s1 / ep.n, s2 / ep.n


def brute_loglik(ep, beta):
    total = 0.0
    for k in range(len(ep)):
        if ep.event[k] == 1 and ep.weight[k] > 0:
            t = ep.stop[k]
            denom = sum(ep.weight[j] * math.exp(float(np.dot(ep.x[j], beta))) for j in rows_at_risk(ep, t))
            total += ep.weight[k] * (float(np.dot(ep.x[k], beta)) - math.log(denom))
    return total / ep.n


def brute_score(ep, beta):
    u = np.zeros(ep.p)
    for k in range(len(ep)):
        if ep.event[k] == 1 and ep.weight[k] > 0:
            s0, s1, _ = brute_sums(ep, beta, ep.stop[k])
            u += ep.weight[k] * (ep.x[k] - s1 / s0)
    return u / ep.n


def brute_hessian(ep, beta):
    a = np.zeros((ep.p, ep.p))
    for k in range(len(ep)):
        if ep.event[k] == 1 and ep.weight[k] > 0:
            s0, s1, s2 = brute_sums(ep, beta, ep.stop[k])
            m = s1 / s0
            a += ep.weight[k] * (s2 / s0 - np.outer(m, m))
    return a / ep.n


def brute_residuals(ep, beta):
    """Per-subject score residuals by explicit enumeration of event times."""
    p = ep.p
    u = np.zeros((ep.n, p))
    times = event_times(ep)
    for k in range(len(ep)):
        i = ep.subject[k]
        xk = ep.x[k]
        if ep.event[k] == 1:
            s0, s1, _ = brute_sums(ep, beta, ep.stop[k])
            u[i] += xk - s1 / s0
        for t in times:
            if ep.start[k] < t <= ep.stop[k]:
                s0, s1, _ = brute_sums(ep, beta, t)
                dn = sum(ep.weight[j] for j in range(len(ep)) if ep.event[j] == 1 and ep.stop[j] == t) / ep.n
                u[i] -= math.exp(float(np.dot(xk, beta))) / s0 * (xk - s1 / s0) * dn
    return u


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
