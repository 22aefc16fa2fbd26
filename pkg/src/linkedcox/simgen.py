"""Seeded generators for the simulation scenarios.

Generators return a fully linked :class:`~linkedcox.dataset.Cohort` (the
latent view); :func:`gen_linkage` then draws ``L`` and masks the outcomes
of unlinked in-trial-censored subjects.  All randomness comes from
:func:`linkedcox.rng.stream`, one stream per (seed, replication, variable).
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import ChangePointSpec, Cohort
from .errors import InvalidInput
from .rng import stream

__all__ = [
    "Scenario",
    "Mechanism",
    "Analysis",
    "GapMode",
    "ScenarioConfig",
    "gen_td_changepoint",
    "gen_motivating",
    "gen_gap_scenario",
    "remedy_transform",
    "gap_outcomes",
    "gen_linkage",
    "linkage_probability",
    "simulate",
    "analysis_design",
    "piecewise_exp_inverse",
]


class Scenario(str, enum.Enum):
    TD_CHANGEPOINT = "TdChangePoint"
    MOTIVATING = "MotivatingSquared"
    GAP = "GapScenario"


class Mechanism(str, enum.Enum):
    LCAR = "LCAR"
    CLAR = "CLAR"
    LNAR_T = "LNAR_T"
    LNAR_C2 = "LNAR_C2"


class Analysis(str, enum.Enum):
    CORRECT = "Correct"
    MISSPECIFIED = "Misspecified"


class GapMode(str, enum.Enum):
    REMEDY = "on"      # gapped subjects censored at trial exit
    IGNORE = "off"     # gap ignored: follow-up seen as if continuous
    NAIVE = "naive"    # use post-gap follow-up when available (biased)


_DEFAULTS = {
    Scenario.TD_CHANGEPOINT: dict(beta_true=(-math.log(4), math.log(1.5), 0.5), tau1=5.0, tau2=16.0),
    Scenario.MOTIVATING: dict(beta_true=(-math.log(2), math.log(2), 0.2), tau1=3.0, tau2=16.0),
    Scenario.GAP: dict(beta_true=(-math.log(2), math.log(2), 0.2), tau1=3.5, tau2=16.0),
}


def _enum(cls, v):
    if isinstance(v, cls):
        return v
    s = str(v).strip()
    for m in cls:
        if s.lower() in (m.value.lower(), m.name.lower(), m.name.lower().replace("_", "-")):
            return m
    raise InvalidInput(f"invalid {cls.__name__}: {v!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = Scenario.TD_CHANGEPOINT
    n: int = 2000
    beta_true: tuple = None
    tau1: float = None
    tau2: float = None
    mechanism: Mechanism = Mechanism.CLAR
    analysis: Analysis = Analysis.CORRECT
    seed: int = 0
    remedy: GapMode = GapMode.REMEDY

    def __post_init__(self):
        sc = _enum(Scenario, self.scenario)
        object.__setattr__(self, "scenario", sc)
        object.__setattr__(self, "mechanism", _enum(Mechanism, self.mechanism))
        object.__setattr__(self, "analysis", _enum(Analysis, self.analysis))
        object.__setattr__(self, "remedy", _enum(GapMode, self.remedy))
        for k, v in _DEFAULTS[sc].items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        if len(self.beta_true) != 3:
            raise InvalidInput("beta_true must have three entries")
        if not self.tau1 < self.tau2:
            raise InvalidInput("tau1 must be below tau2")
        if int(self.n) < 1:
            raise InvalidInput("n must be at least 1")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "seed", int(self.seed))
        if sc is Scenario.GAP and self.analysis is Analysis.MISSPECIFIED:
            raise InvalidInput("the gap scenario has no misspecified analysis")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, enum.Enum):
                d[k] = v.value
        d["beta_true"] = list(self.beta_true)
        return d


def piecewise_exp_inverse(e, rate0, rate1, cut):
    """Failure time with hazard ``rate0`` before ``cut`` and ``rate1`` after.

    ``e`` are unit-exponential draws (cumulative-hazard scale).
    """
    e = np.asarray(e, dtype=float)
    h_cut = rate0 * cut
    return np.where(e < h_cut, e / rate0, cut + (e - h_cut) / rate1)


def _bern(seed, rep, tag, n, p):
    return (stream(seed, rep, tag).random(n) < p).astype(float)


def _exp(seed, rep, tag, n):
    return stream(seed, rep, tag).standard_exponential(n)


def _normal(seed, rep, tag, n, mean, sd):
    return mean + sd * stream(seed, rep, tag).standard_normal(n)


def _assemble(t, c1, c2, z, names, aux=None, gap=None, gap_len=None, interval=None,
              t_obs=None, delta=None):
    n = len(t)
    c = np.maximum(c1, c2)
    if t_obs is None:
        t_obs = np.minimum(t, c)
        delta = (t <= c).astype(float)
    q = (t <= c1).astype(np.int8)
    return Cohort(
        id=np.arange(1, n + 1, dtype=np.int64),
        z1=z,
        c1=c1,
        q=q,
        l=np.ones(n, dtype=np.int8),
        t_obs=t_obs.copy(),
        delta=delta.copy(),
        c2=c2.copy(),
        gap=np.zeros(n, dtype=np.int8) if gap is None else gap.astype(np.int8),
        gap_len=np.full(n, np.nan) if gap_len is None else gap_len,
        covariate_names=names,
        aux=aux or {},
        t_fail=t,
        c2_full=c2,
        t_obs_full=t_obs,
        delta_full=delta,
        interval_censored=np.zeros(n, dtype=bool) if interval is None else interval,
    )


def gen_td_changepoint(config, replication=0):
    """Treatment effect that changes at the end of the trial.

    Hazard ``0.06 exp(b1 X1 + b2 X2)`` before ``tau1`` and
    ``exp(b3 X1)`` times that afterwards; X1 ~ Bernoulli(0.5),
    X2 ~ N(1, 1); trial censoring Exp(0.01 X1 + 0.03) capped at ``tau1``;
    follow-up censoring adds Exp(0.05 X1 + 0.03), capped at ``tau2``.
    """
    n, s, r = config.n, config.seed, replication
    b1, b2, b3 = config.beta_true
    x1 = _bern(s, r, "x1", n, 0.5)
    x2 = _normal(s, r, "x2", n, 1.0, 1.0)
    rate0 = 0.06 * np.exp(b1 * x1 + b2 * x2)
    rate1 = rate0 * np.exp(b3 * x1)
    t = piecewise_exp_inverse(_exp(s, r, "t_fail", n), rate0, rate1, config.tau1)
    c1 = np.minimum(_exp(s, r, "c1", n) / (0.01 * x1 + 0.03), config.tau1)
    c2 = np.minimum(c1 + _exp(s, r, "c2", n) / (0.05 * x1 + 0.03), config.tau2)
    return _assemble(t, c1, c2, np.column_stack([x1, x2]), ("z1_1", "z1_2"))


def gen_motivating(config, replication=0):
    """Hazard quadratic in X3; the working model is linear in X3.

    ``0.05 exp(b1 X1 + b2 X2 + b3 X3^2)`` with X1 ~ Bernoulli(0.5),
    X2 ~ N(-1, 1), X3 | X2 ~ N(X2, sd 2).  ``aux['z1_3_sq']`` holds X3^2
    for the correctly specified analysis.
    """
    n, s, r = config.n, config.seed, replication
    b1, b2, b3 = config.beta_true
    x1 = _bern(s, r, "x1", n, 0.5)
    x2 = _normal(s, r, "x2", n, -1.0, 1.0)
    x3 = x2 + 2.0 * stream(s, r, "x3").standard_normal(n)
    rate = 0.05 * np.exp(b1 * x1 + b2 * x2 + b3 * x3 ** 2)
    t = _exp(s, r, "t_fail", n) / rate
    c1 = np.minimum(_exp(s, r, "c1", n) / (0.1 * x1 + 0.05), config.tau1)
    c2 = np.minimum(c1 + _exp(s, r, "c2", n) / (0.8 * x1 + 0.03), config.tau2)
    return _assemble(t, c1, c2, np.column_stack([x1, x2, x3]), ("z1_1", "z1_2", "z1_3"),
                     aux={"z1_3_sq": x3 ** 2})


def gap_outcomes(t, c1, c2, gap, start, mode):
    """Observed ``(t_obs, delta)`` of a gap scenario under a handling mode.

    ``REMEDY`` censors every gapped subject at ``c1``; ``NAIVE`` censors
    at ``c1`` only those whose event fell inside the gap and otherwise uses
    the post-gap follow-up; ``IGNORE`` treats follow-up as continuous.
    """
    mode = _enum(GapMode, mode)
    c = np.maximum(c1, c2)
    full_t, full_d = np.minimum(t, c), (t <= c).astype(float)
    g = gap == 1
    if mode is GapMode.IGNORE:
        return full_t, full_d
    if mode is GapMode.REMEDY:
        return (np.where(g, np.minimum(t, c1), full_t),
                np.where(g, (t <= c1).astype(float), full_d))
    in_gap = g & (c1 < t) & (t < start)
    return np.where(in_gap, c1, full_t), np.where(in_gap, 0.0, full_d)


def gen_gap_scenario(config, replication=0):
    """Gap between trial exit and the start of observational follow-up.

    Hazard ``0.15 exp(b1 X1 + b2 X2 + b3 X3)``, X2 ~ N(-1, 1),
    X3 ~ N(1, sd 2), C1 ~ U(0, 3.5); with probability 0.5 follow-up
    starts ``U ~ U(1, 2)`` after C1.  Outcomes follow ``config.remedy``;
    subjects whose event falls inside the gap are flagged
    ``interval_censored`` in every mode.
    """
    n, s, r = config.n, config.seed, replication
    b1, b2, b3 = config.beta_true
    x1 = _bern(s, r, "x1", n, 0.5)
    x2 = _normal(s, r, "x2", n, -1.0, 1.0)
    x3 = _normal(s, r, "x3", n, 1.0, 2.0)
    rate = 0.15 * np.exp(b1 * x1 + b2 * x2 + b3 * x3)
    t = _exp(s, r, "t_fail", n) / rate
    c1 = np.minimum(stream(s, r, "c1").uniform(0.0, 3.5, n), config.tau1)
    gap = _bern(s, r, "gap", n, 0.5)
    u = stream(s, r, "gap_len").uniform(1.0, 2.0, n)
    start = c1 + u * gap
    c2 = np.minimum(start + _exp(s, r, "c2", n) / (0.8 * x1 + 0.03), config.tau2)
    interval = (gap == 1) & (c1 < t) & (t < start)
    t_obs, delta = gap_outcomes(t, c1, c2, gap, start, config.remedy)
    return _assemble(t, c1, c2, np.column_stack([x1, x2, x3]), ("z1_1", "z1_2", "z1_3"),
                     gap=gap, gap_len=np.where(gap == 1, u, np.nan), interval=interval,
                     t_obs=t_obs, delta=delta)


def _remask(cohort, t_full, d_full):
    c3 = (cohort.l == 0) & (cohort.q == 0)
    return replace(
        cohort,
        t_obs_full=t_full,
        delta_full=d_full,
        t_obs=np.where(c3, np.nan, t_full),
        delta=np.where(c3, np.nan, d_full),
    )


def remedy_transform(cohort):
    """Censor every gapped subject at trial exit; others unchanged."""
    g = cohort.gap == 1
    t, c1 = cohort.t_fail, cohort.c1
    t_full = np.where(g, np.minimum(t, c1), cohort.t_obs_full)
    d_full = np.where(g, (t <= c1).astype(float), cohort.delta_full)
    out = _remask(cohort, t_full, d_full)
    return replace(out, interval_censored=np.zeros(cohort.n, dtype=bool))


def linkage_probability(cohort, mechanism, lcar_prob=0.5):
    """P(L = 1) per subject under one of the four mechanisms."""
    mechanism = _enum(Mechanism, mechanism)
    n = cohort.n
    if mechanism is Mechanism.LCAR:
        return np.full(n, lcar_prob)
    x1, x2 = cohort.z1[:, 0], cohort.z1[:, 1]
    logit = -0.25 + 0.5 * x1 + 0.5 * x2
    if mechanism is Mechanism.LNAR_T:
        logit = logit - 0.01 * cohort.t_obs_full - 0.01 * cohort.delta_full
    elif mechanism is Mechanism.LNAR_C2:
        logit = logit - 0.1 * cohort.c2_full - 0.1 * cohort.delta_full
    p0 = 1.0 / (1.0 + np.exp(-logit))
    return np.where(cohort.q == 1, 0.5, p0)


def gen_linkage(cohort, mechanism, seed, replication=0, lcar_prob=0.5):
    """Draw linkage indicators and mask unlinked in-trial-censored outcomes."""
    p = linkage_probability(cohort, mechanism, lcar_prob)
    l = (stream(seed, replication, "linkage").random(cohort.n) < p).astype(np.int8)
    out = replace(cohort, l=l, c2=np.where(l == 1, cohort.c2_full, np.nan))
    return _remask(out, cohort.t_obs_full, cohort.delta_full)


_GENERATORS = {
    Scenario.TD_CHANGEPOINT: gen_td_changepoint,
    Scenario.MOTIVATING: gen_motivating,
    Scenario.GAP: gen_gap_scenario,
}


def simulate(config, replication=0):
    """One replication: latent data, then linkage and masking."""
    cohort = _GENERATORS[config.scenario](config, replication)
    lcar = 0.4 if config.scenario is Scenario.GAP else 0.5
    return gen_linkage(cohort, config.mechanism, config.seed, replication, lcar)


def analysis_design(config):
    """Covariate columns and change-point spec of the fitted working model."""
    if config.scenario is Scenario.TD_CHANGEPOINT:
        if config.analysis is Analysis.CORRECT:
            return None, ChangePointSpec((config.tau1,), 0)
        return None, None
    if config.scenario is Scenario.MOTIVATING and config.analysis is Analysis.CORRECT:
        return ("z1_1", "z1_2", "z1_3_sq"), None
    return None, None
