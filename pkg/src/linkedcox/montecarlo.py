"""Monte-Carlo replications, the reference-target pipeline and table output.

Replication ``r`` of a study draws its data from RNG streams keyed by
``(seed, r, tag)``, so replications are independent tasks that can run in
any order on any number of worker processes.  Results are reduced in
replication order, which makes a :class:`SimReport` a pure function of its
configuration.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (DegenerateScenario, EmptyRiskSet, InvalidInput, LinkedCoxError,
                     NoConvergence, SingularDesign)
from .estimators import Method, design_names, fit_method, fit_oracle
from .simgen import Analysis, ScenarioConfig, analysis_design, simulate

__all__ = [
    "Provenance",
    "TargetEstimate",
    "CellSummary",
    "SimReport",
    "estimate_target",
    "run_replications",
    "emit_table",
    "parse_csv_table",
    "cache_dir",
    "default_workers",
    "SCHEMA_VERSION",
    "TARGET_SEED",
]

SCHEMA_VERSION = 1
TARGET_SEED = 20_000_101
FAIL_TARGET = 0.01
FAIL_STUDY = 0.05
COVERAGE_FLAG = 0.90
DAGGER = "†"

# fit failures that are excluded and counted rather than propagated
_FIT_FAILURES = (NoConvergence, SingularDesign, EmptyRiskSet)


class Provenance(str, enum.Enum):
    TRUE_BETA = "TrueBeta"
    ORACLE_LARGE_N = "OracleLargeN"


@dataclass(frozen=True)
class TargetEstimate:
    beta_star: tuple
    mc_se: tuple
    provenance: Provenance
    n: int = 0
    n_reps: int = 0
    n_failed: int = 0

    def to_dict(self):
        return {
            "beta_star": list(self.beta_star),
            "mc_se": list(self.mc_se),
            "provenance": self.provenance.value,
            "n": self.n,
            "n_reps": self.n_reps,
            "n_failed": self.n_failed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            beta_star=tuple(float(b) for b in d["beta_star"]),
            mc_se=tuple(float(s) for s in d["mc_se"]),
            provenance=Provenance(d["provenance"]),
            n=int(d.get("n", 0)),
            n_reps=int(d.get("n_reps", 0)),
            n_failed=int(d.get("n_failed", 0)),
        )


@dataclass(frozen=True)
class CellSummary:
    """Aggregates for one (method, parameter) cell.

    ``empirical_sd`` is ``None`` when fewer than two replications succeeded.
    """

    method: str
    parameter: str
    bias: float
    mean_se: float
    empirical_sd: float | None
    coverage: float
    n_reps: int
    n_failed: int
    target: float


@dataclass
class SimReport:
    config: dict
    methods: list
    parameters: list
    cells: list
    target: TargetEstimate
    schema_version: int = SCHEMA_VERSION
    failures: dict = field(default_factory=dict)

    def cell(self, method, parameter):
        """Look up a cell by method and parameter (name or 0-based index)."""
        m = Method.parse(method).value
        p = self.parameters[parameter] if isinstance(parameter, int) else parameter
        for c in self.cells:
            if c.method == m and c.parameter == p:
                return c
        raise KeyError((m, p))

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "methods": list(self.methods),
            "parameters": list(self.parameters),
            "target": self.target.to_dict(),
            "failures": {k: dict(sorted(v.items())) for k, v in sorted(self.failures.items())},
            "cells": [vars(c).copy() for c in self.cells],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        try:
            if d.get("schema_version") != SCHEMA_VERSION:
                raise InvalidInput(f"unsupported report schema version {d.get('schema_version')!r}")
            cells = [CellSummary(**c) for c in d["cells"]]
            return cls(config=dict(d["config"]), methods=list(d["methods"]),
                       parameters=list(d["parameters"]), cells=cells,
                       target=TargetEstimate.from_dict(d["target"]),
                       failures=dict(d.get("failures", {})))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, InvalidInput):
                raise
            raise InvalidInput(f"not a simulation report: {exc}") from None

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"report is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise InvalidInput("report must be a JSON object")
        return cls.from_dict(d)


def default_workers():
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def cache_dir():
    env = os.environ.get("LINKEDCOX_CACHE_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "linkedcox"


# ---------------------------------------------------------------- workers

def _map(fn, args, workers):
    """Ordered map, in-process for one worker."""
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    chunk = max(1, len(args) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, args, chunksize=chunk))


def _replicate(task):
    config, methods, r, target = task
    columns, spec = analysis_design(config)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = simulate(config, r)
        for m in methods:
            try:
                rep = fit_method(m, data, spec, columns=columns)
            except _FIT_FAILURES as exc:
                out[m] = type(exc).__name__
                continue
            b = rep.beta
            lo, hi = rep.ci_lo, rep.ci_hi
            hit = (lo <= target) & (target <= hi)
            out[m] = (b.tolist(), rep.se.tolist(), hit.tolist())
    return out


def _oracle_beta(task):
    config, r = task
    columns, spec = analysis_design(config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = simulate(config, r)
        try:
            return fit_oracle(data, spec, columns=columns).beta.tolist()
        except _FIT_FAILURES:
            return None


# ---------------------------------------------------------------- target

def _target_key(config, n, n_reps, seed):
    d = config.to_dict()
    # the Oracle ignores linkage, so the mechanism does not enter the key
    d.pop("mechanism", None)
    d.update(n=n, seed=seed, n_reps=n_reps)
    blob = json.dumps(d, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20], d


def estimate_target(config, n_reps=1000, n=10_000, workers=None, refresh=False,
                    seed=TARGET_SEED, use_cache=True):
    """Parameter value that estimates converge to under ``config``.

    For a correctly specified analysis this is ``config.beta_true``.
    Otherwise it is the average of ``n_reps`` Oracle estimates at sample
    size ``n``, cached as JSON under :func:`cache_dir`.

    Raises
    ------
    DegenerateScenario
        More than 1% of the Oracle fits failed.
    """
    if config.analysis is Analysis.CORRECT:
        beta = tuple(config.beta_true)
        return TargetEstimate(beta, tuple(0.0 for _ in beta), Provenance.TRUE_BETA)
    key, keyed = _target_key(config, n, n_reps, seed)
    path = cache_dir() / f"target-{key}.json"
    if use_cache and not refresh and path.exists():
        try:
            return TargetEstimate.from_dict(json.loads(path.read_text())["target"])
        except (KeyError, ValueError, TypeError):
            pass  # unreadable cache entry: recompute
    big = ScenarioConfig(**{**config.to_dict(), "n": n, "seed": seed})
    workers = default_workers() if workers is None else int(workers)
    betas = _map(_oracle_beta, [(big, r) for r in range(n_reps)], workers)
    ok = np.array([b for b in betas if b is not None], dtype=float)
    failed = n_reps - len(ok)
    if failed > FAIL_TARGET * n_reps or len(ok) == 0:
        raise DegenerateScenario(
            f"{failed} of {n_reps} Oracle fits failed while estimating the target"
        )
    sd = ok.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(ok.shape[1])
    est = TargetEstimate(tuple(ok.mean(axis=0).tolist()), tuple((sd / math.sqrt(len(ok))).tolist()),
                         Provenance.ORACLE_LARGE_N, n=n, n_reps=n_reps, n_failed=failed)
    if use_cache:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"key": keyed, "target": est.to_dict()}, sort_keys=True, indent=2))
            tmp.replace(path)
        except OSError as exc:
            warnings.warn(f"could not write target cache {path}: {exc}", stacklevel=2)
    return est


# ---------------------------------------------------------------- study

def _model_names(config, columns, spec):
    probe = simulate(ScenarioConfig(**{**config.to_dict(), "n": 2}), 0)
    if columns is not None:
        probe = replace(probe, covariate_names=tuple(columns))
    return design_names(probe, spec)


def run_replications(config, methods=tuple(Method), n_reps=1000, workers=None, target=None,
                     target_kwargs=None):
    """Run ``n_reps`` replications of ``config`` and aggregate per cell.

    Parameters
    ----------
    config : ScenarioConfig
    methods : sequence of Method or str
    n_reps : int
    workers : int, optional
        Worker processes; defaults to the available CPUs.  The result does
        not depend on it.
    target : TargetEstimate, optional
        Reference value for bias and coverage; computed with
        :func:`estimate_target` when omitted.

    Raises
    ------
    DegenerateScenario
        More than 5% of replications failed for some method.
    """
    if int(n_reps) < 1:
        raise InvalidInput("n_reps must be at least 1")
    n_reps = int(n_reps)
    methods = [Method.parse(m) if not isinstance(m, Method) else m for m in methods]
    workers = default_workers() if workers is None else max(1, int(workers))
    if target is None:
        target = estimate_target(config, workers=workers, **(target_kwargs or {}))
    tvec = np.asarray(target.beta_star, dtype=float)
    columns, spec = analysis_design(config)
    names = _model_names(config, columns, spec)
    if len(names) != len(tvec):
        raise InvalidInput(f"target has {len(tvec)} entries but the model has {len(names)}")

    results = _map(_replicate, [(config, methods, r, tvec) for r in range(n_reps)], workers)

    cells, failures = [], {}
    for m in methods:
        rows = [res[m] for res in results]
        ok = [x for x in rows if not isinstance(x, str)]
        fails = {}
        for x in rows:
            if isinstance(x, str):
                fails[x] = fails.get(x, 0) + 1
        n_failed = n_reps - len(ok)
        if n_failed > FAIL_STUDY * n_reps:
            raise DegenerateScenario(
                f"{m.value}: {n_failed} of {n_reps} replications failed ({fails})"
            )
        if fails:
            failures[m.value] = fails
        b = np.array([x[0] for x in ok], dtype=float).reshape(len(ok), len(names))
        se = np.array([x[1] for x in ok], dtype=float).reshape(len(ok), len(names))
        hit = np.array([x[2] for x in ok], dtype=bool).reshape(len(ok), len(names))
        for j, name in enumerate(names):
            if len(ok):
                bias = float(b[:, j].mean() - tvec[j])
                mse = float(se[:, j].mean())
                cov = float(hit[:, j].sum() / len(ok))
            else:
                bias = mse = cov = float("nan")
            esd = float(b[:, j].std(ddof=1)) if len(ok) > 1 else None
            cells.append(CellSummary(m.value, name, bias, mse, esd, cov, n_reps, n_failed,
                                     float(tvec[j])))
    resolved = config.to_dict()
    resolved["n_reps"] = n_reps
    return SimReport(config=resolved, methods=[m.value for m in methods],
                     parameters=list(names), cells=cells, target=target, failures=failures)


# ---------------------------------------------------------------- tables

def _as_list(reports):
    return [reports] if isinstance(reports, SimReport) else list(reports)


def _fmt_cov(c):
    if c is None or not math.isfinite(c):
        return "NA"
    s = f"{c:.2f}"
    return s + DAGGER if c < COVERAGE_FLAG else s


def _fmt_bias(b, se):
    if not math.isfinite(b):
        return "NA"
    bs = f"{b:.2f}"
    if bs == "0.00" and b < 0:
        bs = "-0.00"
    return f"{bs} ({se:.3f})"


def emit_table(reports, format="md"):
    """Render one or more reports, one row per (mechanism, method).

    ``md`` gives the rounded "Bias (Mean SE)" / "Coverage" layout with
    coverage below 0.90 marked by a dagger.  ``csv`` carries the same
    rows with full-precision numbers and a separate flag column per
    parameter, so the numbers parse back exactly.
    """
    reports = _as_list(reports)
    if format not in ("md", "csv"):
        raise InvalidInput(f"unknown table format {format!r}")
    n_par = max((len(r.parameters) for r in reports), default=0)
    labels = [f"b{j + 1}" for j in range(n_par)]
    if format == "md":
        head = ["Mechanism", "Method"]
        for lab in labels:
            head += [f"{lab} Bias (Mean SE)", f"{lab} Coverage"]
        lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
        for rep in reports:
            mech = rep.config.get("mechanism", "")
            for m in rep.methods:
                row = [mech, m]
                for j in range(n_par):
                    if j < len(rep.parameters):
                        c = rep.cell(m, j)
                        row += [_fmt_bias(c.bias, c.mean_se), _fmt_cov(c.coverage)]
                    else:
                        row += ["", ""]
                lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["mechanism", "method"]
    for lab in labels:
        head += [f"{lab}_parameter", f"{lab}_bias", f"{lab}_mean_se", f"{lab}_empirical_sd",
                 f"{lab}_coverage", f"{lab}_flag"]
    w.writerow(head)
    for rep in reports:
        mech = rep.config.get("mechanism", "")
        for m in rep.methods:
            row = [mech, m]
            for j in range(n_par):
                if j < len(rep.parameters):
                    c = rep.cell(m, j)
                    row += [c.parameter, repr(c.bias), repr(c.mean_se),
                            "" if c.empirical_sd is None else repr(c.empirical_sd),
                            repr(c.coverage), DAGGER if c.coverage < COVERAGE_FLAG else ""]
                else:
                    row += [""] * 6
            w.writerow(row)
    return buf.getvalue()


def parse_csv_table(text):
    """Read :func:`emit_table` CSV output back into a list of row dicts.

    Numeric cells become floats (``None`` when empty).
    """
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        out = {}
        for k, v in rec.items():
            if k.endswith(("_bias", "_mean_se", "_empirical_sd", "_coverage")):
                out[k] = float(v) if v != "" else None
            else:
                out[k] = v
        rows.append(out)
    return rows
