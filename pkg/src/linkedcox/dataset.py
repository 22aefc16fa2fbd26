"""Subject records, linkage classes, episode splitting and CSV ingestion.

Two representations coexist.  :class:`SubjectRecord` is the per-participant
view used at the I/O boundary; :class:`Cohort` stores the same information
column-wise as numpy arrays and is what the estimators consume.  Missing
values are ``NaN`` in a :class:`Cohort` and ``None`` in a record.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInput, ParseError

__all__ = [
    "LinkageClass",
    "SubjectRecord",
    "LatentRecord",
    "EpisodeRow",
    "ChangePointSpec",
    "Cohort",
    "Episodes",
    "CsvSchema",
    "classify",
    "split_episodes",
    "load_csv",
    "save_csv",
    "read_cohort",
]


class LinkageClass(enum.Enum):
    CLASS1 = 1  # linked
    CLASS2 = 2  # unlinked, event inside the trial
    CLASS3 = 3  # unlinked, censored inside the trial: outcome missing


def _missing(v):
    return v is None or (isinstance(v, float) and math.isnan(v))


@dataclass(frozen=True)
class SubjectRecord:
    id: int
    z1: tuple
    c1: float
    q: int
    l: int
    t_obs: float | None = None
    delta: int | None = None
    c2: float | None = None
    t_fail: float | None = None
    gap: int = 0
    gap_len: float | None = None
    aux: Mapping[str, float] = field(default_factory=dict)

    def validate(self, tau1=None, tau2=None):
        """Raise :class:`InvalidInput` if the record breaks a data invariant."""
        if self.q not in (0, 1) or self.l not in (0, 1):
            raise InvalidInput(f"subject {self.id}: q and l must be 0/1")
        if self.delta is not None and self.delta not in (0, 1):
            raise InvalidInput(f"subject {self.id}: delta must be 0/1")
        has_t, has_d = not _missing(self.t_obs), self.delta is not None
        if has_t != has_d:
            raise InvalidInput(f"subject {self.id}: t_obs and delta must be missing together")
        if self.l == 0 and self.q == 0:
            if has_t:
                raise InvalidInput(
                    f"subject {self.id}: unlinked and censored in trial, outcome must be missing"
                )
        elif not has_t:
            raise InvalidInput(f"subject {self.id}: observed subject lacks t_obs/delta")
        if not self.c1 > 0:
            raise InvalidInput(f"subject {self.id}: c1 must be positive")
        if has_t and not self.t_obs > 0:
            raise InvalidInput(f"subject {self.id}: t_obs must be positive")
        if self.q == 1:
            if self.delta != 1 or self.t_obs > self.c1:
                raise InvalidInput(
                    f"subject {self.id}: q=1 requires delta=1 and t_obs <= c1"
                )
            if not _missing(self.t_fail) and self.t_fail != self.t_obs:
                raise InvalidInput(f"subject {self.id}: q=1 requires t_obs == t_fail")
        if not _missing(self.c2) and self.c2 < self.c1:
            raise InvalidInput(f"subject {self.id}: c2 < c1")
        if tau1 is not None and self.c1 > tau1:
            raise InvalidInput(f"subject {self.id}: c1 exceeds tau1")
        if tau2 is not None and not _missing(self.c2) and self.c2 > tau2:
            raise InvalidInput(f"subject {self.id}: c2 exceeds tau2")
        return self


@dataclass(frozen=True)
class LatentRecord(SubjectRecord):
    """Simulation record that also keeps the outcome a full linkage would reveal."""

    t_obs_full: float = math.nan
    delta_full: int = 0
    interval_censored: bool = False


def classify(subject):
    if subject.l == 1:
        return LinkageClass.CLASS1
    return LinkageClass.CLASS2 if subject.q == 1 else LinkageClass.CLASS3


@dataclass(frozen=True)
class EpisodeRow:
    subject_id: int
    start: float
    stop: float
    event: int
    x: tuple
    weight: float


@dataclass(frozen=True)
class ChangePointSpec:
    """Step changes of one covariate's effect at fixed times.

    Each change time ``c`` adds a design column ``I(t > c) * z1[:, index]``.
    """

    change_times: tuple = ()
    interacting_covariate_index: int = 0

    def __post_init__(self):
        ct = tuple(float(c) for c in self.change_times)
        object.__setattr__(self, "change_times", ct)
        if any(c <= 0 for c in ct) or any(b <= a for a, b in zip(ct, ct[1:])):
            raise InvalidInput("change_times must be positive and strictly increasing")

    def validate(self, tau2):
        if any(c >= tau2 for c in self.change_times):
            raise InvalidInput("change_times must lie in (0, tau2)")
        return self


def _f(a):
    return np.asarray(a, dtype=float)


@dataclass
class Cohort:
    """Column-wise subject data.

    ``t_obs``/``delta`` are the observed view (``NaN`` for Class 3).  The
    ``*_full`` arrays, present only for simulated data, hold the outcome
    every subject would show if all were linked.
    """

    id: np.ndarray
    z1: np.ndarray
    c1: np.ndarray
    q: np.ndarray
    l: np.ndarray
    t_obs: np.ndarray
    delta: np.ndarray
    c2: np.ndarray
    gap: np.ndarray
    gap_len: np.ndarray
    covariate_names: tuple = ()
    aux: dict = field(default_factory=dict)
    t_fail: np.ndarray | None = None
    c2_full: np.ndarray | None = None
    t_obs_full: np.ndarray | None = None
    delta_full: np.ndarray | None = None
    interval_censored: np.ndarray | None = None

    def __post_init__(self):
        self.z1 = np.atleast_2d(_f(self.z1))
        if self.z1.shape[0] != len(self.id) and self.z1.shape[1] == len(self.id):
            self.z1 = self.z1.T
        if not self.covariate_names:
            self.covariate_names = tuple(f"z1_{j + 1}" for j in range(self.z1.shape[1]))

    @property
    def n(self):
        return len(self.id)

    @property
    def has_latent(self):
        return self.t_obs_full is not None

    def linkage_class(self):
        """Vector of class labels 1/2/3."""
        return np.where(self.l == 1, 1, np.where(self.q == 1, 2, 3))

    def covariates(self, names=None):
        """Design matrix for the named columns (``z1_*`` or auxiliary)."""
        if names is None:
            return self.z1
        cols = []
        for name in names:
            if name in self.covariate_names:
                cols.append(self.z1[:, self.covariate_names.index(name)])
            elif name in self.aux:
                cols.append(_f(self.aux[name]))
            else:
                raise InvalidInput(f"unknown covariate column {name!r}")
        return np.column_stack(cols) if cols else np.empty((self.n, 0))

    def subset(self, mask):
        mask = np.asarray(mask)
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                kw[f.name] = v[mask]
            elif f.name == "aux":
                kw[f.name] = {k: _f(a)[mask] for k, a in v.items()}
            else:
                kw[f.name] = v
        return Cohort(**kw)

    def with_outcomes(self, t_obs, delta):
        return replace(self, t_obs=_f(t_obs), delta=_f(delta))

    def oracle_view(self):
        """Cohort as if every participant had been linked."""
        if not self.has_latent:
            raise InvalidInput("oracle view needs latent outcome columns")
        return replace(self, t_obs=self.t_obs_full, delta=self.delta_full,
                       l=np.ones_like(self.l), c2=self.c2_full if self.c2_full is not None else self.c2)

    def validate(self, tau1=None, tau2=None):
        """Vectorised check of the record invariants; raises InvalidInput."""
        bad = []
        has_t = ~np.isnan(self.t_obs)
        has_d = ~np.isnan(self.delta)
        c3 = (self.l == 0) & (self.q == 0)

        def flag(mask, msg):
            idx = np.flatnonzero(mask)
            if idx.size:
                bad.append(f"{msg} (subject id {int(self.id[idx[0]])})")

        flag(~np.isin(self.q, (0, 1)) | ~np.isin(self.l, (0, 1)), "q and l must be 0/1")
        flag(has_t != has_d, "t_obs and delta must be missing together")
        flag(c3 & has_t, "Class-3 subject carries an outcome")
        flag(~c3 & ~has_t, "observed subject lacks t_obs/delta")
        flag(has_d & ~np.isin(np.nan_to_num(self.delta, nan=0.0), (0.0, 1.0)), "delta must be 0/1")
        flag(~(self.c1 > 0), "c1 must be positive")
        flag(has_t & ~(np.nan_to_num(self.t_obs, nan=1.0) > 0), "t_obs must be positive")
        q1 = self.q == 1
        flag(q1 & ((self.delta != 1) | ~(self.t_obs <= self.c1)), "q=1 requires delta=1 and t_obs <= c1")
        flag(~np.isnan(self.c2) & (self.c2 < self.c1), "c2 < c1")
        if tau1 is not None:
            flag(self.c1 > tau1, "c1 exceeds tau1")
        if tau2 is not None:
            flag(~np.isnan(self.c2) & (self.c2 > tau2), "c2 exceeds tau2")
        if bad:
            raise InvalidInput("; ".join(bad))
        return self

    # record conversion -------------------------------------------------

    @classmethod
    def from_records(cls, records, covariate_names=()):
        records = list(records)
        if not records:
            raise InvalidInput("empty subject list")

        def col(name, default=math.nan):
            return np.array([default if _missing(getattr(r, name)) else getattr(r, name)
                             for r in records], dtype=float)

        aux_names = sorted(set().union(*(r.aux.keys() for r in records)))
        latent = all(isinstance(r, LatentRecord) for r in records)
        kw = {}
        if latent:
            kw = dict(
                t_fail=col("t_fail"),
                c2_full=col("c2"),
                t_obs_full=col("t_obs_full"),
                delta_full=col("delta_full"),
                interval_censored=np.array([r.interval_censored for r in records]),
            )
        l = np.array([r.l for r in records], dtype=np.int8)
        c2 = col("c2")
        if latent:
            c2 = np.where(l == 1, c2, math.nan)
        return cls(
            id=np.array([r.id for r in records], dtype=np.int64),
            z1=np.array([r.z1 for r in records], dtype=float).reshape(len(records), -1),
            c1=col("c1"),
            q=np.array([r.q for r in records], dtype=np.int8),
            l=l,
            t_obs=col("t_obs"),
            delta=col("delta"),
            c2=c2,
            gap=np.array([r.gap for r in records], dtype=np.int8),
            gap_len=col("gap_len"),
            covariate_names=tuple(covariate_names),
            aux={k: np.array([r.aux.get(k, math.nan) for r in records]) for k in aux_names},
            **kw,
        )

    def to_records(self):
        def opt(a, i, cast=float):
            if a is None or np.isnan(a[i]):
                return None
            return cast(a[i])

        out = []
        for i in range(self.n):
            base = dict(
                id=int(self.id[i]),
                z1=tuple(float(v) for v in self.z1[i]),
                c1=float(self.c1[i]),
                q=int(self.q[i]),
                l=int(self.l[i]),
                t_obs=opt(self.t_obs, i),
                delta=opt(self.delta, i, int),
                gap=int(self.gap[i]),
                gap_len=opt(self.gap_len, i),
                aux={k: float(v[i]) for k, v in self.aux.items()},
            )
            if self.has_latent:
                out.append(LatentRecord(
                    **base,
                    c2=opt(self.c2_full, i),
                    t_fail=opt(self.t_fail, i),
                    t_obs_full=float(self.t_obs_full[i]),
                    delta_full=int(self.delta_full[i]),
                    interval_censored=bool(self.interval_censored[i])
                    if self.interval_censored is not None else False,
                ))
            else:
                out.append(SubjectRecord(**base, c2=opt(self.c2, i), t_fail=opt(self.t_fail, i)))
        return out


def as_cohort(subjects):
    if isinstance(subjects, Cohort):
        return subjects
    return Cohort.from_records(subjects)


# episodes ----------------------------------------------------------------


@dataclass
class Episodes:
    """Counting-process rows ``(start, stop]`` in column form.

    ``subject`` indexes positions in the originating cohort; ``n`` is the
    cohort size used for the ``1/n`` normalisation of all risk-set sums.
    """

    subject: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    event: np.ndarray
    x: np.ndarray
    weight: np.ndarray
    n: int
    ids: np.ndarray | None = None

    @property
    def p(self):
        return self.x.shape[1]

    def __len__(self):
        return len(self.start)

    def scaled(self, c):
        return replace(self, weight=self.weight * c)

    def rows(self):
        ids = self.ids if self.ids is not None else self.subject
        return [
            EpisodeRow(int(ids[k]), float(self.start[k]), float(self.stop[k]),
                       int(self.event[k]), tuple(float(v) for v in self.x[k]),
                       float(self.weight[k]))
            for k in range(len(self))
        ]

    @classmethod
    def from_arrays(cls, t_obs, delta, x, weight=None, n=None):
        """Time-independent design: one row per subject."""
        t_obs = _f(t_obs)
        x = _f(x).reshape(len(t_obs), -1)
        w = np.ones(len(t_obs)) if weight is None else _f(weight)
        idx = np.arange(len(t_obs))
        return cls(idx, np.zeros(len(t_obs)), t_obs, _f(delta).astype(np.int8), x, w,
                   len(t_obs) if n is None else n, idx)


def split_episodes(subjects, spec=None, weights=None):
    """Split follow-up at the change times of ``spec``.

    Subjects with zero weight are dropped (this removes Class 3 under
    inverse-linkage weighting).  Every remaining subject must carry an
    observed ``t_obs`` and ``delta``.
    """
    cohort = as_cohort(subjects)
    n = cohort.n
    w = np.ones(n) if weights is None else _f(weights)
    if w.shape != (n,):
        raise InvalidInput("weights must align with subjects")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInput("weights must be finite and nonnegative")
    keep = np.flatnonzero(w > 0)
    t = cohort.t_obs[keep]
    d = cohort.delta[keep]
    if np.any(np.isnan(t)) or np.any(np.isnan(d)):
        bad = keep[np.isnan(t) | np.isnan(d)][0]
        raise InvalidInput(f"subject id {int(cohort.id[bad])} has missing t_obs/delta")
    z = cohort.z1[keep]
    change = np.asarray(spec.change_times if spec is not None else (), dtype=float)
    if change.size == 0:
        return Episodes(keep, np.zeros(len(keep)), t, d.astype(np.int8), z.copy(), w[keep], n,
                        cohort.id[keep])

    # rows per subject: one per change time strictly below t_obs, plus the last
    crossed = (change[None, :] < t[:, None]).sum(axis=1)
    nrows = crossed + 1
    subj = np.repeat(np.arange(len(keep)), nrows)
    j = np.arange(len(subj)) - np.repeat(np.cumsum(nrows) - nrows, nrows)
    breaks = np.concatenate([[0.0], change])
    start = breaks[j]
    last = j == crossed[subj]
    stop = np.where(last, t[subj], np.append(change, np.inf)[j])
    event = (last & (d[subj] == 1)).astype(np.int8)
    a = z[subj, spec.interacting_covariate_index]
    # I(t > c_m) is 1 on row j iff c_m <= start, i.e. m < j (0-based m)
    td = (np.arange(change.size)[None, :] < j[:, None]) * a[:, None]
    x = np.hstack([z[subj], td])
    return Episodes(keep[subj], start, stop, event, x, w[keep][subj], n, cohort.id[keep][subj])


# CSV ---------------------------------------------------------------------

_REQUIRED = ("id", "l", "q", "t_obs", "delta", "c1")
_OPTIONAL = ("c2", "gap", "gap_len")
_LATENT = ("t_fail", "t_obs_latent", "delta_latent", "interval_censored")


@dataclass(frozen=True)
class CsvSchema:
    """Expected layout of a subject CSV.

    ``n_covariates=None`` accepts any number (at least one) of ``z1_*``
    columns.  Columns outside the known set are kept as auxiliary
    covariates when ``allow_aux`` is true.
    """

    n_covariates: int | None = None
    require_gap: bool = False
    allow_aux: bool = True


def _parse_num(cell, row, col, kind=float):
    cell = cell.strip()
    if cell == "":
        return None
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", row, col) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {cell!r}", row, col)
    if kind is int:
        if v not in (0.0, 1.0) and col not in ("id",):
            raise ParseError(f"expected 0/1, got {cell!r}", row, col)
        if v != int(v):
            raise ParseError(f"expected integer, got {cell!r}", row, col)
        return int(v)
    return v


def load_csv(path, schema=None):
    """Read and validate a subject CSV; returns a list of records.

    Row numbers in :class:`ParseError` count the header as row 1.
    """
    schema = schema or CsvSchema()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        missing = [c for c in _REQUIRED if c not in header]
        if missing:
            raise ParseError(f"missing required column(s) {', '.join(missing)}", 1, missing[0])
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names", 1)
        zcols = sorted((h for h in header if h.startswith("z1_")), key=lambda h: int(h[3:]) if h[3:].isdigit() else -1)
        if not zcols or any(not h[3:].isdigit() for h in zcols):
            raise ParseError("covariate columns must be named z1_1..z1_p", 1)
        if [int(h[3:]) for h in zcols] != list(range(1, len(zcols) + 1)):
            raise ParseError("covariate columns must be numbered consecutively from z1_1", 1)
        if schema.n_covariates is not None and len(zcols) != schema.n_covariates:
            raise ParseError(f"expected {schema.n_covariates} covariates, found {len(zcols)}", 1)
        if schema.require_gap and not {"gap", "gap_len"} <= set(header):
            raise ParseError("gap and gap_len columns required", 1)
        known = set(_REQUIRED) | set(_OPTIONAL) | set(_LATENT) | set(zcols)
        aux_cols = [h for h in header if h not in known]
        if aux_cols and not schema.allow_aux:
            raise ParseError(f"unexpected column {aux_cols[0]!r}", 1, aux_cols[0])
        latent = "t_obs_latent" in header and "delta_latent" in header
        pos = {h: k for k, h in enumerate(header)}
        records = []
        for rownum, cells in enumerate(reader, start=2):
            if not cells or all(c.strip() == "" for c in cells):
                continue
            if len(cells) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(cells)}", rownum)

            def get(name, kind=float, required=False):
                if name not in pos:
                    return None
                v = _parse_num(cells[pos[name]], rownum, name, kind)
                if required and v is None:
                    raise ParseError("required value is empty", rownum, name)
                return v

            z = []
            for h in zcols:
                v = get(h, required=True)
                z.append(v)
            kw = dict(
                id=get("id", int, required=True),
                z1=tuple(z),
                c1=get("c1", required=True),
                q=get("q", int, required=True),
                l=get("l", int, required=True),
                t_obs=get("t_obs"),
                delta=get("delta", int),
                c2=get("c2"),
                t_fail=get("t_fail"),
                gap=get("gap", int) or 0,
                gap_len=get("gap_len"),
                aux={h: get(h, required=True) for h in aux_cols},
            )
            if latent:
                rec = LatentRecord(
                    **kw,
                    t_obs_full=get("t_obs_latent", required=True),
                    delta_full=get("delta_latent", int, required=True),
                    interval_censored=bool(get("interval_censored", int) or 0),
                )
            else:
                rec = SubjectRecord(**kw)
            try:
                rec.validate()
            except InvalidInput as exc:
                raise ParseError(str(exc), rownum) from None
            records.append(rec)
    if not records:
        raise ParseError("no data rows", 2)
    return records


def read_cohort(path, schema=None):
    records = load_csv(path, schema)
    zn = tuple(f"z1_{j + 1}" for j in range(len(records[0].z1)))
    return Cohort.from_records(records, covariate_names=zn)


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def save_csv(path, subjects, latent=False):
    """Write subjects in the CSV layout read by :func:`load_csv`.

    Floats are written with ``repr`` so a save/load round trip is exact.
    ``latent=True`` appends the simulation-only columns.
    """
    records = subjects.to_records() if isinstance(subjects, Cohort) else list(subjects)
    if not records:
        raise InvalidInput("nothing to write")
    p = len(records[0].z1)
    aux_names = sorted(records[0].aux)
    header = list(_REQUIRED) + [f"z1_{j + 1}" for j in range(p)] + ["c2", "gap", "gap_len"] + aux_names
    if latent:
        if not all(isinstance(r, LatentRecord) for r in records):
            raise InvalidInput("latent export needs simulated records")
        header += list(_LATENT)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in records:
            # observed-view c2 is unknown for unlinked subjects
            c2 = r.c2 if (latent or r.l == 1) else None
            row = [r.id, r.l, r.q, r.t_obs, r.delta, r.c1, *r.z1, c2, r.gap, r.gap_len]
            row += [r.aux[k] for k in aux_names]
            if latent:
                row += [r.t_fail, r.t_obs_full, r.delta_full, r.interval_censored]
            w.writerow([_fmt(v) for v in row])
    return path
