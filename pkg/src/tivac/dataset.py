"""Longitudinal bivariate data: containers, CSV I/O and preprocessing.

Outcome files are long format with header ``subject_id,time,y1,y2``; covariate
files have header ``subject_id,<name1>,...,<namep>`` with one row per subject.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .errors import DataError

logger = logging.getLogger(__name__)

OUTCOME_HEADER = ("subject_id", "time", "y1", "y2")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """Observation times of one subject and the concurrent outcome pairs.

    ``outcomes`` is an ``(m, 2)`` array aligned with ``times``.
    """

    subject_id: str
    times: np.ndarray
    outcomes: np.ndarray
    allow_duplicate_times: bool = field(default=False, repr=False)

    def __post_init__(self):
        times = _frozen(self.times).reshape(-1)
        outcomes = _frozen(self.outcomes).reshape(-1, 2)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "outcomes", outcomes)
        if times.size == 0:
            raise DataError(f"subject {self.subject_id!r} has no observations")
        if times.size != outcomes.shape[0]:
            raise DataError(
                f"subject {self.subject_id!r}: {times.size} times but "
                f"{outcomes.shape[0]} outcome pairs"
            )
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(outcomes))):
            raise DataError(f"subject {self.subject_id!r} has non-finite values")
        steps = np.diff(times)
        if np.any(steps < 0):
            raise DataError(f"subject {self.subject_id!r}: times not increasing")
        if np.any(steps == 0) and not self.allow_duplicate_times:
            raise DataError(
                f"subject {self.subject_id!r}: duplicate observation times",
                code="duplicate_time",
            )

    @property
    def m(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.outcomes, other.outcomes)
        )


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """``n`` subjects with irregular observation times and an ``n x p`` covariate
    matrix. No intercept is added implicitly."""

    subjects: tuple
    covariates: np.ndarray
    covariate_names: tuple

    def __post_init__(self):
        subjects = tuple(self.subjects)
        X = _frozen(self.covariates)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        names = tuple(str(c) for c in self.covariate_names)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "covariate_names", names)
        n, p = X.shape
        if len(subjects) != n:
            raise DataError(f"{len(subjects)} subjects but {n} covariate rows")
        if p < 1:
            raise DataError("at least one covariate column is required")
        if len(names) != p:
            raise DataError(f"{len(names)} covariate names for {p} columns")
        if n <= p:
            raise DataError(f"need more subjects than covariates (n={n}, p={p})")
        if not np.all(np.isfinite(X)):
            raise DataError("covariate matrix has non-finite values")
        ids = [s.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject identifiers")
        t_min, t_max = self.time_range
        if not t_min < t_max:
            raise DataError("all observation times are equal; need t_min < t_max")

    @property
    def n(self):
        return len(self.subjects)

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def time_range(self):
        lo = min(float(s.times[0]) for s in self.subjects)
        hi = max(float(s.times[-1]) for s in self.subjects)
        return lo, hi

    @property
    def n_observations(self):
        return sum(s.m for s in self.subjects)

    def pooled(self):
        """Stacked ``(subject_index, times, y1, y2)`` over all observations."""
        idx = np.concatenate(
            [np.full(s.m, i, dtype=np.intp) for i, s in enumerate(self.subjects)]
        )
        times = np.concatenate([s.times for s in self.subjects])
        y = np.concatenate([s.outcomes for s in self.subjects])
        return idx, times, y[:, 0].copy(), y[:, 1].copy()

    def subset(self, indices):
        """Dataset restricted to the subjects at ``indices`` (in that order)."""
        indices = list(indices)
        return LongitudinalDataset(
            tuple(self.subjects[i] for i in indices),
            self.covariates[indices],
            self.covariate_names,
        )

    def with_outcomes(self, y1, y2):
        """Copy with pooled outcome coordinates replaced (same stacking as ``pooled``)."""
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        subjects = []
        start = 0
        for s in self.subjects:
            stop = start + s.m
            pairs = np.column_stack([y1[start:stop], y2[start:stop]])
            subjects.append(
                SubjectRecord(s.subject_id, s.times, pairs, s.allow_duplicate_times)
            )
            start = stop
        return LongitudinalDataset(tuple(subjects), self.covariates, self.covariate_names)

    def __eq__(self, other):
        if not isinstance(other, LongitudinalDataset):
            return NotImplemented
        return (
            self.subjects == other.subjects
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.covariates, other.covariates)
        )


def _parse_float(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise DataError(
            f"non-numeric value {text!r} in column {column!r}",
            code="non_numeric", path=path, line=line,
        ) from None
    if not math.isfinite(value):
        raise DataError(
            f"non-finite value {text!r} in column {column!r}",
            code="non_finite", path=path, line=line,
        )
    return value


def _read_rows(path):
    if not os.path.exists(path):
        raise DataError("file not found", code="io_missing_file", path=path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    # drop fully blank lines but keep line numbers
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if len(numbered) < 2:
        raise DataError("empty file (no data rows)", code="empty_file", path=path)
    return numbered


def load_csv(outcome_path, covariate_path, allow_duplicate_times=False):
    """Read and validate a dataset from an outcome file and a covariate file.

    Subjects are ordered by first appearance in the outcome file and each
    subject's rows are sorted by time. Errors name the file, line and reason.
    """
    outcome_path = os.fspath(outcome_path)
    covariate_path = os.fspath(covariate_path)
    out_rows = _read_rows(outcome_path)
    cov_rows = _read_rows(covariate_path)

    header_line, header = out_rows[0]
    header = tuple(h.strip() for h in header)
    if header != OUTCOME_HEADER:
        raise DataError(
            f"expected header {','.join(OUTCOME_HEADER)}, got {','.join(header)}",
            code="bad_header", path=outcome_path, line=header_line,
        )

    order = []
    per_subject = {}
    for line, row in out_rows[1:]:
        if len(row) != 4:
            raise DataError(
                f"expected 4 fields, got {len(row)}",
                code="bad_row", path=outcome_path, line=line,
            )
        sid = row[0].strip()
        t = _parse_float(row[1], outcome_path, line, "time")
        y1 = _parse_float(row[2], outcome_path, line, "y1")
        y2 = _parse_float(row[3], outcome_path, line, "y2")
        if sid not in per_subject:
            per_subject[sid] = []
            order.append(sid)
        per_subject[sid].append((t, y1, y2, line))

    cov_line, cov_header = cov_rows[0]
    cov_header = [h.strip() for h in cov_header]
    if len(cov_header) < 2 or cov_header[0] != "subject_id":
        raise DataError(
            "covariate header must be subject_id,<name1>,...",
            code="bad_header", path=covariate_path, line=cov_line,
        )
    names = tuple(cov_header[1:])
    cov = {}
    for line, row in cov_rows[1:]:
        if len(row) != len(cov_header):
            raise DataError(
                f"expected {len(cov_header)} fields, got {len(row)}",
                code="bad_row", path=covariate_path, line=line,
            )
        sid = row[0].strip()
        if sid in cov:
            raise DataError(
                f"subject {sid!r} listed twice",
                code="duplicate_subject", path=covariate_path, line=line,
            )
        cov[sid] = [
            _parse_float(v, covariate_path, line, c) for v, c in zip(row[1:], names)
        ]

    subjects = []
    for sid in order:
        if sid not in cov:
            raise DataError(
                f"subject {sid!r} missing from covariate file",
                code="missing_subject", path=covariate_path,
            )
        obs = sorted(per_subject[sid], key=lambda r: r[0])
        for prev, cur in zip(obs, obs[1:]):
            if prev[0] == cur[0]:
                msg = f"duplicate time {cur[0]!r} for subject {sid!r}"
                if not allow_duplicate_times:
                    raise DataError(
                        msg, code="duplicate_time", path=outcome_path, line=cur[3]
                    )
                logger.warning("%s:%d: %s", outcome_path, cur[3], msg)
        subjects.append(
            SubjectRecord(
                sid,
                [r[0] for r in obs],
                [(r[1], r[2]) for r in obs],
                allow_duplicate_times,
            )
        )
    X = np.array([cov[sid] for sid in order], dtype=float).reshape(len(order), len(names))
    return LongitudinalDataset(tuple(subjects), X, names)


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(data, outcome_path, covariate_path):
    """Write ``data`` in the format read by :func:`load_csv` (17 significant digits)."""
    with open(outcome_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_HEADER)
        for s in data.subjects:
            for t, (y1, y2) in zip(s.times, s.outcomes):
                w.writerow([s.subject_id, _fmt(t), _fmt(y1), _fmt(y2)])
    with open(covariate_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("subject_id",) + data.covariate_names)
        for s, row in zip(data.subjects, data.covariates):
            w.writerow([s.subject_id] + [_fmt(v) for v in row])


def center_by_group(data, group_column):
    """Subtract the pooled per-group mean of each outcome coordinate.

    Groups are the distinct values of covariate ``group_column``; the mean is
    taken over all subjects and times in the group.
    """
    col = data.covariates[:, group_column]
    levels = np.unique(col)
    if levels.size == data.n:
        raise DataError(
            f"covariate {data.covariate_names[group_column]!r} has a distinct value "
            "for every subject; it cannot define groups",
            code="bad_group",
        )
    idx, _, y1, y2 = data.pooled()
    obs_group = col[idx]
    y1c = y1.copy()
    y2c = y2.copy()
    for level in levels:
        sel = obs_group == level
        y1c[sel] -= y1[sel].mean()
        y2c[sel] -= y2[sel].mean()
    return data.with_outcomes(y1c, y2c)


def normal_scores(values):
    """Rank-based inverse normal scores ``Phi^-1(midrank / (N + 1))``."""
    values = np.asarray(values, dtype=float)
    ranks = rankdata(values, method="average")
    return norm.ppf(ranks / (values.size + 1))


def quantile_transform(data):
    """Replace each pooled outcome coordinate by its normal scores."""
    _, _, y1, y2 = data.pooled()
    for name, y in (("y1", y1), ("y2", y2)):
        if np.unique(y).size < 2:
            raise DataError(f"outcome {name} is constant", code="constant_outcome")
    return data.with_outcomes(normal_scores(y1), normal_scores(y2))
