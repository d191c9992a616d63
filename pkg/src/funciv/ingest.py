"""Loading and preprocessing real functional data from long-format CSV.

A long file has one row per ``(subject, role, day, time)`` with a measured
value; ``role`` is ``W`` for the error-prone exposure and ``M`` for the
instrument (for accelerometry: weekday and weekend days). Preprocessing
removes extreme values, keeps complete days only and averages the
remaining days into one curve per subject and role.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import EmptyCohortError, RowError, SchemaError
from .fda import FunctionalSample, TimeGrid
from .simgen import Dataset

__all__ = [
    "CurveSet",
    "JoinReport",
    "LongRecords",
    "OutcomeSchema",
    "PreprocessRules",
    "assemble_dataset",
    "export_dataset",
    "load_long_csv",
    "iqr_threshold",
    "preprocess",
    "zero_heavy_times",
]

log = logging.getLogger(__name__)

ROLES = ("W", "M")
DEFAULT_SCHEMA = {
    "subject": "subject_id",
    "role": "role",
    "day": "day",
    "time": "time",
    "value": "value",
}


@dataclass(frozen=True, eq=False)
class LongRecords:
    subject: np.ndarray
    role: np.ndarray
    day: np.ndarray
    time: np.ndarray
    value: np.ndarray
    bad_lines: tuple = ()

    def __post_init__(self):
        n = len(self.subject)
        if not all(len(a) == n for a in (self.role, self.day, self.time, self.value)):
            raise SchemaError("record columns have different lengths")
        bad_roles = set(np.unique(self.role)) - set(ROLES)
        if bad_roles:
            raise SchemaError(f"roles must be W or M, found {sorted(bad_roles)}")
        if n:
            keys = np.rec.fromarrays(
                [self.subject.astype(str), self.role.astype(str), self.day, self.time]
            )
            if np.unique(keys).size != n:
                raise SchemaError("duplicate (subject, role, day, time) records")

    def __len__(self) -> int:
        return len(self.subject)

    @classmethod
    def from_rows(cls, rows, bad_lines=()) -> LongRecords:
        rows = list(rows)
        if not rows:
            return cls(
                np.array([], dtype=object), np.array([], dtype="<U1"),
                np.array([], dtype=np.int64), np.array([], dtype=np.int64),
                np.array([], dtype=float), tuple(bad_lines),
            )
        s, r, d, t, v = zip(*rows)
        return cls(
            np.array(s, dtype=object), np.array(r, dtype="<U1"),
            np.array(d, dtype=np.int64), np.array(t, dtype=np.int64),
            np.array(v, dtype=float), tuple(bad_lines),
        )


def load_long_csv(
    path,
    schema: Mapping[str, str] | None = None,
    *,
    role_map: Mapping[str, str] | None = None,
    max_bad_fraction: float = 0.0,
) -> LongRecords:
    """Parse a headered long-format CSV.

    Parameters
    ----------
    path : path-like
    schema : mapping, optional
        Maps the logical fields ``subject, role, day, time, value`` to
        column names. Unmapped fields use the names in ``DEFAULT_SCHEMA``.
    role_map : mapping, optional
        Translates raw role labels (e.g. ``weekday``) to ``W`` or ``M``.
    max_bad_fraction : float
        Malformed rows are skipped and listed in ``bad_lines``; if their
        share exceeds this fraction a :class:`RowError` is raised.
    """
    cols = {**DEFAULT_SCHEMA, **(schema or {})}
    role_map = dict(role_map or {})
    rows, bad = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in cols.values() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        n_rows = 0
        for rec in reader:
            n_rows += 1
            try:
                role = role_map.get(rec[cols["role"]], rec[cols["role"]])
                if role not in ROLES:
                    raise ValueError(f"role {rec[cols['role']]!r} is not W or M")
                value = float(rec[cols["value"]])
                if not math.isfinite(value):
                    raise ValueError(f"non-finite value {rec[cols['value']]!r}")
                rows.append((
                    rec[cols["subject"]],
                    role,
                    int(rec[cols["day"]]),
                    int(rec[cols["time"]]),
                    value,
                ))
            except (TypeError, ValueError) as exc:
                bad.append((reader.line_num, str(exc)))
    if bad and len(bad) > max_bad_fraction * n_rows:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in bad[:5])
        raise RowError(f"{path}: {len(bad)} malformed row(s) of {n_rows} ({detail})", bad)
    for ln, msg in bad:
        log.warning("%s line %d skipped: %s", path, ln, msg)
    return LongRecords.from_rows(rows, bad)


@dataclass(frozen=True)
class PreprocessRules:
    """How raw records become one curve per subject and role.

    ``outlier_iqr_multiplier``: values above ``Q3 + m * IQR`` of the role's
    full value pool are excluded (None disables). ``expected_times``: the
    time indices a day must contain to count as complete (default: every
    time index seen in the data). ``retained_times``: indices kept in the
    output curves (default: the expected times). ``min_days``: qualifying
    days needed per role.
    """

    outlier_iqr_multiplier: float | None = 3.0
    require_complete_days: bool = True
    expected_times: tuple[int, ...] | None = None
    retained_times: tuple[int, ...] | None = None
    min_days: Mapping[str, int] = field(default_factory=lambda: {"W": 1, "M": 1})

    @classmethod
    def from_dict(cls, d: Mapping) -> PreprocessRules:
        kw = dict(d)
        for key in ("expected_times", "retained_times"):
            if kw.get(key) is not None:
                kw[key] = tuple(int(v) for v in kw[key])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown preprocessing rule(s) {sorted(unknown)}")
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class CurveSet:
    subject_ids: tuple
    time_index: np.ndarray
    W: np.ndarray
    M: np.ndarray
    dropped_ids: tuple = ()
    thresholds: Mapping[str, float] = field(default_factory=dict)
    n_outliers: Mapping[str, int] = field(default_factory=dict)

    @property
    def n_dropped(self) -> int:
        return len(self.dropped_ids)

    def grid(self) -> TimeGrid:
        """Map the retained time indices onto [0, 1]."""
        idx = self.time_index.astype(float)
        if idx.size < 2:
            raise SchemaError("need at least two retained time points to form a grid")
        steps = np.diff(idx)
        if np.all(steps == steps[0]):
            return TimeGrid.uniform(idx.size)
        return TimeGrid((idx - idx[0]) / (idx[-1] - idx[0]))


def iqr_threshold(values, multiplier: float = 3.0) -> float:
    """``Q3 + multiplier * (Q3 - Q1)`` with linearly interpolated quartiles."""
    q1, q3 = np.percentile(np.asarray(values, dtype=float), [25, 75])
    return float(q3 + multiplier * (q3 - q1))


def zero_heavy_times(records: LongRecords, max_zero_fraction: float = 0.4) -> tuple[int, ...]:
    """Time indices whose share of exact zeros exceeds ``max_zero_fraction``.

    Useful for building ``retained_times`` (e.g. dropping sleep hours).
    """
    times = np.unique(records.time)
    out = []
    for t in times:
        sel = records.time == t
        if np.mean(records.value[sel] == 0.0) > max_zero_fraction:
            out.append(int(t))
    return tuple(out)


def preprocess(records: LongRecords, rules: PreprocessRules | None = None) -> CurveSet:
    """Outlier exclusion, complete-day filtering and day averaging.

    Outlier thresholds are computed per role on the raw pooled values,
    before any averaging. Day completeness is judged on which time indices
    were recorded, so an excluded outlier does not make its day incomplete;
    it is simply left out of the average at that time index. A subject is
    dropped when either role has too few qualifying days or a retained time
    index ends up with no usable value.
    """
    rules = rules or PreprocessRules()
    if len(records) == 0:
        raise EmptyCohortError("no records to preprocess")
    order = np.lexsort((records.time, records.day, records.role, records.subject.astype(str)))
    subj = records.subject.astype(str)[order]
    role = records.role[order]
    day = records.day[order]
    time = records.time[order]
    value = records.value[order]

    expected = np.array(sorted(set(rules.expected_times or np.unique(time).tolist())), dtype=np.int64)
    retained = np.array(sorted(set(rules.retained_times or expected.tolist())), dtype=np.int64)

    keep = np.ones(value.size, dtype=bool)
    thresholds, n_out = {}, {}
    for r in ROLES:
        sel = role == r
        if rules.outlier_iqr_multiplier is None or not sel.any():
            continue
        thr = iqr_threshold(value[sel], rules.outlier_iqr_multiplier)
        bad = sel & (value > thr)
        thresholds[r] = thr
        n_out[r] = int(bad.sum())
        keep &= ~bad

    subjects, s_code = np.unique(subj, return_inverse=True)
    r_code = (role == "M").astype(np.int64)
    days, d_code = np.unique(day, return_inverse=True)
    n_s, n_d = subjects.size, days.size

    # a day is complete when every expected time index was recorded
    in_expected = np.isin(time, expected)
    day_key = (s_code * 2 + r_code) * n_d + d_code
    present = np.bincount(day_key[in_expected], minlength=n_s * 2 * n_d)
    if rules.require_complete_days:
        day_ok = present == expected.size
    else:
        day_ok = np.bincount(day_key, minlength=n_s * 2 * n_d) > 0
    n_days = day_ok.reshape(n_s, 2, n_d).sum(axis=2)

    t_pos = np.searchsorted(retained, time)
    t_pos = np.clip(t_pos, 0, retained.size - 1)
    use = keep & day_ok[day_key] & (retained[t_pos] == time)
    flat = (s_code[use] * 2 + r_code[use]) * retained.size + t_pos[use]
    size = n_s * 2 * retained.size
    sums = np.bincount(flat, weights=value[use], minlength=size).reshape(n_s, 2, retained.size)
    counts = np.bincount(flat, minlength=size).reshape(n_s, 2, retained.size)

    min_w = int(rules.min_days.get("W", 1))
    min_m = int(rules.min_days.get("M", 1))
    enough = (n_days[:, 0] >= max(min_w, 1)) & (n_days[:, 1] >= max(min_m, 1))
    covered = (counts > 0).all(axis=(1, 2))
    ok = enough & covered
    if not ok.any():
        raise EmptyCohortError(f"no subject survives preprocessing ({n_s} dropped)")
    means = sums[ok] / counts[ok]
    dropped = tuple(subjects[~ok].tolist())
    if dropped:
        log.info("preprocess dropped %d of %d subjects", len(dropped), n_s)
    return CurveSet(
        subject_ids=tuple(subjects[ok].tolist()),
        time_index=retained,
        W=means[:, 0, :],
        M=means[:, 1, :],
        dropped_ids=dropped,
        thresholds=thresholds,
        n_outliers=n_out,
    )


@dataclass(frozen=True)
class OutcomeSchema:
    id_column: str = "subject_id"
    outcome_column: str = "Y"
    covariate_columns: tuple[str, ...] = ()
    weight_column: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> OutcomeSchema:
        kw = dict(d)
        if "covariate_columns" in kw:
            kw["covariate_columns"] = tuple(kw["covariate_columns"])
        return cls(**kw)


@dataclass(frozen=True)
class JoinReport:
    n_matched: int
    unmatched_curve_ids: tuple
    unmatched_outcome_ids: tuple


def _read_outcomes(path, schema: OutcomeSchema) -> dict[str, tuple[float, list[float], float | None]]:
    needed = [schema.id_column, schema.outcome_column, *schema.covariate_columns]
    if schema.weight_column:
        needed.append(schema.weight_column)
    out = {}
    bad = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        for rec in reader:
            try:
                sid = rec[schema.id_column]
                if sid in out:
                    raise ValueError(f"duplicate subject id {sid!r}")
                y = float(rec[schema.outcome_column])
                z = [float(rec[c]) for c in schema.covariate_columns]
                w = float(rec[schema.weight_column]) if schema.weight_column else None
                if not all(math.isfinite(v) for v in [y, *z]):
                    raise ValueError("non-finite outcome or covariate")
                if w is not None and not (math.isfinite(w) and w > 0):
                    raise ValueError(f"weight must be positive, got {w}")
            except ValueError as exc:
                bad.append((reader.line_num, str(exc)))
                continue
            out[sid] = (y, z, w)
    if bad:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in bad[:5])
        raise RowError(f"{path}: {len(bad)} malformed outcome row(s) ({detail})", bad)
    return out


def assemble_dataset(curves: CurveSet, outcomes_csv, schema: OutcomeSchema | None = None) -> tuple[Dataset, JoinReport]:
    """Inner-join subject curves with outcomes, covariates and optional weights."""
    schema = schema or OutcomeSchema()
    outcomes = _read_outcomes(outcomes_csv, schema)
    pos = {sid: i for i, sid in enumerate(curves.subject_ids)}
    matched = [sid for sid in curves.subject_ids if sid in outcomes]
    report = JoinReport(
        n_matched=len(matched),
        unmatched_curve_ids=tuple(sid for sid in curves.subject_ids if sid not in outcomes),
        unmatched_outcome_ids=tuple(sid for sid in outcomes if sid not in pos),
    )
    if report.unmatched_curve_ids or report.unmatched_outcome_ids:
        log.info(
            "join left out %d curve subjects and %d outcome rows",
            len(report.unmatched_curve_ids), len(report.unmatched_outcome_ids),
        )
    if not matched:
        raise EmptyCohortError("no subject appears in both the curves and the outcome file")
    rows = [pos[sid] for sid in matched]
    grid = curves.grid()
    p = len(schema.covariate_columns)
    dataset = Dataset(
        Y=np.array([outcomes[sid][0] for sid in matched]),
        W=FunctionalSample(curves.W[rows], grid),
        M=FunctionalSample(curves.M[rows], grid),
        Z=np.array([outcomes[sid][1] for sid in matched], dtype=float).reshape(len(matched), p),
        weights=np.array([outcomes[sid][2] for sid in matched]) if schema.weight_column else None,
        z_names=tuple(schema.covariate_columns),
        subject_ids=tuple(matched),
    )
    return dataset, report


def export_dataset(data: Dataset, directory) -> tuple[Path, Path]:
    """Write a data set as a long curve file and an outcome file.

    Each subject gets a single day (``day = 0``) per role and time indices
    ``0 .. n_grid - 1``. Values are written with full precision.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = data.subject_ids or tuple(f"s{i:06d}" for i in range(data.n))
    curve_path = directory / "curves.csv"
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(DEFAULT_SCHEMA.values()))
        for role, sample in (("W", data.W), ("M", data.M)):
            for sid, row in zip(ids, sample.values):
                for l, v in enumerate(row):
                    w.writerow([sid, role, 0, l, repr(float(v))])
    outcome_path = directory / "outcomes.csv"
    with open(outcome_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["subject_id", "Y", *data.z_names]
        if data.weights is not None:
            header.append("weight")
        w.writerow(header)
        for i, sid in enumerate(ids):
            row = [sid, repr(float(data.Y[i]))] + [repr(float(v)) for v in data.Z[i]]
            if data.weights is not None:
                row.append(repr(float(data.weights[i])))
            w.writerow(row)
    return curve_path, outcome_path
