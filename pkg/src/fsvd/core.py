"""Domain types, CSV ingestion, validation, and normalization.

A dataset is a collection of subjects, each observed at its own irregular
time points on a common rescaled interval [0, 1].
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateTimeRange,
    EmptyDataset,
    MalformedRow,
    NonFiniteValue,
)

CSV_HEADER = "subject_id,time,value"


@dataclass(frozen=True)
class SubjectSeries:
    """One subject's observations, times strictly increasing."""

    id: str
    times: np.ndarray
    values: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class FunctionalDataset:
    subjects: tuple[SubjectSeries, ...]

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    def counts(self) -> np.ndarray:
        return np.array([s.n_points for s in self.subjects], dtype=int)

    def all_times(self) -> np.ndarray:
        """Sorted unique union of observation times."""
        return np.unique(np.concatenate([s.times for s in self.subjects]))

    def with_values(self, new_values: list[np.ndarray]) -> "FunctionalDataset":
        """Same subjects and times, replaced values."""
        subs = tuple(
            SubjectSeries(s.id, s.times, np.asarray(v, dtype=float))
            for s, v in zip(self.subjects, new_values)
        )
        return FunctionalDataset(subs)


@dataclass
class ScalingInfo:
    """Affine raw-time map t_raw = time_offset + time_scale * t."""

    time_offset: float = 0.0
    time_scale: float = 1.0
    per_subject_center: list[float] | None = None
    per_subject_scale: list[float] | None = None

    def to_raw_times(self, t: np.ndarray) -> np.ndarray:
        return self.time_offset + self.time_scale * np.asarray(t, dtype=float)


@dataclass
class ValidationReport:
    n: int
    min_J: int
    max_J: int
    time_range_raw: tuple[float, float]
    n_duplicate_times_merged: int = 0
    warnings: list[str] = field(default_factory=list)


def make_dataset(
    ids: list[str], times: list[np.ndarray], values: list[np.ndarray]
) -> FunctionalDataset:
    """Assemble a dataset from parallel per-subject arrays (already sorted)."""
    subs = tuple(
        SubjectSeries(i, np.asarray(t, dtype=float), np.asarray(v, dtype=float))
        for i, t, v in zip(ids, times, values)
    )
    return FunctionalDataset(subs)


def _merge_duplicates(times: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Sort by time and average exact duplicate times. Returns merge count."""
    order = np.argsort(times, kind="stable")
    t, v = times[order], values[order]
    uniq, inv, counts = np.unique(t, return_inverse=True, return_counts=True)
    if len(uniq) == len(t):
        return t, v, 0
    sums = np.zeros(len(uniq))
    np.add.at(sums, inv, v)
    return uniq, sums / counts, int(np.sum(counts - 1))


def ingest_long_csv(
    path: str,
    rescale_time: bool = True,
    normalize_values: str = "none",
) -> tuple[FunctionalDataset, ScalingInfo, ValidationReport]:
    """Read a long-format CSV (subject_id,time,value) into a dataset.

    Subjects keep first-appearance order; times are affinely mapped to [0,1]
    when `rescale_time`; exact duplicate (subject, time) rows are averaged.
    """
    with open(path, "r", encoding="utf-8") as fh:
        return _ingest_stream(fh, rescale_time, normalize_values)


def ingest_long_csv_text(
    text: str, rescale_time: bool = True, normalize_values: str = "none"
) -> tuple[FunctionalDataset, ScalingInfo, ValidationReport]:
    return _ingest_stream(io.StringIO(text), rescale_time, normalize_values)


def _ingest_stream(fh, rescale_time, normalize_values):
    if normalize_values not in ("none", "per_subject_z"):
        raise ValueError(f"unknown normalize_values: {normalize_values!r}")
    header = fh.readline()
    if header.strip().replace(" ", "") != CSV_HEADER:
        raise MalformedRow(1, f"expected header '{CSV_HEADER}'")
    per_subject: dict[str, tuple[list, list]] = {}
    order: list[str] = []
    for lineno, line in enumerate(fh, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedRow(lineno, f"expected 3 fields, got {len(parts)}")
        sid = parts[0]
        try:
            t = float(parts[1])
            v = float(parts[2])
        except ValueError as exc:
            raise MalformedRow(lineno, str(exc)) from None
        if not (math.isfinite(t) and math.isfinite(v)):
            raise NonFiniteValue(f"line {lineno}: non-finite time or value")
        if sid not in per_subject:
            per_subject[sid] = ([], [])
            order.append(sid)
        per_subject[sid][0].append(t)
        per_subject[sid][1].append(v)
    if not order:
        raise EmptyDataset("no data rows")

    raw_min = min(min(ts) for ts, _ in per_subject.values())
    raw_max = max(max(ts) for ts, _ in per_subject.values())
    scaling = ScalingInfo()
    if rescale_time:
        if raw_max == raw_min:
            raise DegenerateTimeRange("all observation times equal")
        scaling.time_offset = raw_min
        scaling.time_scale = raw_max - raw_min

    n_merged = 0
    ids, times_list, values_list = [], [], []
    centers, scales = [], []
    for sid in order:
        t = np.array(per_subject[sid][0], dtype=float)
        v = np.array(per_subject[sid][1], dtype=float)
        if rescale_time:
            t = (t - scaling.time_offset) / scaling.time_scale
        t, v, merged = _merge_duplicates(t, v)
        n_merged += merged
        if normalize_values == "per_subject_z":
            c = float(np.mean(v))
            s = float(np.std(v))
            if s <= 0.0:
                s = 1.0
            v = (v - c) / s
            centers.append(c)
            scales.append(s)
        ids.append(sid)
        times_list.append(t)
        values_list.append(v)
    if normalize_values == "per_subject_z":
        scaling.per_subject_center = centers
        scaling.per_subject_scale = scales

    ds = make_dataset(ids, times_list, values_list)
    report = validate_dataset(ds)
    report.time_range_raw = (raw_min, raw_max)
    report.n_duplicate_times_merged = n_merged
    return ds, scaling, report


def validate_dataset(ds: FunctionalDataset) -> ValidationReport:
    """Counts and warnings; subjects with fewer than 3 points are flagged."""
    counts = ds.counts()
    warnings = [
        f"subject '{s.id}' has only {s.n_points} observation(s); "
        "too few for the spline representer (needs > 2)"
        for s in ds.subjects
        if s.n_points < 3
    ]
    all_t = ds.all_times()
    return ValidationReport(
        n=ds.n,
        min_J=int(counts.min()),
        max_J=int(counts.max()),
        time_range_raw=(float(all_t[0]), float(all_t[-1])),
        warnings=warnings,
    )


def emit_long_csv(ds: FunctionalDataset) -> str:
    """Canonical CSV: stored subject order, ascending times, 17 sig digits."""
    lines = [CSV_HEADER]
    for s in ds.subjects:
        for t, v in zip(s.times, s.values):
            lines.append(f"{s.id},{t:.17g},{v:.17g}")
    return "\n".join(lines) + "\n"
