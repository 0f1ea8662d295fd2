"""Global per-column statistics used as prior knowledge in the first prompt."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flow_data import Dataset, FeatureSchema
from .prompts import format_number

__all__ = [
    "STAT_NAMES",
    "ColumnStats",
    "KnowledgeProfile",
    "column_stats",
    "compute_profile",
    "profile_csv",
    "render_knowledge_text",
]

STAT_NAMES = ("Max", "Min", "Median", "Mean", "Variance")


@dataclass(frozen=True)
class ColumnStats:
    max: float
    min: float
    median: float
    mean: float
    variance: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.max, self.min, self.median, self.mean, self.variance)


@dataclass(frozen=True)
class KnowledgeProfile:
    stats: tuple[ColumnStats, ...]
    row_count: int
    feature_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.stats)


def column_stats(values: Sequence[float]) -> ColumnStats:
    """Max, min, median, mean and population variance of one column.

    Sums go through ``math.fsum`` so large flow-duration magnitudes keep
    full precision. A constant column gets variance exactly 0.
    """
    n = len(values)
    if n == 0:
        raise ValueError("cannot summarise an empty column")
    ordered = sorted(float(v) for v in values)
    lo, hi = ordered[0], ordered[-1]
    mid = n // 2
    median = ordered[mid] if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2
    if lo == hi:
        return ColumnStats(hi, lo, lo, lo, 0.0)
    mean = math.fsum(ordered) / n
    mean = min(max(mean, lo), hi)
    variance = math.fsum((v - mean) ** 2 for v in values) / n
    if variance == 0.0:
        # values differ, so the true variance is positive but underflowed
        variance = math.ulp(0.0)
    return ColumnStats(hi, lo, median, mean, variance)


def compute_profile(dataset: Dataset) -> KnowledgeProfile:
    if len(dataset) == 0:
        raise ValueError("cannot profile an empty dataset")
    X = dataset.to_array()
    if not np.isfinite(X).all():
        raise ValueError("dataset holds non-finite values; preprocess it first")
    stats = tuple(column_stats(X[:, j].tolist()) for j in range(X.shape[1]))
    return KnowledgeProfile(stats, len(dataset), dataset.schema.feature_names)


def render_knowledge_text(profile: KnowledgeProfile, schema: FeatureSchema) -> str:
    """One ``Name -> Max: a, Min: b, Median: c, Mean: d, Variance: v`` line per feature."""
    if len(profile.stats) != len(schema.feature_names):
        raise ValueError(
            f"profile has {len(profile.stats)} columns, schema has {len(schema.feature_names)}"
        )
    lines = []
    for name, st in zip(schema.feature_names, profile.stats):
        parts = ", ".join(
            f"{label}: {format_number(v)}" for label, v in zip(STAT_NAMES, st.as_tuple())
        )
        lines.append(f"{name} -> {parts}")
    return "\n".join(lines)


def profile_csv(profile: KnowledgeProfile, schema: FeatureSchema) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["feature", "max", "min", "median", "mean", "variance"])
    for name, st in zip(schema.feature_names, profile.stats):
        writer.writerow([name, *(repr(v) for v in st.as_tuple())])
    return buf.getvalue()
