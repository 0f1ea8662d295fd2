"""Loading, cleaning and subsampling of CICDDoS2019-style flow tables.

Flow files are comma-separated with a header row. Identifier columns (flow id,
addresses, ports, timestamps) are dropped at load time; the remaining columns
are numeric features plus one label column that is binarised to
``Attack`` / ``Benign``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DEFAULT_IGNORE_COLUMNS",
    "Dataset",
    "DatasetError",
    "FeatureSchema",
    "FlowRecord",
    "Label",
    "Provenance",
    "default_label_rule",
    "load_dataset",
    "parse_value",
    "preprocess",
    "sample",
    "select_features",
    "summary_report",
    "synthetic_flows",
    "write_dataset",
]


class DatasetError(ValueError):
    """Raised for malformed input files and invalid dataset operations."""


class Label(str, Enum):
    ATTACK = "Attack"
    BENIGN = "Benign"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def coerce(cls, value) -> "Label":
        """Accept a Label, its text (any case) or 1/0 with 1 meaning Attack."""
        if isinstance(value, Label):
            return value
        if isinstance(value, (bool, np.bool_)):
            return cls.ATTACK if value else cls.BENIGN
        if isinstance(value, (int, np.integer)):
            if value in (0, 1):
                return cls.ATTACK if value == 1 else cls.BENIGN
            raise ValueError(f"integer label must be 0 or 1, got {value}")
        text = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == text:
                return member
        raise ValueError(f"not a label: {value!r}")


# Identifier/metadata columns found in the CICDDoS2019 CSV exports.
DEFAULT_IGNORE_COLUMNS: frozenset[str] = frozenset(
    {
        "Unnamed: 0",
        "Flow ID",
        "Source IP",
        "Src IP",
        "Source Port",
        "Src Port",
        "Destination IP",
        "Dst IP",
        "Destination Port",
        "Dst Port",
        "Timestamp",
        "SimillarHTTP",
    }
)

_NONFINITE_TOKENS = {"nan", "inf", "+inf", "-inf", "infinity", "+infinity", "-infinity"}


def parse_value(token: str) -> float:
    """Parse one raw field; NaN/Inf spellings and garbage all become NaN."""
    text = token.strip()
    if text.lower() in _NONFINITE_TOKENS:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        return math.nan
    # float() also accepts things like "1e999" -> inf
    return value if math.isfinite(value) else math.nan


def default_label_rule(raw: str) -> Label:
    return Label.BENIGN if raw.strip().lower() == "benign" else Label.ATTACK


@dataclass(frozen=True)
class FeatureSchema:
    feature_names: tuple[str, ...]
    label_column: str = "Label"
    feature_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        names = tuple(self.feature_names)
        object.__setattr__(self, "feature_names", names)
        kinds = tuple(self.feature_kinds) or ("numeric",) * len(names)
        object.__setattr__(self, "feature_kinds", kinds)
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DatasetError(f"duplicate feature names: {', '.join(dupes)}")
        if self.label_column in names:
            raise DatasetError(f"label column {self.label_column!r} listed as a feature")
        if len(kinds) != len(names):
            raise DatasetError("feature_kinds must align with feature_names")
        if any(k not in ("numeric", "text") for k in kinds):
            raise DatasetError(f"unknown feature kind in {kinds}")
        if "numeric" not in kinds:
            raise DatasetError("schema needs at least one numeric feature")

    def __len__(self) -> int:
        return len(self.feature_names)

    @property
    def numeric_names(self) -> tuple[str, ...]:
        return tuple(n for n, k in zip(self.feature_names, self.feature_kinds) if k == "numeric")


@dataclass(frozen=True)
class FlowRecord:
    index: int
    values: tuple[float, ...]
    label: Label

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values)


@dataclass(frozen=True)
class Provenance:
    source: str
    preprocessed: bool = False
    rows_in: int = 0
    rows_dropped: int = 0
    selected: tuple[str, ...] | None = None
    sampled: tuple[int, int, bool] | None = None  # (n, seed, stratified)


@dataclass(frozen=True)
class Dataset:
    schema: FeatureSchema
    records: tuple[FlowRecord, ...]
    provenance: Provenance = field(default_factory=lambda: Provenance("<memory>"))

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        width = len(self.schema)
        last = -1
        for rec in records:
            if len(rec.values) != width:
                raise DatasetError(
                    f"record {rec.index}: expected {width} values, got {len(rec.values)}"
                )
            if rec.index <= last:
                raise DatasetError("record indices must be strictly increasing")
            last = rec.index

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self) -> list[Label]:
        return [r.label for r in self.records]

    def to_array(self) -> np.ndarray:
        """Record values as an (n, m) float64 array."""
        if not self.records:
            return np.empty((0, len(self.schema)), dtype=np.float64)
        return np.array([r.values for r in self.records], dtype=np.float64)

    def label_counts(self) -> dict[Label, int]:
        counts = {Label.ATTACK: 0, Label.BENIGN: 0}
        for rec in self.records:
            counts[rec.label] += 1
        return counts

    @classmethod
    def from_arrays(cls, X, y, feature_names: Sequence[str], label_column="Label", source="<memory>"):
        """Build a dataset from a 2-D array and label vector (row order = index)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DatasetError("X must be 2-dimensional")
        schema = FeatureSchema(tuple(feature_names), label_column)
        records = tuple(
            FlowRecord(i, tuple(float(v) for v in row), Label.coerce(lbl))
            for i, (row, lbl) in enumerate(zip(X, y))
        )
        return cls(schema, records, Provenance(source))


LabelMap = Mapping[str, Label] | Callable[[str], Label] | None


def _labeler(label_map: LabelMap) -> Callable[[str], Label]:
    if label_map is None:
        return default_label_rule
    if callable(label_map):
        return label_map
    fallback = label_map.get("*")

    def lookup(raw: str) -> Label:
        key = raw.strip()
        if key in label_map:
            return Label.coerce(label_map[key])
        if fallback is not None:
            return Label.coerce(fallback)
        raise DatasetError(f"label {raw!r} not covered by label map")

    return lookup


def load_dataset(
    path,
    label_column: str = "Label",
    label_map: LabelMap = None,
    ignore_columns: Iterable[str] = DEFAULT_IGNORE_COLUMNS,
) -> Dataset:
    """Read a flow CSV into a Dataset.

    Unparseable and non-finite values are stored as NaN and left for
    :func:`preprocess` to drop. A column with no parseable value at all is
    marked as a ``text`` feature.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    to_label = _labeler(label_map)
    ignore = {c.strip() for c in ignore_columns}

    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file, expected a header row") from None
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise DatasetError(f"{path}: duplicate header names: {', '.join(dupes)}")
        if label_column not in header:
            raise DatasetError(f"{path}: header has no label column {label_column!r}")

        label_pos = header.index(label_column)
        feature_pos = [
            i for i, h in enumerate(header) if i != label_pos and h not in ignore
        ]
        names = tuple(header[i] for i in feature_pos)
        width = len(header)

        rows: list[tuple[tuple[float, ...], Label]] = []
        seen_numeric = [False] * len(feature_pos)
        for fields in reader:
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != width:
                raise DatasetError(
                    f"row {reader.line_num}: expected {width} fields, got {len(fields)}"
                )
            values = []
            for j, pos in enumerate(feature_pos):
                raw = fields[pos].strip()
                if not seen_numeric[j]:
                    seen_numeric[j] = raw.lower() in _NONFINITE_TOKENS or not math.isnan(
                        parse_value(raw)
                    )
                values.append(parse_value(raw))
            rows.append((tuple(values), to_label(fields[label_pos])))

    kinds = tuple("numeric" if ok or not rows else "text" for ok in seen_numeric)
    schema = FeatureSchema(names, label_column, kinds)
    records = tuple(FlowRecord(i, vals, lbl) for i, (vals, lbl) in enumerate(rows))
    return Dataset(schema, records, Provenance(str(path), rows_in=len(records)))


def preprocess(dataset: Dataset) -> Dataset:
    """Drop text columns, then every row holding a NaN/Inf/unparseable value."""
    schema = dataset.schema
    keep = [j for j, k in enumerate(schema.feature_kinds) if k == "numeric"]
    if len(keep) != len(schema):
        schema = FeatureSchema(
            tuple(schema.feature_names[j] for j in keep), schema.label_column
        )
        records = [
            FlowRecord(r.index, tuple(r.values[j] for j in keep), r.label)
            for r in dataset.records
        ]
    else:
        records = list(dataset.records)

    survivors = tuple(r for r in records if r.is_finite())
    if not survivors:
        raise DatasetError("no rows survive preprocessing")
    prov = dataset.provenance
    dropped = len(records) - len(survivors)
    provenance = replace(
        prov,
        preprocessed=True,
        rows_in=prov.rows_in or len(records),
        rows_dropped=prov.rows_dropped + dropped,
    )
    return Dataset(schema, survivors, provenance)


def sample(dataset: Dataset, n: int, seed: int, stratified: bool = False) -> Dataset:
    """Deterministic subsample of ``n`` records, returned in original order.

    In stratified mode the Attack/Benign split follows the source proportion
    (rounded to the nearest record).
    """
    total = len(dataset)
    if n <= 0:
        raise DatasetError(f"sample size must be positive, got {n}")
    if n > total:
        raise DatasetError(f"sample size {n} exceeds record count {total}")
    if n == total:
        return dataset

    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    if stratified:
        attack = [i for i, r in enumerate(dataset.records) if r.label is Label.ATTACK]
        benign = [i for i, r in enumerate(dataset.records) if r.label is Label.BENIGN]
        n_attack = int(round(n * len(attack) / total))
        n_attack = min(max(n_attack, n - len(benign)), len(attack))
        picked = list(rng.choice(attack, size=n_attack, replace=False)) if n_attack else []
        if n - n_attack:
            picked += list(rng.choice(benign, size=n - n_attack, replace=False))
    else:
        picked = list(rng.choice(total, size=n, replace=False))

    chosen = tuple(dataset.records[i] for i in sorted(int(p) for p in picked))
    provenance = replace(dataset.provenance, sampled=(n, seed, stratified))
    return Dataset(dataset.schema, chosen, provenance)


def select_features(dataset: Dataset, names: Sequence[str]) -> Dataset:
    """Project the dataset onto ``names``, in that order."""
    schema = dataset.schema
    position = {name: j for j, name in enumerate(schema.feature_names)}
    missing = [n for n in names if n not in position]
    if missing:
        raise DatasetError(f"unknown feature: {', '.join(missing)}")
    idx = [position[n] for n in names]
    new_schema = FeatureSchema(
        tuple(names), schema.label_column, tuple(schema.feature_kinds[j] for j in idx)
    )
    records = tuple(
        FlowRecord(r.index, tuple(r.values[j] for j in idx), r.label) for r in dataset.records
    )
    return Dataset(new_schema, records, replace(dataset.provenance, selected=tuple(names)))


def write_dataset(dataset: Dataset, path) -> None:
    """Write records back out as CSV (features then label column)."""
    from .prompts import format_number

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*dataset.schema.feature_names, dataset.schema.label_column])
        for rec in dataset.records:
            writer.writerow([*(format_number(v) for v in rec.values), rec.label.value])


def summary_report(dataset: Dataset) -> str:
    prov = dataset.provenance
    counts = dataset.label_counts()
    lines = [
        f"source: {prov.source}",
        f"rows_in: {prov.rows_in}",
        f"rows_dropped: {prov.rows_dropped}",
        f"rows_out: {len(dataset)}",
        f"features: {len(dataset.schema)}",
        f"label_attack: {counts[Label.ATTACK]}",
        f"label_benign: {counts[Label.BENIGN]}",
    ]
    return "\n".join(lines) + "\n"


# A handful of CICDDoS2019 flow features, used to make synthetic data look
# like the real thing in prompts.
_SYNTH_FEATURES = (
    "Flow Duration",
    "Total Fwd Packets",
    "Total Backward Packets",
    "Total Length of Fwd Packets",
    "Fwd Packet Length Mean",
    "Flow Bytes/s",
    "Flow Packets/s",
    "Flow IAT Mean",
    "SYN Flag Count",
    "Average Packet Size",
)


def synthetic_flows(n: int, seed: int = 7, attack_fraction: float = 0.5) -> Dataset:
    """Random labelled flows with CICDDoS2019 feature names.

    Attack rows are short, packet-dense bursts; benign rows are longer and
    sparser. Values are continuous, so token texts are unique per record.
    """
    if n <= 0:
        raise DatasetError("n must be positive")
    rng = np.random.default_rng(seed)
    is_attack = rng.random(n) < attack_fraction
    duration = np.where(is_attack, rng.lognormal(6, 1.5, n), rng.lognormal(12, 2.0, n))
    fwd = np.where(is_attack, rng.integers(1, 6, n), rng.integers(2, 60, n)).astype(float)
    bwd = np.where(is_attack, rng.integers(0, 2, n), rng.integers(1, 60, n)).astype(float)
    pkt_len = np.where(is_attack, rng.normal(900, 300, n), rng.normal(300, 150, n)).clip(0)
    fwd_len = np.round(fwd * pkt_len, 1)
    seconds = duration / 1e6
    bytes_s = np.round(fwd_len / np.maximum(seconds, 1e-6), 3)
    pkts_s = np.round((fwd + bwd) / np.maximum(seconds, 1e-6), 3)
    iat = np.round(duration / np.maximum(fwd + bwd - 1, 1), 3)
    syn = np.where(is_attack, rng.random(n) < 0.3, rng.random(n) < 0.05).astype(float)
    avg = np.round(pkt_len * rng.uniform(0.95, 1.05, n), 4)
    cols = [np.round(duration), fwd, bwd, fwd_len, np.round(pkt_len, 4), bytes_s, pkts_s, iat, syn, avg]
    X = np.column_stack(cols)
    y = [Label.ATTACK if a else Label.BENIGN for a in is_attack]
    return Dataset.from_arrays(X, y, _SYNTH_FEATURES, source=f"<synthetic n={n} seed={seed}>")
