"""Tabular dataset ingestion, feature typing and the analysis matrix.

A :class:`Dataset` is column-major and immutable after ingestion.  Continuous
columns are ``float64`` arrays with ``NaN`` at missing cells; categorical
columns are ``int64`` code arrays with ``-1`` at missing cells and a sorted
code-to-string dictionary.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

HELOC_SENTINELS = (-7.0, -8.0, -9.0)


class DataError(ValueError):
    """Raised for malformed input data or schema violations."""


class FeatureKind(str, Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: FeatureKind
    excluded: bool = False
    is_label: bool = False


@dataclass(frozen=True)
class Schema:
    """Feature-typing directives for :func:`ingest_csv`.

    ``kinds`` overrides the inferred kind per column.  ``sentinels`` are cell
    values treated as missing in every non-label column.
    """

    label: str | None = None
    excluded: tuple[str, ...] = ()
    sentinels: tuple[float, ...] = ()
    kinds: Mapping[str, str] = field(default_factory=dict)

    _KEYS = ("label", "excluded", "sentinels", "kinds")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        unknown = set(doc) - set(cls._KEYS)
        if unknown:
            raise DataError(f"unknown schema keys: {sorted(unknown)}")
        kinds = dict(doc.get("kinds") or {})
        for name, kind in kinds.items():
            if kind not in (k.value for k in FeatureKind):
                raise DataError(f"unknown kind {kind!r} for column {name!r}")
        return cls(
            label=doc.get("label"),
            excluded=tuple(doc.get("excluded") or ()),
            sentinels=tuple(float(s) for s in doc.get("sentinels") or ()),
            kinds=kinds,
        )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "excluded": list(self.excluded),
            "sentinels": list(self.sentinels),
            "kinds": dict(sorted(self.kinds.items())),
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    features: tuple[FeatureMeta, ...]
    columns: Mapping[str, np.ndarray]
    missing: Mapping[str, np.ndarray]
    categories: Mapping[str, tuple[str, ...]]
    n_rows: int
    source: str | None = None
    schema: Schema | None = None

    def __post_init__(self):
        labels = [f.name for f in self.features if f.is_label]
        if len(labels) > 1:
            raise DataError(f"more than one label column: {labels}")
        for f in self.features:
            if len(self.columns[f.name]) != self.n_rows:
                raise DataError(f"column {f.name!r} has wrong length")
            self.columns[f.name].setflags(write=False)
            self.missing[f.name].setflags(write=False)

    @property
    def row_ids(self) -> np.ndarray:
        return np.arange(self.n_rows)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def label(self) -> FeatureMeta | None:
        for f in self.features:
            if f.is_label:
                return f
        return None

    def feature(self, name: str) -> FeatureMeta:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(f"unknown feature {name!r}")

    def all_rows(self) -> "Group":
        return Group(range(self.n_rows))

    def label_values(self, rows: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """Label strings for ``rows`` (``None`` where missing)."""
        label = self.label
        if label is None:
            raise DataError("dataset has no label column")
        codes = self.columns[label.name]
        if rows is not None:
            codes = codes[np.asarray(rows, dtype=np.int64)]
        cats = self.categories[label.name]
        return np.array([cats[c] if c >= 0 else None for c in codes], dtype=object)

    def content_hash(self) -> str:
        """SHA-256 over feature metadata, values, masks and dictionaries."""
        h = hashlib.sha256()
        for f in self.features:
            h.update(json.dumps([f.name, f.kind.value, f.excluded, f.is_label]).encode())
            h.update(np.ascontiguousarray(self.columns[f.name]).tobytes())
            h.update(np.ascontiguousarray(self.missing[f.name]).tobytes())
            h.update(json.dumps(list(self.categories.get(f.name, ()))).encode())
        h.update(str(self.n_rows).encode())
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        if self.features != other.features or self.n_rows != other.n_rows:
            return False
        for f in self.features:
            a, b = self.columns[f.name], other.columns[f.name]
            if not np.array_equal(a, b, equal_nan=f.kind is FeatureKind.CONTINUOUS):
                return False
            if not np.array_equal(self.missing[f.name], other.missing[f.name]):
                return False
            if tuple(self.categories.get(f.name, ())) != tuple(other.categories.get(f.name, ())):
                return False
        return True

    def take(self, rows: Sequence[int] | np.ndarray, drop_label: bool = False) -> "Dataset":
        """New dataset holding ``rows`` (renumbered from 0)."""
        idx = np.asarray(rows, dtype=np.int64)
        features = tuple(f for f in self.features if not (drop_label and f.is_label))
        return Dataset(
            features=features,
            columns={f.name: self.columns[f.name][idx].copy() for f in features},
            missing={f.name: self.missing[f.name][idx].copy() for f in features},
            categories={k: v for k, v in self.categories.items() if any(f.name == k for f in features)},
            n_rows=len(idx),
            source=None,
            schema=self.schema,
        )


class Group:
    """Sorted, duplicate-free set of row ids."""

    __slots__ = ("rows",)

    def __init__(self, rows: Iterable[int]):
        self.rows: tuple[int, ...] = tuple(sorted(set(int(r) for r in rows)))

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __contains__(self, row):
        i = bisect.bisect_left(self.rows, row)
        return i < len(self.rows) and self.rows[i] == row

    def __eq__(self, other):
        return isinstance(other, Group) and self.rows == other.rows

    def __hash__(self):
        return hash(self.rows)

    def __repr__(self):
        return f"Group(n={len(self.rows)})"

    def array(self) -> np.ndarray:
        return np.fromiter(self.rows, dtype=np.int64, count=len(self.rows))

    def minus(self, other: "Group") -> "Group":
        return Group(set(self.rows) - set(other.rows))


# -- ingestion ----------------------------------------------------------------


def _parse_float(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v


def _is_sentinel(value: float, sentinels: tuple[float, ...]) -> bool:
    return any(value == s for s in sentinels)


def read_csv(text: str, schema: Schema | None = None, source: str | None = None) -> Dataset:
    """Parse delimited text already in memory; see :func:`ingest_csv`."""
    schema = schema or Schema()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("file is empty; a header row is required") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")

    named = set(schema.excluded) | set(schema.kinds)
    if schema.label is not None:
        named.add(schema.label)
    unknown = named - set(header)
    if unknown:
        raise DataError(f"schema names unknown columns: {sorted(unknown)}")

    raw: list[list[str]] = [[] for _ in header]
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise DataError(
                f"row {lineno}: expected {len(header)} fields, got {len(record)}"
            )
        for j, cell in enumerate(record):
            raw[j].append(cell.strip())
    n_rows = len(raw[0]) if raw else 0

    features, columns, missing, categories = [], {}, {}, {}
    for j, name in enumerate(header):
        cells = raw[j]
        is_label = name == schema.label
        sentinels = () if is_label else schema.sentinels
        kind = _column_kind(name, cells, schema, sentinels, is_label)
        if kind is FeatureKind.CONTINUOUS:
            values = np.full(n_rows, np.nan)
            mask = np.zeros(n_rows, dtype=bool)
            for i, cell in enumerate(cells):
                if cell == "":
                    mask[i] = True
                    continue
                v = _parse_float(cell)
                if v is None:
                    raise DataError(
                        f"row {i + 2}, column {name!r}: non-numeric value {cell!r}"
                    )
                if _is_sentinel(v, sentinels) or math.isnan(v):
                    mask[i] = True
                else:
                    values[i] = v
            columns[name] = values
        else:
            mask = np.array(
                [c == "" or _categorical_sentinel(c, sentinels) for c in cells], dtype=bool
            )
            levels = tuple(sorted({c for c, m in zip(cells, mask) if not m}))
            lookup = {level: k for k, level in enumerate(levels)}
            codes = np.array(
                [-1 if m else lookup[c] for c, m in zip(cells, mask)], dtype=np.int64
            )
            columns[name] = codes
            categories[name] = levels
        missing[name] = mask
        features.append(
            FeatureMeta(
                name=name,
                kind=kind,
                excluded=is_label or name in schema.excluded,
                is_label=is_label,
            )
        )
    return Dataset(
        features=tuple(features),
        columns=columns,
        missing=missing,
        categories=categories,
        n_rows=n_rows,
        source=source,
        schema=schema,
    )


def _categorical_sentinel(cell: str, sentinels: tuple[float, ...]) -> bool:
    v = _parse_float(cell)
    return v is not None and _is_sentinel(v, sentinels)


def _column_kind(name, cells, schema, sentinels, is_label) -> FeatureKind:
    if is_label:
        return FeatureKind.CATEGORICAL
    if name in schema.kinds:
        return FeatureKind(schema.kinds[name])
    for cell in cells:
        if cell != "" and _parse_float(cell) is None:
            return FeatureKind.CATEGORICAL
    return FeatureKind.CONTINUOUS


def ingest_csv(path: str | Path, schema: Schema | None = None) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Columns are continuous unless a cell fails to parse as a number or the
    schema says otherwise; the label column is always categorical.  Empty
    cells and configured sentinel values are flagged missing.

    Raises
    ------
    DataError
        On a row of the wrong arity, a schema naming an unknown column, or a
        non-numeric cell in a column forced to be continuous.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return read_csv(text, schema, source=str(path))


def write_csv(dataset: Dataset) -> str:
    """Serialize back to delimited text; missing cells are written empty."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(dataset.names)
    cols = []
    for f in dataset.features:
        col = dataset.columns[f.name]
        mask = dataset.missing[f.name]
        if f.kind is FeatureKind.CONTINUOUS:
            cols.append(["" if m else repr(float(v)) for v, m in zip(col, mask)])
        else:
            cats = dataset.categories[f.name]
            cols.append(["" if m else cats[c] for c, m in zip(col, mask)])
    for i in range(dataset.n_rows):
        writer.writerow([c[i] for c in cols])
    return out.getvalue()


def schema_of(dataset: Dataset) -> Schema:
    """A schema that re-ingests ``write_csv(dataset)`` to an identical dataset."""
    base = dataset.schema or Schema()
    return Schema(
        label=dataset.label.name if dataset.label else None,
        excluded=tuple(f.name for f in dataset.features if f.excluded and not f.is_label),
        sentinels=base.sentinels,
        kinds={f.name: f.kind.value for f in dataset.features if not f.is_label},
    )


# -- analysis matrix ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnalysisMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    rows: tuple[int, ...]
    dropped: tuple[str, ...] = ()


def analysis_matrix(dataset: Dataset, group: Group) -> AnalysisMatrix:
    """Numeric matrix over ``group`` for geometry.

    Uses non-excluded continuous columns as-is and one-hot encodes
    non-excluded categoricals.  Missing cells take the column median over the
    group; columns with no present value in the group are dropped and named in
    ``dropped``.
    """
    if len(group) == 0:
        raise DataError("analysis_matrix needs a non-empty group")
    idx = group.array()
    blocks, names, dropped = [], [], []
    for f in dataset.features:
        if f.excluded:
            continue
        col = dataset.columns[f.name][idx]
        mask = dataset.missing[f.name][idx]
        if f.kind is FeatureKind.CONTINUOUS:
            candidates = [(f.name, np.where(mask, np.nan, col))]
        else:
            candidates = [
                (f"{f.name}={level}", np.where(mask, np.nan, (col == k).astype(float)))
                for k, level in enumerate(dataset.categories[f.name])
            ]
        for name, values in candidates:
            present = ~np.isnan(values)
            if not present.any():
                dropped.append(name)
                continue
            if not present.all():
                values = np.where(present, values, np.median(values[present]))
            blocks.append(values)
            names.append(name)
    if dropped:
        logger.warning("dropped all-missing columns: %s", ", ".join(dropped))
    if not blocks:
        raise DataError("no usable analysis columns (all excluded or all missing)")
    return AnalysisMatrix(
        values=np.column_stack(blocks).astype(float),
        columns=tuple(names),
        rows=group.rows,
        dropped=tuple(dropped),
    )


def label_distribution(dataset: Dataset, group: Group) -> dict[str, float]:
    """Fraction of each label level among ``group`` rows with a label."""
    label = dataset.label
    if label is None:
        raise DataError("dataset has no label column")
    if len(group) == 0:
        raise DataError("label_distribution needs a non-empty group")
    codes = dataset.columns[label.name][group.array()]
    codes = codes[codes >= 0]
    if len(codes) == 0:
        raise DataError("no labelled rows in group")
    counts = np.bincount(codes, minlength=len(dataset.categories[label.name]))
    cats = dataset.categories[label.name]
    return {cats[k]: float(counts[k] / len(codes)) for k in range(len(cats)) if counts[k]}


def label_counts(dataset: Dataset, group: Group) -> dict[str, int]:
    label = dataset.label
    if label is None:
        raise DataError("dataset has no label column")
    codes = dataset.columns[label.name][group.array()]
    cats = dataset.categories[label.name]
    counts = np.bincount(codes[codes >= 0], minlength=len(cats))
    return {cats[k]: int(counts[k]) for k in range(len(cats))}


def concat(first: Dataset, second: Dataset) -> Dataset:
    """Stack two datasets row-wise; ``second`` may lack the label column."""
    if [f.name for f in first.features if not f.is_label] != [
        f.name for f in second.features if not f.is_label
    ]:
        raise DataError("datasets have different feature columns")
    columns, missing, categories = {}, {}, {}
    for f in first.features:
        a_mask = first.missing[f.name]
        if f.name in second.columns:
            g = second.feature(f.name)
            if g.kind is not f.kind:
                raise DataError(f"column {f.name!r} typed differently in the two files")
            b_mask = second.missing[f.name]
        else:
            b_mask = np.ones(second.n_rows, dtype=bool)
        if f.kind is FeatureKind.CONTINUOUS:
            b = second.columns[f.name] if f.name in second.columns else np.full(second.n_rows, np.nan)
            columns[f.name] = np.concatenate([first.columns[f.name], b])
        else:
            a_cats = first.categories[f.name]
            b_cats = second.categories.get(f.name, ())
            levels = tuple(sorted(set(a_cats) | set(b_cats)))
            lookup = {level: k for k, level in enumerate(levels)}
            a = np.array([lookup[a_cats[c]] if c >= 0 else -1 for c in first.columns[f.name]], dtype=np.int64)
            if f.name in second.columns:
                b = np.array([lookup[b_cats[c]] if c >= 0 else -1 for c in second.columns[f.name]], dtype=np.int64)
            else:
                b = np.full(second.n_rows, -1, dtype=np.int64)
            columns[f.name] = np.concatenate([a, b])
            categories[f.name] = levels
        missing[f.name] = np.concatenate([a_mask, b_mask])
    return Dataset(
        features=first.features,
        columns=columns,
        missing=missing,
        categories=categories,
        n_rows=first.n_rows + second.n_rows,
        schema=first.schema,
    )
