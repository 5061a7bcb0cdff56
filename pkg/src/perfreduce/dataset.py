"""Runtime-record data model: schema manifests, CSV ingestion, dedup, encoding.

A dataset is a list of job-run records under a declared manifest. Records hold
the context features of one executed job (numeric and categorical) plus the
measured runtime in seconds. Everything downstream (clustering, models) works
on the encoded matrix produced here: categoricals one-hot expanded, every
column z-score standardized.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, RowError, SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # NUMERIC or CATEGORICAL

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown column kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Declares the schema of one job type's runtime records.

    The scale-out column (machine count) and data-size column (input MB) are
    ordinary numeric features that additionally carry a semantic role, so the
    parametric models can find them.
    """

    job_type: str
    feature_columns: tuple[ColumnSpec, ...]
    scaleout_column: str
    datasize_column: str
    target_column: str

    def __post_init__(self):
        names = [c.name for c in self.feature_columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature column names in manifest")
        roles = (self.scaleout_column, self.datasize_column, self.target_column)
        if len(set(roles)) != 3:
            raise SchemaError("scaleout, datasize and target columns must be distinct")
        if self.target_column in names:
            raise SchemaError("target column must not be listed as a feature")
        for role, label in ((self.scaleout_column, "scaleout"), (self.datasize_column, "datasize")):
            spec = self.column(role)
            if spec is None:
                raise SchemaError(f"{label} column {role!r} missing from feature_columns")
            if spec.kind != NUMERIC:
                raise SchemaError(f"{label} column {role!r} must be numeric")

    def column(self, name: str) -> ColumnSpec | None:
        for spec in self.feature_columns:
            if spec.name == name:
                return spec
        return None

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.feature_columns)


@dataclass(frozen=True)
class JobRunRecord:
    """One executed job: feature values keyed by column name, runtime in seconds."""

    values: dict[str, float | str]
    runtime_s: float

    def key(self, manifest: DatasetManifest) -> tuple:
        """Full-duplicate identity: every column value plus the runtime."""
        return tuple(self.values[c] for c in manifest.column_names) + (self.runtime_s,)


@dataclass(frozen=True)
class Dataset:
    manifest: DatasetManifest
    records: tuple[JobRunRecord, ...]

    def __len__(self) -> int:
        return len(self.records)


def _check_record(manifest: DatasetManifest, values: dict, runtime_s: float, row_index: int):
    if not (isinstance(runtime_s, float) and math.isfinite(runtime_s) and runtime_s > 0):
        raise RowError(row_index, f"runtime {runtime_s!r} must be a finite number > 0")
    for spec in manifest.feature_columns:
        v = values[spec.name]
        if spec.kind == NUMERIC:
            if not (isinstance(v, float) and math.isfinite(v)):
                raise RowError(row_index, f"column {spec.name!r} value {v!r} is not finite")
    so = values[manifest.scaleout_column]
    if so < 1:
        raise RowError(row_index, f"scale-out {so!r} must be >= 1")
    if values[manifest.datasize_column] < 0:
        raise RowError(row_index, f"data size {values[manifest.datasize_column]!r} must be >= 0")


def make_record(manifest: DatasetManifest, values: dict[str, float | str],
                runtime_s: float, row_index: int = -1) -> JobRunRecord:
    """Validate and build one record; row_index only labels error messages."""
    missing = [c for c in manifest.column_names if c not in values]
    if missing:
        raise SchemaError(f"record missing columns: {', '.join(missing)}")
    clean = {c: values[c] for c in manifest.column_names}
    _check_record(manifest, clean, runtime_s, row_index)
    return JobRunRecord(values=clean, runtime_s=float(runtime_s))


def load_dataset(manifest: DatasetManifest, csv_source) -> Dataset:
    """Read a Dataset from a CSV byte or text stream (header row required).

    Extra CSV columns are ignored; row order is preserved. Schema problems
    raise SchemaError, bad cells raise RowError with the offending row index
    (0-based over data rows).
    """
    if isinstance(csv_source, bytes):
        text = csv_source.decode("utf-8")
    elif isinstance(csv_source, str):
        text = csv_source
    else:
        raw = csv_source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty CSV: no header row") from None
    header = [h.strip() for h in header]
    col_index: dict[str, int] = {}
    for name in list(manifest.column_names) + [manifest.target_column]:
        if name not in header:
            raise SchemaError(f"CSV is missing column {name!r}")
        col_index[name] = header.index(name)

    records = []
    row_index = 0
    for row in reader:
        if not row:
            continue
        values: dict[str, float | str] = {}
        for spec in manifest.feature_columns:
            cell = row[col_index[spec.name]]
            if spec.kind == NUMERIC:
                try:
                    values[spec.name] = float(cell)
                except ValueError:
                    raise RowError(row_index, f"cannot parse {cell!r} in column {spec.name!r}") from None
            else:
                values[spec.name] = cell
        cell = row[col_index[manifest.target_column]]
        try:
            runtime = float(cell)
        except ValueError:
            raise RowError(row_index, f"cannot parse runtime {cell!r}") from None
        _check_record(manifest, values, runtime, row_index)
        records.append(JobRunRecord(values=values, runtime_s=runtime))
        row_index += 1
    if not records:
        raise SchemaError("CSV contains no data rows")
    return Dataset(manifest=manifest, records=tuple(records))


def format_number(v: float) -> str:
    """Shortest digit string that parses back to the same float."""
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_csv(dataset: Dataset) -> str:
    """Render a dataset back to CSV text; load_dataset(write_csv(d)) == d."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    m = dataset.manifest
    writer.writerow(list(m.column_names) + [m.target_column])
    for rec in dataset.records:
        row = []
        for spec in m.feature_columns:
            v = rec.values[spec.name]
            row.append(format_number(v) if spec.kind == NUMERIC else v)
        row.append(format_number(rec.runtime_s))
        writer.writerow(row)
    return out.getvalue()


def deduplicate(dataset: Dataset) -> Dataset:
    """Drop records identical in every column including runtime, keeping first occurrences."""
    seen = set()
    kept = []
    for rec in dataset.records:
        key = rec.key(dataset.manifest)
        if key not in seen:
            seen.add(key)
            kept.append(rec)
    return Dataset(manifest=dataset.manifest, records=tuple(kept))


# ---------------------------------------------------------------------------
# Encoding: one-hot expansion + z-score standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedColumn:
    """Maps one matrix column back to its source column (and category if one-hot)."""

    name: str
    source: str
    category: str | None = None


@dataclass(frozen=True)
class EncodingLayout:
    columns: tuple[EncodedColumn, ...]
    include_target: bool

    @property
    def width(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class Scaling:
    """Per-column (mean, stddev) used for z-scoring; stddev 0 marks constant columns."""

    mean: tuple[float, ...]
    std: tuple[float, ...]


@dataclass(frozen=True)
class EncodedMatrix:
    rows: np.ndarray = field(repr=False)  # n x d, standardized
    layout: EncodingLayout
    scaling: Scaling


def build_layout(dataset: Dataset, include_target: bool) -> EncodingLayout:
    """Derive the encoded column structure; category order is first appearance."""
    if not dataset.records:
        raise ContractError("cannot encode an empty dataset")
    cols: list[EncodedColumn] = []
    for spec in dataset.manifest.feature_columns:
        if spec.kind == NUMERIC:
            cols.append(EncodedColumn(name=spec.name, source=spec.name))
        else:
            seen: list[str] = []
            for rec in dataset.records:
                v = rec.values[spec.name]
                if v not in seen:
                    seen.append(v)
            for cat in seen:
                cols.append(EncodedColumn(name=f"{spec.name}={cat}", source=spec.name, category=cat))
    if include_target:
        t = dataset.manifest.target_column
        cols.append(EncodedColumn(name=t, source=t))
    return EncodingLayout(columns=tuple(cols), include_target=include_target)


def raw_matrix(records, layout: EncodingLayout) -> np.ndarray:
    """Encode records under a fixed layout, without standardization.

    Categories unknown to the layout produce an all-zero one-hot block, so a
    layout built on training data can encode unseen records.
    """
    rows = np.zeros((len(records), layout.width))
    for i, rec in enumerate(records):
        for j, col in enumerate(layout.columns):
            if col.category is not None:
                rows[i, j] = 1.0 if rec.values.get(col.source) == col.category else 0.0
            elif col.source in rec.values:
                rows[i, j] = rec.values[col.source]
            else:  # target column
                rows[i, j] = rec.runtime_s
    return rows


def fit_scaling(raw: np.ndarray) -> Scaling:
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)  # population stddev
    return Scaling(mean=tuple(float(x) for x in mean), std=tuple(float(x) for x in std))


def standardize(raw: np.ndarray, scaling: Scaling) -> np.ndarray:
    mean = np.asarray(scaling.mean)
    std = np.asarray(scaling.std)
    safe = np.where(std > 0, std, 1.0)
    out = (raw - mean) / safe
    out[:, std == 0] = 0.0  # constant columns pass through as zeros
    return out


def destandardize(rows: np.ndarray, scaling: Scaling) -> np.ndarray:
    mean = np.asarray(scaling.mean)
    std = np.asarray(scaling.std)
    return rows * std + mean  # std 0 collapses back to the column mean


def encode(dataset: Dataset, include_target: bool) -> EncodedMatrix:
    """One-hot expand categoricals, optionally append runtime, z-score every column."""
    layout = build_layout(dataset, include_target)
    raw = raw_matrix(dataset.records, layout)
    scaling = fit_scaling(raw)
    return EncodedMatrix(rows=standardize(raw, scaling), layout=layout, scaling=scaling)


# ---------------------------------------------------------------------------
# Manifest file format (line-oriented key/value; grammar in docs/FORMATS.md)
# ---------------------------------------------------------------------------

def parse_manifest(text: str) -> DatasetManifest:
    """Parse a manifest document.

    Lines are `key: value`; the `feature:` key repeats, one per column, as
    `feature: <name> <numeric|categorical>`. `#` starts a comment.
    """
    fields: dict[str, str] = {}
    features: list[ColumnSpec] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise SchemaError(f"manifest line {lineno}: expected 'key: value'")
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "feature":
            parts = value.split()
            if len(parts) != 2:
                raise SchemaError(f"manifest line {lineno}: feature needs '<name> <kind>'")
            features.append(ColumnSpec(name=parts[0], kind=parts[1]))
        else:
            if key in fields:
                raise SchemaError(f"manifest line {lineno}: duplicate key {key!r}")
            fields[key] = value
    required = ("job_type", "scaleout_column", "datasize_column", "target_column")
    missing = [k for k in required if k not in fields]
    if missing:
        raise SchemaError(f"manifest missing keys: {', '.join(missing)}")
    if not features:
        raise SchemaError("manifest declares no feature columns")
    return DatasetManifest(
        job_type=fields["job_type"],
        feature_columns=tuple(features),
        scaleout_column=fields["scaleout_column"],
        datasize_column=fields["datasize_column"],
        target_column=fields["target_column"],
    )


def render_manifest(manifest: DatasetManifest) -> str:
    lines = [
        f"job_type: {manifest.job_type}",
        f"scaleout_column: {manifest.scaleout_column}",
        f"datasize_column: {manifest.datasize_column}",
        f"target_column: {manifest.target_column}",
    ]
    for spec in manifest.feature_columns:
        lines.append(f"feature: {spec.name} {spec.kind}")
    return "\n".join(lines) + "\n"
