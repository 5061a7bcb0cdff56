"""Experiment harness: synthetic data, accuracy-vs-reduction runs, timing runs.

The synthetic generator stands in for real runtime logs: each job type has a
ground-truth runtime function (a parametric scale-out law times a per-context
factor) plus multiplicative lognormal noise and a share of exact duplicate
rows, mimicking recurring jobs. run_experiment reduces the train split only
and scores models on an untouched test split, repeated over seeds.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import KMEANS, METHODS
from .dataset import (
    CATEGORICAL,
    ColumnSpec,
    Dataset,
    DatasetManifest,
    JobRunRecord,
    NUMERIC,
    format_number,
    load_dataset,
    parse_manifest,
)
from .errors import ParameterError, SchemaError
from .models import C3O, MODEL_NAMES, _predict_records, c3o_select, mape
from .reduction import ReductionRequest, apply_reduction, derive_seed

MACHINES_COLUMN = "machines"
DATASIZE_COLUMN = "datasize_gb"
NODE_TYPE_COLUMN = "node_type"
TARGET_COLUMN = "runtime_s"


# ---------------------------------------------------------------------------
# Synthetic data generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Ground truth for one synthetic job type.

    runtime = node_factor * prod(1 + weight * param_position)
              * (theta . [1, s/m, log2 m, m]) * lognormal(sigma)
    where param_position rescales a parameter value to [0, 1] over its range.
    """
    job_type: str
    n: int
    machine_counts: tuple[int, ...]
    datasizes_gb: tuple[float, ...]
    node_types: tuple[str, ...]
    node_factors: tuple[float, ...]
    params: tuple[tuple[str, tuple[float, ...]], ...]  # (name, discrete values)
    param_weights: tuple[float, ...]
    theta: tuple[float, float, float, float]
    noise_sigma: float = 0.05
    duplicate_fraction: float = 0.1

    def __post_init__(self):
        if self.n < 10:
            raise ParameterError(f"n={self.n} must be >= 10")
        for label, values in (("machine_counts", self.machine_counts),
                              ("datasizes_gb", self.datasizes_gb),
                              ("node_types", self.node_types)):
            if len(values) == 0:
                raise ParameterError(f"{label} must not be empty")
        if len(self.node_factors) != len(self.node_types):
            raise ParameterError("node_factors must parallel node_types")
        if any(f <= 0 for f in self.node_factors):
            raise ParameterError("node factors must be > 0")
        if len(self.param_weights) != len(self.params):
            raise ParameterError("param_weights must parallel params")
        for name, values in self.params:
            if len(values) == 0:
                raise ParameterError(f"parameter {name!r} has an empty range")
        if any(w <= -1.0 for w in self.param_weights):
            raise ParameterError("param weights must be > -1 to keep runtimes positive")
        if len(self.theta) != 4 or any(t < 0 for t in self.theta):
            raise ParameterError("theta must be 4 non-negative coefficients")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        if not (0.0 <= self.duplicate_fraction < 1.0):
            raise ParameterError("duplicate_fraction must be in [0, 1)")
        if any(m < 1 for m in self.machine_counts):
            raise ParameterError("machine counts must be >= 1")
        if any(s < 0 for s in self.datasizes_gb):
            raise ParameterError("data sizes must be >= 0")

    def manifest(self) -> DatasetManifest:
        features = [
            ColumnSpec(MACHINES_COLUMN, NUMERIC),
            ColumnSpec(DATASIZE_COLUMN, NUMERIC),
            ColumnSpec(NODE_TYPE_COLUMN, CATEGORICAL),
        ]
        features += [ColumnSpec(name, NUMERIC) for name, _ in self.params]
        return DatasetManifest(
            job_type=self.job_type,
            feature_columns=tuple(features),
            scaleout_column=MACHINES_COLUMN,
            datasize_column=DATASIZE_COLUMN,
            target_column=TARGET_COLUMN,
        )

    def context_factor(self, values: dict) -> float:
        factor = self.node_factors[self.node_types.index(values[NODE_TYPE_COLUMN])]
        for (name, choices), weight in zip(self.params, self.param_weights):
            lo, hi = min(choices), max(choices)
            position = 0.0 if hi == lo else (float(values[name]) - lo) / (hi - lo)
            factor *= 1.0 + weight * position
        return factor

    def noiseless_runtime(self, values: dict) -> float:
        m = float(values[MACHINES_COLUMN])
        s = float(values[DATASIZE_COLUMN])
        t0, t1, t2, t3 = self.theta
        base = t0 + t1 * s / m + t2 * math.log2(m) + t3 * m
        return self.context_factor(values) * base


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> Dataset:
    """Sample configurations uniformly over the declared ranges, inject duplicates."""
    rng = np.random.default_rng(seed)
    n_dup = int(round(spec.duplicate_fraction * spec.n))
    n_base = spec.n - n_dup
    records = []
    for _ in range(n_base):
        values: dict[str, float | str] = {
            MACHINES_COLUMN: float(spec.machine_counts[rng.integers(len(spec.machine_counts))]),
            DATASIZE_COLUMN: float(spec.datasizes_gb[rng.integers(len(spec.datasizes_gb))]),
            NODE_TYPE_COLUMN: spec.node_types[rng.integers(len(spec.node_types))],
        }
        for name, choices in spec.params:
            values[name] = float(choices[rng.integers(len(choices))])
        runtime = spec.noiseless_runtime(values)
        if spec.noise_sigma > 0:
            runtime *= math.exp(rng.normal(0.0, spec.noise_sigma))
        records.append(JobRunRecord(values=values, runtime_s=runtime))
    for _ in range(n_dup):
        records.append(records[int(rng.integers(n_base))])
    order = rng.permutation(len(records))
    return Dataset(manifest=spec.manifest(),
                   records=tuple(records[int(i)] for i in order))


def spec_to_obj(spec: SyntheticSpec) -> dict:
    return {
        "job_type": spec.job_type,
        "n": spec.n,
        "machine_counts": list(spec.machine_counts),
        "datasizes_gb": list(spec.datasizes_gb),
        "node_types": list(spec.node_types),
        "node_factors": list(spec.node_factors),
        "params": {name: list(values) for name, values in spec.params},
        "param_weights": list(spec.param_weights),
        "theta": list(spec.theta),
        "noise_sigma": spec.noise_sigma,
        "duplicate_fraction": spec.duplicate_fraction,
    }


def parse_spec(obj: dict) -> SyntheticSpec:
    try:
        return SyntheticSpec(
            job_type=str(obj["job_type"]),
            n=int(obj["n"]),
            machine_counts=tuple(int(m) for m in obj["machine_counts"]),
            datasizes_gb=tuple(float(s) for s in obj["datasizes_gb"]),
            node_types=tuple(str(t) for t in obj["node_types"]),
            node_factors=tuple(float(f) for f in obj["node_factors"]),
            params=tuple((str(name), tuple(float(v) for v in values))
                         for name, values in obj.get("params", {}).items()),
            param_weights=tuple(float(w) for w in obj.get("param_weights", [])),
            theta=tuple(float(t) for t in obj["theta"]),
            noise_sigma=float(obj.get("noise_sigma", 0.05)),
            duplicate_fraction=float(obj.get("duplicate_fraction", 0.1)),
        )
    except KeyError as exc:
        raise SchemaError(f"synthetic spec missing field: {exc}") from exc


def desk_suite() -> tuple[SyntheticSpec, ...]:
    """Five job types, 186 rows each: 930 rows total at desk scale."""
    return (
        SyntheticSpec(
            job_type="sort", n=186,
            machine_counts=(2, 4, 8, 16, 24, 32),
            datasizes_gb=(8.0, 16.0, 32.0, 64.0),
            node_types=("m5.xlarge", "c5.xlarge"),
            node_factors=(1.0, 0.97),
            params=(("partitions", (128.0, 256.0)),),
            param_weights=(0.04,),
            theta=(60.0, 18.0, 12.0, 0.6),
        ),
        SyntheticSpec(
            job_type="grep", n=186,
            machine_counts=(2, 4, 8, 16, 32),
            datasizes_gb=(16.0, 32.0, 64.0, 128.0),
            node_types=("m5.xlarge", "c5.xlarge"),
            node_factors=(1.0, 0.96),
            params=(("pattern_len", (8.0, 16.0)),),
            param_weights=(0.03,),
            theta=(25.0, 22.0, 4.0, 0.35),
        ),
        SyntheticSpec(
            job_type="sgd", n=186,
            machine_counts=(2, 4, 8, 16, 24),
            datasizes_gb=(4.0, 8.0, 16.0),
            node_types=("m5.xlarge", "r5.xlarge"),
            node_factors=(1.0, 1.03),
            params=(("iterations", (5.0, 10.0, 20.0)),),
            param_weights=(0.05,),
            theta=(90.0, 40.0, 22.0, 1.1),
        ),
        SyntheticSpec(
            job_type="kmeans", n=186,
            machine_counts=(2, 4, 8, 16, 32),
            datasizes_gb=(4.0, 16.0),
            node_types=("m5.xlarge", "c5.xlarge"),
            node_factors=(1.0, 0.96),
            params=(("k", (8.0, 16.0)), ("iterations", (10.0, 20.0))),
            param_weights=(0.03, 0.04),
            theta=(110.0, 48.0, 26.0, 1.4),
        ),
        SyntheticSpec(
            job_type="pagerank", n=186,
            machine_counts=(4, 8, 16, 24, 32),
            datasizes_gb=(8.0, 16.0, 32.0),
            node_types=("m5.xlarge", "r5.xlarge"),
            node_factors=(1.0, 1.04),
            params=(("iterations", (5.0, 10.0, 20.0)),),
            param_weights=(0.05,),
            theta=(140.0, 60.0, 35.0, 1.8),
        ),
    )


# ---------------------------------------------------------------------------
# Accuracy experiments
# ---------------------------------------------------------------------------

VALID_REPORT_MODELS = MODEL_NAMES + (C3O,)


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[tuple[str, Dataset], ...]
    methods: tuple[str, ...] = METHODS
    levels: tuple[float, ...] = (1.0, 0.5, 0.25, 0.1)
    repetitions: int = 20
    test_fraction: float = 0.2
    models: tuple[str, ...] = (C3O,)
    base_seed: int = 0

    def __post_init__(self):
        if len(self.datasets) == 0:
            raise ParameterError("config needs at least one dataset")
        if len(self.methods) == 0 or any(m not in METHODS for m in self.methods):
            raise ParameterError(f"methods must be a non-empty subset of {METHODS}")
        if len(self.levels) == 0 or any(not (0.0 < lv <= 1.0) for lv in self.levels):
            raise ParameterError("levels must be retained fractions in (0, 1]")
        if self.repetitions < 1:
            raise ParameterError("repetitions must be >= 1")
        if not (0.0 < self.test_fraction < 1.0):
            raise ParameterError("test_fraction must be in (0, 1)")
        if len(self.models) == 0 or any(m not in VALID_REPORT_MODELS for m in self.models):
            raise ParameterError(f"models must be a non-empty subset of {VALID_REPORT_MODELS}")


@dataclass(frozen=True)
class ReportRow:
    job_type: str
    method: str
    level: float
    achieved_size: float   # mean reduced train size over repetitions
    model: str
    mean_mape: float
    stddev_mape: float
    mean_train_time_ms: float
    test_rows: int
    repetitions_counted: int
    available: bool

    def __post_init__(self):
        if self.available and self.mean_mape < 0:
            raise ParameterError("mean_mape must be >= 0")


EVALUATION_CSV_COLUMNS = ("job_type", "method", "level", "achieved_size", "model",
                          "mean_mape", "stddev_mape", "mean_train_time_ms",
                          "test_rows", "repetitions", "available")


@dataclass(frozen=True)
class EvaluationReport:
    rows: tuple[ReportRow, ...]

    def to_csv(self, include_timing: bool = True) -> str:
        cols = [c for c in EVALUATION_CSV_COLUMNS
                if include_timing or c != "mean_train_time_ms"]
        out = [",".join(cols)]
        for r in self.rows:
            cells = {
                "job_type": r.job_type,
                "method": r.method,
                "level": format_number(r.level),
                "achieved_size": format_number(r.achieved_size),
                "model": r.model,
                "mean_mape": format_number(r.mean_mape) if r.available else "",
                "stddev_mape": format_number(r.stddev_mape) if r.available else "",
                "mean_train_time_ms": format_number(r.mean_train_time_ms) if r.available else "",
                "test_rows": str(r.test_rows),
                "repetitions": str(r.repetitions_counted),
                "available": "yes" if r.available else "no",
            }
            out.append(",".join(cells[c] for c in cols))
        return "\n".join(out) + "\n"


def _level_request(method: str, level: float, seed: int) -> ReductionRequest:
    # dbscan matches the representative count of the fraction via an eps sweep
    return ReductionRequest(method=method, retained_fraction=level, seed=seed)


def run_experiment(config: ExperimentConfig) -> EvaluationReport:
    """Reduce the train split only, score on the untouched test split, aggregate."""
    rows: list[ReportRow] = []
    for ji, (job_type, dataset) in enumerate(config.datasets):
        n = len(dataset)
        n_test = max(1, int(round(config.test_fraction * n)))
        n_train = n - n_test
        if n_train < 2:
            raise ParameterError(f"dataset {job_type!r} too small for a train/test split")
        records = dataset.records

        mapes: dict[tuple, list[float]] = {}
        times: dict[tuple, list[float]] = {}
        sizes: dict[tuple, list[int]] = {}
        for rep in range(config.repetitions):
            rng = np.random.default_rng([config.base_seed, ji, rep])
            perm = rng.permutation(n)
            test = tuple(records[int(i)] for i in perm[:n_test])
            train = Dataset(manifest=dataset.manifest,
                            records=tuple(records[int(i)] for i in perm[n_test:]))
            actuals = np.array([r.runtime_s for r in test])
            cluster_seed = derive_seed(config.base_seed, ji, rep)
            cv_seed = derive_seed(config.base_seed, ji, rep, 1)
            for method in config.methods:
                for level in config.levels:
                    outcome = apply_reduction(train, _level_request(method, level, cluster_seed))
                    reduced = outcome.reduced
                    if len(test) != n_test:  # leakage tripwire; must be impossible
                        raise AssertionError("test split size changed")
                    start = time.perf_counter()
                    predictor = c3o_select(reduced, seed=cv_seed)
                    c3o_seconds = time.perf_counter() - start
                    sizes.setdefault((method, level), []).append(len(reduced))
                    for model_name in config.models:
                        if model_name == C3O:
                            preds = predictor.predict_records(test)
                            seconds = c3o_seconds
                        else:
                            model = predictor.models.get(model_name)
                            if model is None:
                                continue  # absent for this repetition
                            preds = _predict_records(model_name, model, test)
                            seconds = predictor.fit_seconds[model_name]
                        key = (method, level, model_name)
                        mapes.setdefault(key, []).append(mape(preds, actuals))
                        times.setdefault(key, []).append(seconds)

        for method in config.methods:
            for level in config.levels:
                size_list = sizes.get((method, level), [])
                achieved = float(np.mean(size_list)) if size_list else 0.0
                for model_name in config.models:
                    key = (method, level, model_name)
                    values = mapes.get(key, [])
                    if values:
                        rows.append(ReportRow(
                            job_type=job_type, method=method, level=level,
                            achieved_size=achieved, model=model_name,
                            mean_mape=float(np.mean(values)),
                            stddev_mape=float(np.std(values)),
                            mean_train_time_ms=float(np.mean(times[key]) * 1000.0),
                            test_rows=n_test,
                            repetitions_counted=len(values),
                            available=True,
                        ))
                    else:
                        rows.append(ReportRow(
                            job_type=job_type, method=method, level=level,
                            achieved_size=achieved, model=model_name,
                            mean_mape=0.0, stddev_mape=0.0, mean_train_time_ms=0.0,
                            test_rows=n_test, repetitions_counted=0, available=False,
                        ))
    return EvaluationReport(rows=tuple(rows))


# ---------------------------------------------------------------------------
# Training-time experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingRow:
    level: float
    reduced_size: int
    mean_train_time_ms: float
    stddev_ms: float | None  # None when a single repetition was run


@dataclass(frozen=True)
class TimingReport:
    rows: tuple[TimingRow, ...]
    spearman: float | None  # None when the trend is undefined (constant ranks)

    def to_csv(self) -> str:
        out = ["level,reduced_size,mean_train_time_ms,stddev_ms"]
        for r in self.rows:
            std = "" if r.stddev_ms is None else format_number(r.stddev_ms)
            out.append(f"{format_number(r.level)},{r.reduced_size},"
                       f"{format_number(r.mean_train_time_ms)},{std}")
        sp = "" if self.spearman is None else format_number(self.spearman)
        out.append(f"# spearman_level_vs_time: {sp if sp else 'undefined'}")
        return "\n".join(out) + "\n"


def _ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank over ties
        i = j + 1
    return ranks


def spearman(x, y) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ParameterError("spearman needs two equal-length vectors")
    if len(x) < 2:
        return None
    rx, ry = _ranks(x), _ranks(y)
    sx, sy = float(rx.std()), float(ry.std())
    if sx == 0.0 or sy == 0.0:
        return None
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def measure_training_time(dataset: Dataset, levels, repetitions: int = 3,
                          seed: int = 0) -> TimingReport:
    """Time full selector fits on reduced datasets; first fit per level warms up."""
    if repetitions < 1:
        raise ParameterError("repetitions must be >= 1")
    levels = tuple(float(lv) for lv in levels)
    rows = []
    for li, level in enumerate(levels):
        request = ReductionRequest(method=KMEANS, retained_fraction=level, seed=seed)
        reduced = apply_reduction(dataset, request).reduced
        c3o_select(reduced, seed=derive_seed(seed, li))  # warm-up, discarded
        samples = []
        for rep in range(repetitions):
            start = time.perf_counter()
            c3o_select(reduced, seed=derive_seed(seed, li, rep))
            samples.append((time.perf_counter() - start) * 1000.0)
        rows.append(TimingRow(
            level=level,
            reduced_size=len(reduced),
            mean_train_time_ms=float(np.mean(samples)),
            stddev_ms=float(np.std(samples)) if repetitions > 1 else None,
        ))
    trend = spearman([r.level for r in rows], [r.mean_train_time_ms for r in rows])
    return TimingReport(rows=tuple(rows), spearman=trend)


# ---------------------------------------------------------------------------
# Experiment config files
# ---------------------------------------------------------------------------

def parse_experiment_config(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    """Build an ExperimentConfig from its JSON form.

    Each dataset entry either inlines a synthetic spec ({"synthetic": {...},
    "seed": 7}) or references files ({"csv": "runs.csv", "manifest":
    "job.manifest"}); relative paths resolve against base_dir.
    """
    base = Path(base_dir)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "datasets" not in obj:
        raise SchemaError("config must be a JSON object with a 'datasets' list")

    datasets: list[tuple[str, Dataset]] = []
    for entry in obj["datasets"]:
        if "synthetic" in entry:
            spec = parse_spec(entry["synthetic"])
            ds = generate_synthetic(spec, seed=int(entry.get("seed", 0)))
            datasets.append((spec.job_type, ds))
        elif "csv" in entry and "manifest" in entry:
            manifest = parse_manifest((base / entry["manifest"]).read_text())
            ds = load_dataset(manifest, (base / entry["csv"]).read_text())
            datasets.append((entry.get("job_type", manifest.job_type), ds))
        else:
            raise SchemaError("dataset entry needs 'synthetic' or 'csv' + 'manifest'")

    kwargs = {}
    if "methods" in obj:
        kwargs["methods"] = tuple(obj["methods"])
    if "levels" in obj:
        kwargs["levels"] = tuple(float(lv) for lv in obj["levels"])
    if "repetitions" in obj:
        kwargs["repetitions"] = int(obj["repetitions"])
    if "test_fraction" in obj:
        kwargs["test_fraction"] = float(obj["test_fraction"])
    if "models" in obj:
        kwargs["models"] = tuple(obj["models"])
    if "base_seed" in obj:
        kwargs["base_seed"] = int(obj["base_seed"])
    return ExperimentConfig(datasets=tuple(datasets), **kwargs)
