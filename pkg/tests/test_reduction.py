import math

import numpy as np
import pytest

from perfreduce.clustering import dbscan
from perfreduce.dataset import Dataset, deduplicate, encode
from perfreduce.errors import ParameterError, SchemaError
from perfreduce.evaluation import (
    ExperimentConfig,
    SyntheticSpec,
    generate_synthetic,
    run_experiment,
)
from perfreduce.models import C3O
from perfreduce.reduction import (
    ACCEPTED,
    DEFERRED,
    KMEANS,
    KMEDOIDS,
    DBSCAN,
    REPORT_CSV_HEADER,
    ReductionRequest,
    apply_reduction,
    decision_to_text,
    derive_seed,
    reduce,
    report_to_csv,
    report_to_text,
    sweep_dbscan,
    validate_contribution,
)

from conftest import basic_manifest, dataset_from_rows, ernest_dataset, row


def noisy_dataset(n=100, dup_fraction=0.0, seed=0, sigma=0.05):
    spec = SyntheticSpec(
        job_type="probe", n=n, machine_counts=(2, 4, 8, 16),
        datasizes_gb=(100.0, 200.0, 400.0), node_types=("a", "b"),
        node_factors=(1.0, 1.1), params=(("p", (1.0, 2.0)),),
        param_weights=(0.05,), theta=(50.0, 900.0, 20.0, 0.8),
        noise_sigma=sigma, duplicate_fraction=dup_fraction)
    return generate_synthetic(spec, seed=seed)


def record_keys(ds):
    return set(r.key(ds.manifest) for r in ds.records)


# --- seeds ---

def test_derive_seed_deterministic_and_sensitive():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
    assert derive_seed(0) != derive_seed(1)
    assert 0 <= derive_seed(7, 7) < 2 ** 32


# --- request validation ---

def test_request_validation():
    with pytest.raises(ParameterError):
        ReductionRequest(method="ward", retained_fraction=0.5)
    with pytest.raises(ParameterError):
        ReductionRequest(method=KMEANS)  # fraction required
    with pytest.raises(ParameterError):
        ReductionRequest(method=KMEANS, retained_fraction=0.0)
    with pytest.raises(ParameterError):
        ReductionRequest(method=KMEANS, retained_fraction=1.5)
    with pytest.raises(ParameterError):
        ReductionRequest(method=KMEANS, retained_fraction=0.5, eps=1.0)
    with pytest.raises(ParameterError):
        ReductionRequest(method=DBSCAN)  # needs one selector
    with pytest.raises(ParameterError):
        ReductionRequest(method=DBSCAN, eps=1.0, target_size=5)
    with pytest.raises(ParameterError):
        ReductionRequest(method=DBSCAN, eps=-1.0)
    with pytest.raises(ParameterError):
        ReductionRequest(method=DBSCAN, eps=1.0, min_pts=0)
    with pytest.raises(ParameterError):
        ReductionRequest(method=KMEDOIDS, target_size=10)  # dbscan-only knob
    # valid forms construct fine
    ReductionRequest(method=KMEANS, retained_fraction=1.0)
    ReductionRequest(method=DBSCAN, target_size=10)
    ReductionRequest(method=DBSCAN, retained_fraction=0.25)


# --- sizing and identity ---

def test_full_fraction_is_identity_after_dedup():
    ds = noisy_dataset(n=80, dup_fraction=0.3)
    dedup = deduplicate(ds)
    for method in (KMEANS, KMEDOIDS):
        outcome = apply_reduction(ds, ReductionRequest(method=method,
                                                       retained_fraction=1.0))
        assert len(outcome.reduced) == len(dedup)
        assert record_keys(outcome.reduced) == record_keys(dedup)


def test_half_fraction_counts_duplicates_once():
    ds = noisy_dataset(n=100, dup_fraction=0.4, seed=3)
    dedup_n = len(deduplicate(ds))
    assert dedup_n < 100
    outcome = apply_reduction(ds, ReductionRequest(method=KMEANS,
                                                   retained_fraction=0.5))
    assert len(outcome.dedup) == dedup_n
    assert len(outcome.reduced) == math.ceil(0.5 * dedup_n)


def test_kmedoids_representatives_are_original_records():
    ds = noisy_dataset(n=60, dup_fraction=0.2, seed=5)
    dedup_keys = record_keys(deduplicate(ds))
    outcome = apply_reduction(ds, ReductionRequest(method=KMEDOIDS,
                                                   retained_fraction=0.25, seed=2))
    assert all(r.key(ds.manifest) in dedup_keys for r in outcome.reduced.records)


def test_singleton_clusters_decode_to_exact_rows():
    man = basic_manifest(node_column=False)
    ds = dataset_from_rows(man, [row(man, 2, 100, 50.5),
                                 row(man, 4, 200, 80.25),
                                 row(man, 8, 400, 120.125)])
    outcome = apply_reduction(ds, ReductionRequest(method=KMEANS,
                                                   retained_fraction=1.0))
    assert record_keys(outcome.reduced) == record_keys(ds)
    for rec in outcome.reduced.records:
        assert rec.runtime_s in (50.5, 80.25, 120.125)


def test_dbscan_tiny_eps_keeps_every_row():
    ds = noisy_dataset(n=40, seed=7)
    outcome = apply_reduction(ds, ReductionRequest(method=DBSCAN, eps=1e-9))
    assert len(outcome.reduced) == len(deduplicate(ds))
    assert outcome.clustering.n_noise == len(deduplicate(ds))
    assert outcome.eps_used is None  # set only when a sweep resolved eps


# --- epsilon sweep ---

def default_eps_grid(rows):
    sq = (rows * rows).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (rows @ rows.T), 0.0)
    diameter = float(np.sqrt(d2.max()))
    return [1e-9] if diameter <= 0 else list(np.geomspace(0.01 * diameter,
                                                          diameter, 32))


def test_sweep_picks_best_grid_point_preferring_larger_eps():
    ds = noisy_dataset(n=50, seed=11)
    enc = encode(deduplicate(ds), include_target=True)
    grid = default_eps_grid(enc.rows)
    for target in (50, 25, 10, 1):
        eps, result = sweep_dbscan(enc, target_size=target)
        got_gap = abs(result.representatives.shape[0] - target)
        gaps = [abs(dbscan(enc.rows, e, min_pts=2).representatives.shape[0]
                    - target) for e in grid]
        assert got_gap == min(gaps)
        # ties resolve toward the larger radius
        best_eps = max(e for e, g in zip(grid, gaps) if g == got_gap)
        assert eps == pytest.approx(best_eps)


def test_sweep_two_blobs_returns_blob_means():
    man = basic_manifest(node_column=False)
    rows = [row(man, 2, 100 + d, 50 + d) for d in (0, 1, 2)]
    rows += [row(man, 32, 4000 + d, 900 + d) for d in (0, 1, 2)]
    ds = dataset_from_rows(man, rows)
    enc = encode(ds, include_target=True)
    eps, result = sweep_dbscan(enc, target_size=2)
    assert result.representatives.shape[0] == 2
    assert result.n_noise == 0


def test_sweep_validation():
    ds = noisy_dataset(n=20)
    enc = encode(deduplicate(ds), include_target=True)
    with pytest.raises(ParameterError):
        sweep_dbscan(enc, target_size=0)
    with pytest.raises(ParameterError):
        sweep_dbscan(enc, target_size=enc.rows.shape[0] + 1)


def test_dbscan_target_size_routes_through_sweep():
    ds = noisy_dataset(n=50, seed=11)
    enc = encode(deduplicate(ds), include_target=True)
    eps, result = sweep_dbscan(enc, target_size=12)
    outcome = apply_reduction(ds, ReductionRequest(method=DBSCAN, target_size=12))
    assert outcome.eps_used == pytest.approx(eps)
    assert len(outcome.reduced) == result.representatives.shape[0]


def test_dbscan_retained_fraction_maps_to_target():
    ds = noisy_dataset(n=50, seed=13)
    dedup_n = len(deduplicate(ds))
    outcome = apply_reduction(ds, ReductionRequest(method=DBSCAN,
                                                   retained_fraction=0.25))
    expected = apply_reduction(ds, ReductionRequest(
        method=DBSCAN, target_size=math.ceil(0.25 * dedup_n)))
    assert len(outcome.reduced) == len(expected.reduced)
    assert outcome.eps_used == pytest.approx(expected.eps_used)


# --- end-to-end reduce() with quality report ---

def test_reduce_reports_sizes_and_close_estimates():
    # dense design: 12 distinct configurations, ~17 rows each, so a quarter
    # of the rows still covers every configuration and estimates stay close
    spec = SyntheticSpec(
        job_type="dense", n=200, machine_counts=(2, 4, 8, 16),
        datasizes_gb=(100.0, 200.0, 400.0), node_types=("a",),
        node_factors=(1.0,), params=(), param_weights=(),
        theta=(50.0, 900.0, 20.0, 0.8), noise_sigma=0.05)
    ds = generate_synthetic(spec, seed=17)
    reduced, report = reduce(ds, ReductionRequest(method=KMEANS,
                                                  retained_fraction=0.25, seed=1))
    assert report.original_size == 200
    assert report.dedup_size == len(deduplicate(ds))
    assert report.reduced_size == len(reduced) == math.ceil(0.25 * report.dedup_size)
    assert report.method == KMEANS
    assert report.est_reduced_mape <= report.est_full_mape + 2.0
    assert reduced.manifest == ds.manifest


def test_reduced_records_satisfy_schema_invariants():
    ds = noisy_dataset(n=120, seed=19)
    man = ds.manifest
    valid_nodes = {"a", "b"}
    for method, kwargs in ((KMEANS, dict(retained_fraction=0.3)),
                           (KMEDOIDS, dict(retained_fraction=0.3)),
                           (DBSCAN, dict(target_size=30))):
        outcome = apply_reduction(ds, ReductionRequest(method=method, **kwargs))
        for rec in outcome.reduced.records:
            m = rec.values[man.scaleout_column]
            assert m >= 1 and float(m) == float(int(m))
            assert rec.values[man.datasize_column] >= 0
            assert rec.runtime_s > 0
            assert rec.values["node_type"] in valid_nodes


def test_report_text_and_csv_round_data():
    ds = noisy_dataset(n=60, seed=23)
    _, report = reduce(ds, ReductionRequest(method=DBSCAN, target_size=15, seed=4))
    text = report_to_text(report)
    assert "method: dbscan" in text
    assert f"reduced_size: {report.reduced_size}" in text
    assert "eps:" in text
    assert "min_pts: 2" in text
    csv_text = report_to_csv(report)
    lines = csv_text.strip().splitlines()
    assert len(lines) == 2
    assert lines[0] == REPORT_CSV_HEADER
    header = lines[0].split(",")
    values = lines[1].split(",")
    assert values[header.index("original_size")] == "60"
    assert values[header.index("method")] == "dbscan"
    assert "target_size=15" in values[header.index("params")]


# --- contribution validation ---

def small_batch(ds, count, seed=0):
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(ds.records), size=count, replace=False)
    return Dataset(manifest=ds.manifest,
                   records=tuple(ds.records[i] for i in sorted(picks)))


def test_validation_accepts_same_distribution_batch():
    current = noisy_dataset(n=150, seed=29)
    batch = small_batch(noisy_dataset(n=150, seed=31), 20)
    decision = validate_contribution(current, batch, seed=0)
    assert decision.verdict == ACCEPTED
    assert decision.flagged_rows == 0
    assert decision.batch_rows == 20
    assert decision.threshold == max(0.5, 0.05 * decision.mape_before)


def test_validation_defers_wildly_off_batch():
    current = noisy_dataset(n=150, seed=29)
    base = small_batch(noisy_dataset(n=150, seed=37), 20)
    # scale runtimes far outside the plausible band
    records = tuple(
        type(r)(values=dict(r.values), runtime_s=r.runtime_s * 100.0)
        for r in base.records)
    batch = Dataset(manifest=base.manifest, records=records)
    decision = validate_contribution(current, batch, seed=0)
    assert decision.verdict == DEFERRED
    assert decision.flagged_rows == 20


def test_validation_flags_only_implausible_rows():
    current = noisy_dataset(n=150, seed=29)
    base = small_batch(noisy_dataset(n=150, seed=41), 10)
    records = list(base.records)
    bad = records[3]
    records[3] = type(bad)(values=dict(bad.values), runtime_s=bad.runtime_s * 500.0)
    decision = validate_contribution(current, Dataset(manifest=base.manifest,
                                                      records=tuple(records)),
                                     seed=0)
    assert decision.flagged_rows == 1
    assert decision.batch_rows == 10


def test_validation_manifest_mismatch_and_empty_batch():
    current = noisy_dataset(n=50, seed=43)
    other = ernest_dataset()
    with pytest.raises(SchemaError):
        validate_contribution(current, other)
    with pytest.raises(ParameterError):
        validate_contribution(current, Dataset(manifest=current.manifest,
                                               records=()))


def test_validation_deterministic_and_printable():
    current = noisy_dataset(n=100, seed=47)
    batch = small_batch(noisy_dataset(n=100, seed=53), 15)
    a = validate_contribution(current, batch, seed=9)
    b = validate_contribution(current, batch, seed=9)
    assert a.verdict == b.verdict
    assert a.mape_before == b.mape_before
    assert a.mape_after == b.mape_after
    text = decision_to_text(a)
    assert f"verdict: {a.verdict}" in text
    assert "mape_before:" in text


# --- reduction quality: keeping more rows never costs much accuracy ---

def test_gentler_reduction_tracks_full_data_better():
    datasets = tuple((f"job{i}", noisy_dataset(n=200, seed=100 + i))
                     for i in range(2))
    config = ExperimentConfig(datasets=datasets, methods=(KMEANS,),
                              levels=(0.75, 0.1), repetitions=20,
                              models=(C3O,), base_seed=0)
    report = run_experiment(config)
    by_level = {}
    for row_ in report.rows:
        by_level.setdefault(row_.level, []).append(row_.mean_mape)
    gentle = float(np.mean(by_level[0.75]))
    harsh = float(np.mean(by_level[0.1]))
    assert gentle <= harsh + 2.0, (gentle, harsh)
