"""Shared builders for the test suite."""

import numpy as np

from perfreduce.dataset import (
    ColumnSpec,
    Dataset,
    DatasetManifest,
    JobRunRecord,
    make_record,
)

NODE_A = "m5.xlarge"
NODE_B = "c5.xlarge"


def basic_manifest(job_type="sort", params=(), node_column=True):
    """Manifest with machines + datasize_gb (+ node_type) + extra numeric params."""
    features = [
        ColumnSpec("machines", "numeric"),
        ColumnSpec("datasize_gb", "numeric"),
    ]
    if node_column:
        features.append(ColumnSpec("node_type", "categorical"))
    features += [ColumnSpec(name, "numeric") for name in params]
    return DatasetManifest(
        job_type=job_type,
        feature_columns=tuple(features),
        scaleout_column="machines",
        datasize_column="datasize_gb",
        target_column="runtime_s",
    )


def row(manifest, machines, datasize, runtime, node=NODE_A, **params):
    values = {"machines": float(machines), "datasize_gb": float(datasize)}
    if manifest.column(node_column_name()) is not None:
        values["node_type"] = node
    values.update({k: float(v) for k, v in params.items()})
    return make_record(manifest, values, float(runtime))


def node_column_name():
    return "node_type"


def dataset_from_rows(manifest, rows):
    return Dataset(manifest=manifest, records=tuple(rows))


def ernest_runtime(theta, machines, datasize):
    t0, t1, t2, t3 = theta
    return t0 + t1 * datasize / machines + t2 * np.log2(machines) + t3 * machines


def ernest_dataset(theta=(100.0, 2000.0, 50.0, 1.0), machines=range(2, 17),
                   datasizes=(1000.0, 2000.0), noise_sigma=0.0, seed=0,
                   node_column=False, manifest=None):
    """Full grid over machines x datasizes with Ernest-form runtimes."""
    man = manifest if manifest is not None else basic_manifest(node_column=node_column)
    rng = np.random.default_rng(seed)
    records = []
    for m in machines:
        for s in datasizes:
            runtime = ernest_runtime(theta, float(m), float(s))
            if noise_sigma > 0:
                runtime *= float(np.exp(rng.normal(0.0, noise_sigma)))
            values = {"machines": float(m), "datasize_gb": float(s)}
            if man.column("node_type") is not None:
                values["node_type"] = NODE_A
            records.append(JobRunRecord(values=values, runtime_s=runtime))
    return Dataset(manifest=man, records=tuple(records))
