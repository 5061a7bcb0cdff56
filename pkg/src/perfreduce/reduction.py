"""Dataset reduction pipeline and the contribution validation gate.

reduce() runs deduplicate -> encode (runtime included) -> cluster ->
decode representatives, and estimates the accuracy cost of the reduction with
a repeated holdout so callers can pick a size/error trade-off point.
validate_contribution() gates incoming batches on plausibility bounds and on
whether the selector's cross-validated error degrades materially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clustering import (
    ClusteringResult,
    DBSCAN,
    KMEANS,
    KMEDOIDS,
    METHODS,
    dbscan,
    kmeans,
    kmedoids,
    representatives_to_dataset,
)
from .dataset import (
    Dataset,
    EncodedMatrix,
    NUMERIC,
    deduplicate,
    encode,
    format_number,
)
from .errors import ParameterError, SchemaError
from .models import c3o_select, mape

HOLDOUT_REPETITIONS = 10
HOLDOUT_TEST_FRACTION = 0.2

ACCEPTED = "accepted"
DEFERRED = "deferred"


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class ReductionRequest:
    method: str
    retained_fraction: float | None = None
    eps: float | None = None
    target_size: int | None = None
    min_pts: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method: {self.method!r}")
        if self.method in (KMEANS, KMEDOIDS):
            if self.retained_fraction is None:
                raise ParameterError(f"{self.method} needs retained_fraction")
            if self.eps is not None or self.target_size is not None:
                raise ParameterError(f"{self.method} takes only retained_fraction")
        else:
            given = [v is not None for v in
                     (self.eps, self.target_size, self.retained_fraction)]
            if sum(given) != 1:
                raise ParameterError(
                    "dbscan needs exactly one of eps, target_size, retained_fraction")
            if self.eps is not None and self.eps <= 0:
                raise ParameterError(f"eps={self.eps} must be > 0")
            if self.target_size is not None and self.target_size < 1:
                raise ParameterError(f"target_size={self.target_size} must be >= 1")
        if self.retained_fraction is not None and not (0.0 < self.retained_fraction <= 1.0):
            raise ParameterError(
                f"retained_fraction={self.retained_fraction} must be in (0, 1]")
        if self.min_pts < 1:
            raise ParameterError(f"min_pts={self.min_pts} must be >= 1")


@dataclass(frozen=True)
class ReductionReport:
    original_size: int
    dedup_size: int
    reduced_size: int
    method: str
    params: tuple[tuple[str, str], ...]  # ordered (key, rendered value) pairs
    est_full_mape: float
    est_reduced_mape: float
    noise_retained: int = 0

    def __post_init__(self):
        if not (self.reduced_size <= self.dedup_size <= self.original_size):
            raise ParameterError("sizes must satisfy reduced <= dedup <= original")
        if self.est_full_mape < 0 or self.est_reduced_mape < 0:
            raise ParameterError("MAPE estimates must be >= 0")


@dataclass(frozen=True)
class ContributionDecision:
    verdict: str  # accepted | deferred
    mape_before: float
    mape_after: float
    threshold: float
    batch_rows: int
    flagged_rows: int


@dataclass(frozen=True, eq=False)
class ReductionOutcome:
    dedup: Dataset
    reduced: Dataset
    clustering: ClusteringResult
    eps_used: float | None  # resolved eps when a dbscan sweep ran


def sweep_dbscan(encoding: EncodedMatrix, target_size: int,
                 eps_grid=None) -> tuple[float, ClusteringResult]:
    """Pick the grid eps whose representative count lands closest to target_size.

    Default grid: 32 geometric points spanning [0.01 D, D] where D is the max
    pairwise distance in the standardized space. Distance ties prefer the
    larger eps (more merging, more reduction).
    """
    rows = encoding.rows
    n = rows.shape[0]
    if not (1 <= target_size <= n):
        raise ParameterError(f"target_size={target_size} must be in [1, {n}]")
    if eps_grid is None:
        sq = (rows * rows).sum(axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (rows @ rows.T), 0.0)
        diameter = float(np.sqrt(d2.max()))
        if diameter <= 0.0:
            eps_grid = [1e-9]  # all rows coincide; any radius merges everything
        else:
            eps_grid = list(np.geomspace(0.01 * diameter, diameter, 32))
    else:
        eps_grid = [float(e) for e in eps_grid]
    if len(eps_grid) == 0:
        raise ParameterError("eps grid is empty")

    best: tuple[int, float, ClusteringResult] | None = None
    for eps in eps_grid:
        result = dbscan(rows, eps, min_pts=2)
        gap = abs(result.representatives.shape[0] - target_size)
        if best is None or gap <= best[0]:  # <= so equal gaps move to larger eps
            best = (gap, eps, result)
    return best[1], best[2]


def apply_reduction(dataset: Dataset, request: ReductionRequest) -> ReductionOutcome:
    """Run the reduction pipeline without the holdout error estimation."""
    if len(dataset) == 0:
        raise ParameterError("cannot reduce an empty dataset")
    dedup = deduplicate(dataset)
    enc = encode(dedup, include_target=True)
    nd = len(dedup)
    eps_used: float | None = None

    if request.method in (KMEANS, KMEDOIDS):
        k = math.ceil(request.retained_fraction * nd)
        if k < 1 or k > nd:
            raise ParameterError(f"k resolved to {k}, outside [1, {nd}]")
        cluster = kmeans if request.method == KMEANS else kmedoids
        result = cluster(enc.rows, k, request.seed)
    elif request.eps is not None:
        result = dbscan(enc.rows, request.eps, min_pts=request.min_pts)
    else:
        target = (request.target_size if request.target_size is not None
                  else math.ceil(request.retained_fraction * nd))
        if not (1 <= target <= nd):
            raise ParameterError(f"target_size={target} outside [1, {nd}]")
        eps_used, result = sweep_dbscan(enc, target)

    reduced = representatives_to_dataset(result, enc, dedup.manifest)
    # representatives that coincide bitwise with an input row (medoids, noise
    # singletons, single-member means) become that original record again
    originals = {enc.rows[i].tobytes(): dedup.records[i] for i in range(nd)}
    records = tuple(
        originals.get(result.representatives[i].tobytes(), reduced.records[i])
        for i in range(len(reduced.records))
    )
    reduced = Dataset(manifest=dedup.manifest, records=records)
    return ReductionOutcome(dedup=dedup, reduced=reduced, clustering=result,
                            eps_used=eps_used)


def _scaled_request(request: ReductionRequest, full_dedup: int, split_size: int) -> ReductionRequest:
    # absolute dbscan targets rescale to the holdout train's share of rows
    if request.method == DBSCAN and request.target_size is not None:
        target = max(1, min(split_size,
                            math.ceil(request.target_size * split_size / full_dedup)))
        return ReductionRequest(method=DBSCAN, target_size=target,
                                min_pts=request.min_pts, seed=request.seed)
    return request


def _holdout_mape(dedup: Dataset, request: ReductionRequest, reduce_train: bool,
                  repetitions: int = HOLDOUT_REPETITIONS) -> float:
    n = len(dedup)
    n_test = max(1, int(round(HOLDOUT_TEST_FRACTION * n)))
    n_train = n - n_test
    if n_train < 2:
        return 0.0  # too small to estimate; documented degenerate value
    records = dedup.records
    scores = []
    for rep in range(repetitions):
        rng = np.random.default_rng([request.seed, rep])
        perm = rng.permutation(n)
        test = tuple(records[int(i)] for i in perm[:n_test])
        train = Dataset(manifest=dedup.manifest,
                        records=tuple(records[int(i)] for i in perm[n_test:]))
        if reduce_train:
            split_req = _scaled_request(request, n, len(train))
            train = apply_reduction(train, split_req).reduced
        predictor = c3o_select(train, seed=derive_seed(request.seed, rep))
        actuals = np.array([r.runtime_s for r in test])
        scores.append(mape(predictor.predict_records(test), actuals))
    return float(np.mean(scores))


def reduce(dataset: Dataset, request: ReductionRequest) -> tuple[Dataset, ReductionReport]:
    outcome = apply_reduction(dataset, request)
    est_full = _holdout_mape(outcome.dedup, request, reduce_train=False)
    est_reduced = _holdout_mape(outcome.dedup, request, reduce_train=True)

    params: list[tuple[str, str]] = []
    if request.retained_fraction is not None:
        params.append(("retained_fraction", format_number(request.retained_fraction)))
    if request.method in (KMEANS, KMEDOIDS):
        params.append(("k", str(outcome.clustering.params["k"])))
    else:
        if request.target_size is not None:
            params.append(("target_size", str(request.target_size)))
        params.append(("eps", format_number(float(outcome.clustering.params["eps"]))))
        params.append(("min_pts", str(outcome.clustering.params["min_pts"])))
    params.append(("seed", str(request.seed)))

    report = ReductionReport(
        original_size=len(dataset),
        dedup_size=len(outcome.dedup),
        reduced_size=len(outcome.reduced),
        method=request.method,
        params=tuple(params),
        est_full_mape=est_full,
        est_reduced_mape=est_reduced,
        noise_retained=outcome.clustering.n_noise if request.method == DBSCAN else 0,
    )
    return outcome.reduced, report


# ---------------------------------------------------------------------------
# Contribution validation gate
# ---------------------------------------------------------------------------

def validate_contribution(current: Dataset, batch: Dataset, seed: int = 0) -> ContributionDecision:
    """Plausibility-check a batch, then accept it unless CV error degrades.

    Records outside [min/2, max*2] of any numeric column of the current data
    (runtime included) are flagged and excluded from the quality evaluation.
    A batch with every record flagged is deferred outright. Otherwise the
    batch is deferred iff the selector's CV MAPE on current+batch exceeds the
    current CV MAPE by more than max(0.5 pp, 5% relative).
    """
    if current.manifest != batch.manifest:
        raise SchemaError("current and batch datasets use different manifests")
    if len(batch) == 0:
        raise ParameterError("batch is empty")

    man = current.manifest
    numeric_cols = [c.name for c in man.feature_columns if c.kind == NUMERIC]
    bounds: dict[str, tuple[float, float]] = {}
    for name in numeric_cols:
        vals = np.array([float(r.values[name]) for r in current.records])
        bounds[name] = (float(vals.min()) / 2.0, float(vals.max()) * 2.0)
    runtimes = np.array([r.runtime_s for r in current.records])
    runtime_bounds = (float(runtimes.min()) / 2.0, float(runtimes.max()) * 2.0)

    survivors = []
    flagged = 0
    for rec in batch.records:
        ok = runtime_bounds[0] <= rec.runtime_s <= runtime_bounds[1]
        for name in numeric_cols:
            lo, hi = bounds[name]
            if not (lo <= float(rec.values[name]) <= hi):
                ok = False
        if ok:
            survivors.append(rec)
        else:
            flagged += 1

    before_pred = c3o_select(current, seed=seed)
    mape_before = before_pred.cv_scores[before_pred.chosen]
    union = Dataset(manifest=man, records=current.records + tuple(survivors))
    after_pred = c3o_select(union, seed=seed)
    mape_after = after_pred.cv_scores[after_pred.chosen]

    threshold = max(0.5, 0.05 * mape_before)
    deferred = (len(survivors) == 0) or (mape_after > mape_before + threshold)
    return ContributionDecision(
        verdict=DEFERRED if deferred else ACCEPTED,
        mape_before=mape_before,
        mape_after=mape_after,
        threshold=threshold,
        batch_rows=len(batch),
        flagged_rows=flagged,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

REPORT_CSV_HEADER = ("original_size,dedup_size,reduced_size,method,params,"
                     "est_full_mape,est_reduced_mape,noise_retained")


def report_to_text(report: ReductionReport) -> str:
    lines = [
        f"original_size: {report.original_size}",
        f"dedup_size: {report.dedup_size}",
        f"reduced_size: {report.reduced_size}",
        f"method: {report.method}",
    ]
    lines += [f"{key}: {value}" for key, value in report.params]
    lines += [
        f"est_full_mape: {format_number(report.est_full_mape)}",
        f"est_reduced_mape: {format_number(report.est_reduced_mape)}",
        f"noise_retained: {report.noise_retained}",
    ]
    return "\n".join(lines) + "\n"


def report_to_csv(report: ReductionReport) -> str:
    packed = ";".join(f"{k}={v}" for k, v in report.params)
    row = ",".join([
        str(report.original_size), str(report.dedup_size), str(report.reduced_size),
        report.method, packed,
        format_number(report.est_full_mape), format_number(report.est_reduced_mape),
        str(report.noise_retained),
    ])
    return REPORT_CSV_HEADER + "\n" + row + "\n"


def decision_to_text(decision: ContributionDecision) -> str:
    return "\n".join([
        f"verdict: {decision.verdict}",
        f"mape_before: {format_number(decision.mape_before)}",
        f"mape_after: {format_number(decision.mape_after)}",
        f"threshold: {format_number(decision.threshold)}",
        f"batch_rows: {decision.batch_rows}",
        f"flagged_rows: {decision.flagged_rows}",
    ]) + "\n"
