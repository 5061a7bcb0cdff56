"""Runtime prediction models and the cross-validation selector.

Four models share a common fit/predict surface: a parametric scale-out model
fitted with non-negative least squares (ernest), gradient-boosted regression
trees over the encoded features (gbm), and two models that transfer a pooled
normalized scale-out curve across execution contexts, scaled by the nearest
context's mean runtime (bom) or by a boosted factor model (ogb). The selector
cross-validates all four and keeps the one with the lowest mean MAPE.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    Dataset,
    DatasetManifest,
    EncodingLayout,
    JobRunRecord,
    Scaling,
    build_layout,
    fit_scaling,
    raw_matrix,
    standardize,
)
from .errors import ModelUnavailableError, ParameterError, PerfReduceError

ERNEST = "ernest"
GBM = "gbm"
BOM = "bom"
OGB = "ogb"
# also the tie-break priority, best first
MODEL_NAMES = (ERNEST, BOM, OGB, GBM)

C3O = "c3o"


# ---------------------------------------------------------------------------
# Non-negative least squares (active-set method)
# ---------------------------------------------------------------------------

def nnls_solve(A, b) -> np.ndarray:
    """Minimize ||Ax - b||_2 subject to x >= 0 (Lawson-Hanson active set).

    At return, every zero coordinate has a non-positive dual w = A'(b - Ax),
    so no coordinate can be raised to reduce the residual.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ParameterError("A must be a non-empty n x p matrix")
    if b.shape[0] != A.shape[0]:
        raise ParameterError("b length must match the rows of A")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ParameterError("non-finite values in NNLS input")

    p = A.shape[1]
    x = np.zeros(p)
    passive = np.zeros(p, dtype=bool)
    w = A.T @ b
    tol = 1e-10 * max(1.0, float(np.abs(w).max()))

    for _ in range(10 * p + 10):
        free = ~passive
        if not free.any() or float(w[free].max(initial=-np.inf)) <= tol:
            break
        cand = np.where(free, w, -np.inf)
        passive[int(np.argmax(cand))] = True
        while True:
            cols = np.nonzero(passive)[0]
            z = np.zeros(p)
            z[cols] = np.linalg.lstsq(A[:, cols], b, rcond=None)[0]
            if np.all(z[cols] > 0.0):
                x = z
                break
            blocking = cols[z[cols] <= 0.0]
            ratios = x[blocking] / (x[blocking] - z[blocking])
            alpha = float(ratios.min())
            x = x + alpha * (z - x)
            drop = passive & (x <= 1e-13)
            x[drop] = 0.0
            passive &= ~drop
        w = A.T @ (b - A @ x)
    return x


# ---------------------------------------------------------------------------
# Ernest: theta . [1, s/m, log2(m), m]
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ErnestModel:
    theta: np.ndarray  # 4 non-negative coefficients
    scaleout_column: str
    datasize_column: str


def _ernest_features(machines: np.ndarray, datasizes: np.ndarray) -> np.ndarray:
    m = np.asarray(machines, dtype=float)
    s = np.asarray(datasizes, dtype=float)
    return np.column_stack([np.ones_like(m), s / m, np.log2(m), m])


def fit_ernest(train: Dataset) -> ErnestModel:
    if len(train) == 0:
        raise ParameterError("empty training dataset")
    man = train.manifest
    m = np.array([float(r.values[man.scaleout_column]) for r in train.records])
    s = np.array([float(r.values[man.datasize_column]) for r in train.records])
    y = np.array([r.runtime_s for r in train.records])
    theta = nnls_solve(_ernest_features(m, s), y)
    return ErnestModel(theta=theta, scaleout_column=man.scaleout_column,
                       datasize_column=man.datasize_column)


def predict_ernest(model: ErnestModel, machines: float, datasize: float) -> float:
    if machines < 1:
        raise ParameterError(f"machines={machines} must be >= 1")
    f = _ernest_features(np.array([machines]), np.array([datasize]))[0]
    return max(0.0, float(f @ model.theta))


def _predict_ernest_records(model: ErnestModel, records) -> np.ndarray:
    m = np.array([float(r.values[model.scaleout_column]) for r in records])
    s = np.array([float(r.values[model.datasize_column]) for r in records])
    return np.maximum(0.0, _ernest_features(m, s) @ model.theta)


# ---------------------------------------------------------------------------
# Gradient-boosted regression trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeNode:
    feature: int            # -1 for leaves
    threshold: float
    left: "TreeNode | None"
    right: "TreeNode | None"
    value: float            # leaf prediction (mean residual)

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True, eq=False)
class BoostedTrees:
    base: float
    trees: tuple[TreeNode, ...]
    learning_rate: float


def _leaf(rows: np.ndarray, value: float, updates: list) -> TreeNode:
    updates.append((rows, value))
    return TreeNode(-1, 0.0, None, None, float(value))


def _build_node(X: np.ndarray, resid: np.ndarray, sub_order: np.ndarray,
                depth: int, max_depth: int, updates: list) -> TreeNode:
    # sub_order: rows of this node, sorted per column (m x p of global row ids)
    rows = sub_order[:, 0]
    m = rows.shape[0]
    node_value = float(resid[rows].mean())
    if depth >= max_depth or m < 2:
        return _leaf(rows, node_value, updates)

    p = X.shape[1]
    vals = X[sub_order, np.arange(p)[None, :]]
    ys = resid[sub_order]
    cum = np.cumsum(ys, axis=0)
    cum2 = np.cumsum(ys * ys, axis=0)
    tot, tot2 = cum[-1], cum2[-1]
    nl = np.arange(1, m, dtype=float)[:, None]
    suml, sum2l = cum[:-1], cum2[:-1]
    # child SSE for a split after sorted position i, per column
    sse = (sum2l - suml * suml / nl) + ((tot2 - sum2l) - (tot - suml) ** 2 / (m - nl))
    sse = np.where(vals[1:] > vals[:-1], sse, np.inf)

    col_best = sse.min(axis=0)
    j = int(np.argmin(col_best))  # ties resolve to the lowest column index
    parent_sse = float(tot2[j] - tot[j] * tot[j] / m)
    if not math.isfinite(col_best[j]) or parent_sse - col_best[j] <= 1e-12 * (1.0 + parent_sse):
        return _leaf(rows, node_value, updates)
    pos = int(np.argmin(sse[:, j]))  # ties resolve to the lowest threshold
    threshold = float((vals[pos, j] + vals[pos + 1, j]) / 2.0)
    if not (vals[pos, j] <= threshold < vals[pos + 1, j]):
        threshold = float(vals[pos, j])  # adjacent floats: midpoint would round up

    go_left = X[:, j] <= threshold
    mask = go_left[sub_order]
    n_left = int(mask[:, 0].sum())
    left_order = sub_order.T[mask.T].reshape(p, n_left).T
    right_order = sub_order.T[~mask.T].reshape(p, m - n_left).T
    return TreeNode(
        feature=j,
        threshold=threshold,
        left=_build_node(X, resid, left_order, depth + 1, max_depth, updates),
        right=_build_node(X, resid, right_order, depth + 1, max_depth, updates),
        value=node_value,
    )


def _tree_predict(tree: TreeNode, X: np.ndarray, out: np.ndarray, idx: np.ndarray) -> None:
    if tree.is_leaf:
        out[idx] = tree.value
        return
    go_left = X[idx, tree.feature] <= tree.threshold
    _tree_predict(tree.left, X, out, idx[go_left])
    _tree_predict(tree.right, X, out, idx[~go_left])


def fit_boosted(X: np.ndarray, y: np.ndarray, n_trees: int = 100,
                learning_rate: float = 0.1, max_depth: int = 3) -> BoostedTrees:
    """Least-squares boosting from the target mean; training MSE never rises."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    order = np.argsort(X, axis=0, kind="stable")
    base = float(y.mean())
    pred = np.full(n, base)
    prev_mse = float(((y - pred) ** 2).mean())
    trees = []
    for _ in range(n_trees):
        updates: list[tuple[np.ndarray, float]] = []
        tree = _build_node(X, y - pred, order, 0, max_depth, updates)
        for rows, value in updates:
            pred[rows] += learning_rate * value
        mse = float(((y - pred) ** 2).mean())
        if mse > prev_mse + 1e-9 * (1.0 + prev_mse):
            raise AssertionError("boosting stage increased training MSE")
        prev_mse = mse
        trees.append(tree)
    return BoostedTrees(base=base, trees=tuple(trees), learning_rate=learning_rate)


def predict_boosted(booster: BoostedTrees, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.full(X.shape[0], booster.base)
    stage = np.empty(X.shape[0])
    idx = np.arange(X.shape[0])
    for tree in booster.trees:
        _tree_predict(tree, X, stage, idx)
        out += booster.learning_rate * stage
    return out


@dataclass(frozen=True, eq=False)
class GbmModel:
    booster: BoostedTrees
    layout: EncodingLayout
    scaling: Scaling

    @property
    def initial_prediction(self) -> float:
        return self.booster.base

    @property
    def trees(self) -> tuple[TreeNode, ...]:
        return self.booster.trees

    @property
    def learning_rate(self) -> float:
        return self.booster.learning_rate

    @property
    def n_trees(self) -> int:
        return len(self.booster.trees)


def fit_gbm(train: Dataset, n_trees: int = 100, learning_rate: float = 0.1,
            max_depth: int = 3) -> GbmModel:
    if len(train) == 0:
        raise ParameterError("empty training dataset")
    layout = build_layout(train, include_target=False)
    raw = raw_matrix(train.records, layout)
    scaling = fit_scaling(raw)
    X = standardize(raw, scaling)
    y = np.array([r.runtime_s for r in train.records])
    booster = fit_boosted(X, y, n_trees=n_trees, learning_rate=learning_rate,
                          max_depth=max_depth)
    return GbmModel(booster=booster, layout=layout, scaling=scaling)


def _encode_records(records, layout: EncodingLayout, scaling: Scaling) -> np.ndarray:
    return standardize(raw_matrix(records, layout), scaling)


def _predict_gbm_records(model: GbmModel, records) -> np.ndarray:
    X = _encode_records(records, model.layout, model.scaling)
    return np.maximum(0.0, predict_boosted(model.booster, X))


def predict_gbm(model: GbmModel, record: JobRunRecord) -> float:
    return float(_predict_gbm_records(model, (record,))[0])


# ---------------------------------------------------------------------------
# Shared scale-out curve for BOM and OGB
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _CurveFit:
    context_layout: EncodingLayout
    context_scaling: Scaling
    context_rows: np.ndarray     # n x c standardized context features
    runtimes: np.ndarray         # n
    curve_machines: np.ndarray   # distinct machine counts, ascending
    curve_values: np.ndarray     # mean normalized runtime per machine count
    g_at_record: np.ndarray      # curve evaluated at each record's machines
    group_labels: np.ndarray     # n, context group id in first-appearance order
    n_groups: int


def _context_layout(train: Dataset) -> EncodingLayout:
    full = build_layout(train, include_target=False)
    cols = tuple(c for c in full.columns if c.source != train.manifest.scaleout_column)
    return EncodingLayout(columns=cols, include_target=False)


def _fit_curve(train: Dataset) -> _CurveFit:
    man = train.manifest
    records = train.records
    machines = np.array([float(r.values[man.scaleout_column]) for r in records])
    distinct_m = np.unique(machines)
    if distinct_m.shape[0] < 2:
        raise ModelUnavailableError("scale-out curve needs at least 2 distinct machine counts")

    layout = _context_layout(train)
    raw = raw_matrix(records, layout)
    scaling = fit_scaling(raw)
    ctx = standardize(raw, scaling)

    group_of: dict[bytes, int] = {}
    labels = np.empty(len(records), dtype=int)
    for i in range(len(records)):
        labels[i] = group_of.setdefault(ctx[i].tobytes(), len(group_of))
    n_groups = len(group_of)

    runtimes = np.array([r.runtime_s for r in records])
    group_mean = np.zeros(n_groups)
    for g in range(n_groups):
        group_mean[g] = runtimes[labels == g].mean()
    normalized = runtimes / group_mean[labels]

    curve = np.array([normalized[machines == m].mean() for m in distinct_m])
    if not np.all(curve > 0.0):
        raise AssertionError("scale-out curve must be strictly positive at observed counts")
    g_at_record = np.interp(machines, distinct_m, curve)
    return _CurveFit(
        context_layout=layout,
        context_scaling=scaling,
        context_rows=ctx,
        runtimes=runtimes,
        curve_machines=distinct_m,
        curve_values=curve,
        g_at_record=g_at_record,
        group_labels=labels,
        n_groups=n_groups,
    )


@dataclass(frozen=True, eq=False)
class BomModel:
    curve_machines: np.ndarray
    curve_values: np.ndarray
    context_matrix: np.ndarray      # one standardized context vector per group
    group_mean_runtime: np.ndarray  # mean observed runtime per group
    group_mean_g: np.ndarray        # mean curve value over each group's records
    context_layout: EncodingLayout
    context_scaling: Scaling
    scaleout_column: str


def fit_bom(train: Dataset) -> BomModel:
    if len(train) == 0:
        raise ParameterError("empty training dataset")
    fitres = _fit_curve(train)
    n_groups = fitres.n_groups
    context_matrix = np.zeros((n_groups, fitres.context_rows.shape[1]))
    group_mean_runtime = np.zeros(n_groups)
    group_mean_g = np.zeros(n_groups)
    for g in range(n_groups):
        members = fitres.group_labels == g
        context_matrix[g] = fitres.context_rows[members][0]
        group_mean_runtime[g] = fitres.runtimes[members].mean()
        group_mean_g[g] = fitres.g_at_record[members].mean()
    return BomModel(
        curve_machines=fitres.curve_machines,
        curve_values=fitres.curve_values,
        context_matrix=context_matrix,
        group_mean_runtime=group_mean_runtime,
        group_mean_g=group_mean_g,
        context_layout=fitres.context_layout,
        context_scaling=fitres.context_scaling,
        scaleout_column=train.manifest.scaleout_column,
    )


def _predict_bom_records(model: BomModel, records) -> np.ndarray:
    ctx = _encode_records(records, model.context_layout, model.context_scaling)
    # squared distances to every training context group
    d2 = ((ctx[:, None, :] - model.context_matrix[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)  # ties resolve to the first-seen group
    machines = np.array([float(r.values[model.scaleout_column]) for r in records])
    g = np.interp(machines, model.curve_machines, model.curve_values)
    return model.group_mean_runtime[nearest] * g / model.group_mean_g[nearest]


def predict_bom(model: BomModel, record: JobRunRecord) -> float:
    return float(_predict_bom_records(model, (record,))[0])


@dataclass(frozen=True, eq=False)
class OgbModel:
    curve_machines: np.ndarray
    curve_values: np.ndarray
    factor_booster: BoostedTrees    # context features -> runtime / g(machines)
    context_layout: EncodingLayout
    context_scaling: Scaling
    scaleout_column: str


def fit_ogb(train: Dataset, n_trees: int = 100, learning_rate: float = 0.1,
            max_depth: int = 3) -> OgbModel:
    if len(train) == 0:
        raise ParameterError("empty training dataset")
    fitres = _fit_curve(train)
    factors = fitres.runtimes / fitres.g_at_record
    booster = fit_boosted(fitres.context_rows, factors, n_trees=n_trees,
                          learning_rate=learning_rate, max_depth=max_depth)
    return OgbModel(
        curve_machines=fitres.curve_machines,
        curve_values=fitres.curve_values,
        factor_booster=booster,
        context_layout=fitres.context_layout,
        context_scaling=fitres.context_scaling,
        scaleout_column=train.manifest.scaleout_column,
    )


def _predict_ogb_records(model: OgbModel, records) -> np.ndarray:
    ctx = _encode_records(records, model.context_layout, model.context_scaling)
    factors = predict_boosted(model.factor_booster, ctx)
    machines = np.array([float(r.values[model.scaleout_column]) for r in records])
    g = np.interp(machines, model.curve_machines, model.curve_values)
    return np.maximum(0.0, factors * g)


def predict_ogb(model: OgbModel, record: JobRunRecord) -> float:
    return float(_predict_ogb_records(model, (record,))[0])


# ---------------------------------------------------------------------------
# MAPE and the cross-validation selector
# ---------------------------------------------------------------------------

def mape(predictions, actuals) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    a = np.asarray(actuals, dtype=float).ravel()
    if p.shape[0] != a.shape[0] or p.shape[0] == 0:
        raise ParameterError("predictions and actuals must have equal length >= 1")
    if np.any(a <= 0.0):
        raise ParameterError("actuals must be strictly positive")
    return float(100.0 * np.mean(np.abs(p - a) / a))


_FITTERS = {ERNEST: fit_ernest, GBM: fit_gbm, BOM: fit_bom, OGB: fit_ogb}


def _predict_records(name: str, model, records) -> np.ndarray:
    if name == ERNEST:
        return _predict_ernest_records(model, records)
    if name == GBM:
        return _predict_gbm_records(model, records)
    if name == BOM:
        return _predict_bom_records(model, records)
    if name == OGB:
        return _predict_ogb_records(model, records)
    raise ParameterError(f"unknown model: {name}")


@dataclass(frozen=True, eq=False)
class TrainedPredictor:
    manifest: DatasetManifest
    models: dict          # name -> fitted model, or None when unavailable
    chosen: str
    cv_scores: dict       # name -> mean CV MAPE (inf when infeasible)
    fit_seconds: dict = field(default_factory=dict)  # full-train refit wall time
    folds: int = 5
    seed: int = 0

    def predict(self, record: JobRunRecord) -> float:
        return float(self.predict_records((record,))[0])

    def predict_records(self, records) -> np.ndarray:
        return np.asarray(_predict_records(self.chosen, self.models[self.chosen],
                                           records), dtype=float)


def c3o_select(train: Dataset, folds: int = 5, seed: int = 0) -> TrainedPredictor:
    """Pick the model with the lowest seeded k-fold CV MAPE, refit on all rows.

    A model that raises on a fold scores +inf for the whole CV. Datasets with
    fewer than 5 records fall back to leave-one-out. Score ties go by the
    fixed priority ernest > bom > ogb > gbm.
    """
    n = len(train)
    if n < 2:
        raise ParameterError("cross-validation needs at least 2 records")
    if folds < 2:
        raise ParameterError(f"folds={folds} must be >= 2")
    eff_folds = n if n < 5 else folds
    if eff_folds > n:
        raise ParameterError(f"folds={folds} exceeds dataset size {n}")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    parts = np.array_split(perm, eff_folds)
    records = train.records

    fold_scores: dict[str, list[float]] = {name: [] for name in MODEL_NAMES}
    for part in parts:
        held = set(int(i) for i in part)
        fold_train = Dataset(manifest=train.manifest,
                             records=tuple(records[i] for i in range(n) if i not in held))
        fold_test = tuple(records[int(i)] for i in part)
        actuals = np.array([r.runtime_s for r in fold_test])
        for name in MODEL_NAMES:
            try:
                model = _FITTERS[name](fold_train)
                preds = _predict_records(name, model, fold_test)
                fold_scores[name].append(mape(preds, actuals))
            except PerfReduceError:
                fold_scores[name].append(math.inf)

    cv_scores = {name: float(np.mean(fold_scores[name])) for name in MODEL_NAMES}

    fitted: dict[str, object | None] = {}
    fit_seconds: dict[str, float] = {}
    for name in MODEL_NAMES:
        start = time.perf_counter()
        try:
            fitted[name] = _FITTERS[name](train)
            fit_seconds[name] = time.perf_counter() - start
        except PerfReduceError:
            fitted[name] = None
            cv_scores[name] = math.inf

    chosen = None
    for name in MODEL_NAMES:  # priority order breaks ties
        if fitted[name] is None:
            continue
        if chosen is None or cv_scores[name] < cv_scores[chosen]:
            chosen = name
    if chosen is None:
        raise ModelUnavailableError("no model could be fitted on this dataset")
    return TrainedPredictor(manifest=train.manifest, models=fitted, chosen=chosen,
                            cv_scores=cv_scores, fit_seconds=fit_seconds,
                            folds=eff_folds, seed=seed)
