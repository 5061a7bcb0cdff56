"""Versioned JSON serialization for trained predictors.

The format is self-describing (every model block carries its kind) and
round-trips exactly: floats are emitted with shortest-repr precision, numpy
arrays as plain lists, and infinite CV scores as null. Timing metadata is
deliberately not persisted.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .dataset import (
    ColumnSpec,
    DatasetManifest,
    EncodedColumn,
    EncodingLayout,
    Scaling,
)
from .errors import SchemaError
from .models import (
    BomModel,
    BoostedTrees,
    ErnestModel,
    GbmModel,
    OgbModel,
    TrainedPredictor,
    TreeNode,
    BOM,
    ERNEST,
    GBM,
    MODEL_NAMES,
    OGB,
)

FORMAT_NAME = "perfreduce-model"
FORMAT_VERSION = 1


def _manifest_to_obj(man: DatasetManifest) -> dict:
    return {
        "job_type": man.job_type,
        "features": [[c.name, c.kind] for c in man.feature_columns],
        "scaleout_column": man.scaleout_column,
        "datasize_column": man.datasize_column,
        "target_column": man.target_column,
    }


def _manifest_from_obj(obj: dict) -> DatasetManifest:
    return DatasetManifest(
        job_type=obj["job_type"],
        feature_columns=tuple(ColumnSpec(name=n, kind=k) for n, k in obj["features"]),
        scaleout_column=obj["scaleout_column"],
        datasize_column=obj["datasize_column"],
        target_column=obj["target_column"],
    )


def _layout_to_obj(layout: EncodingLayout) -> dict:
    return {
        "include_target": layout.include_target,
        "columns": [
            {"name": c.name, "source": c.source, "category": c.category}
            for c in layout.columns
        ],
    }


def _layout_from_obj(obj: dict) -> EncodingLayout:
    cols = tuple(
        EncodedColumn(name=c["name"], source=c["source"], category=c["category"])
        for c in obj["columns"]
    )
    return EncodingLayout(columns=cols, include_target=obj["include_target"])


def _scaling_to_obj(s: Scaling) -> dict:
    return {"mean": list(s.mean), "std": list(s.std)}


def _scaling_from_obj(obj: dict) -> Scaling:
    return Scaling(mean=tuple(obj["mean"]), std=tuple(obj["std"]))


def _tree_to_obj(t: TreeNode) -> dict:
    if t.is_leaf:
        return {"value": t.value}
    return {
        "feature": t.feature,
        "threshold": t.threshold,
        "left": _tree_to_obj(t.left),
        "right": _tree_to_obj(t.right),
        "value": t.value,
    }


def _tree_from_obj(obj: dict) -> TreeNode:
    if "feature" not in obj:
        return TreeNode(-1, 0.0, None, None, float(obj["value"]))
    return TreeNode(
        feature=int(obj["feature"]),
        threshold=float(obj["threshold"]),
        left=_tree_from_obj(obj["left"]),
        right=_tree_from_obj(obj["right"]),
        value=float(obj["value"]),
    )


def _booster_to_obj(b: BoostedTrees) -> dict:
    return {
        "base": b.base,
        "learning_rate": b.learning_rate,
        "trees": [_tree_to_obj(t) for t in b.trees],
    }


def _booster_from_obj(obj: dict) -> BoostedTrees:
    return BoostedTrees(
        base=float(obj["base"]),
        trees=tuple(_tree_from_obj(t) for t in obj["trees"]),
        learning_rate=float(obj["learning_rate"]),
    )


def _model_to_obj(name: str, model) -> dict | None:
    if model is None:
        return None
    if name == ERNEST:
        return {
            "kind": ERNEST,
            "theta": list(model.theta),
            "scaleout_column": model.scaleout_column,
            "datasize_column": model.datasize_column,
        }
    if name == GBM:
        return {
            "kind": GBM,
            "booster": _booster_to_obj(model.booster),
            "layout": _layout_to_obj(model.layout),
            "scaling": _scaling_to_obj(model.scaling),
        }
    if name == BOM:
        return {
            "kind": BOM,
            "curve_machines": list(model.curve_machines),
            "curve_values": list(model.curve_values),
            "context_matrix": [list(row) for row in model.context_matrix],
            "group_mean_runtime": list(model.group_mean_runtime),
            "group_mean_g": list(model.group_mean_g),
            "context_layout": _layout_to_obj(model.context_layout),
            "context_scaling": _scaling_to_obj(model.context_scaling),
            "scaleout_column": model.scaleout_column,
        }
    if name == OGB:
        return {
            "kind": OGB,
            "curve_machines": list(model.curve_machines),
            "curve_values": list(model.curve_values),
            "factor_booster": _booster_to_obj(model.factor_booster),
            "context_layout": _layout_to_obj(model.context_layout),
            "context_scaling": _scaling_to_obj(model.context_scaling),
            "scaleout_column": model.scaleout_column,
        }
    raise SchemaError(f"unknown model kind: {name}")


def _model_from_obj(obj: dict | None):
    if obj is None:
        return None
    kind = obj.get("kind")
    if kind == ERNEST:
        return ErnestModel(
            theta=np.array(obj["theta"], dtype=float),
            scaleout_column=obj["scaleout_column"],
            datasize_column=obj["datasize_column"],
        )
    if kind == GBM:
        return GbmModel(
            booster=_booster_from_obj(obj["booster"]),
            layout=_layout_from_obj(obj["layout"]),
            scaling=_scaling_from_obj(obj["scaling"]),
        )
    if kind == BOM:
        return BomModel(
            curve_machines=np.array(obj["curve_machines"], dtype=float),
            curve_values=np.array(obj["curve_values"], dtype=float),
            context_matrix=np.array(obj["context_matrix"], dtype=float),
            group_mean_runtime=np.array(obj["group_mean_runtime"], dtype=float),
            group_mean_g=np.array(obj["group_mean_g"], dtype=float),
            context_layout=_layout_from_obj(obj["context_layout"]),
            context_scaling=_scaling_from_obj(obj["context_scaling"]),
            scaleout_column=obj["scaleout_column"],
        )
    if kind == OGB:
        return OgbModel(
            curve_machines=np.array(obj["curve_machines"], dtype=float),
            curve_values=np.array(obj["curve_values"], dtype=float),
            factor_booster=_booster_from_obj(obj["factor_booster"]),
            context_layout=_layout_from_obj(obj["context_layout"]),
            context_scaling=_scaling_from_obj(obj["context_scaling"]),
            scaleout_column=obj["scaleout_column"],
        )
    raise SchemaError(f"unknown model kind in file: {kind!r}")


def dump_predictor(pred: TrainedPredictor) -> str:
    obj = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "manifest": _manifest_to_obj(pred.manifest),
        "chosen": pred.chosen,
        "folds": pred.folds,
        "seed": pred.seed,
        "cv_scores": {
            name: (None if math.isinf(score) else score)
            for name, score in pred.cv_scores.items()
        },
        "models": {name: _model_to_obj(name, pred.models.get(name))
                   for name in MODEL_NAMES},
    }
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_predictor(text: str) -> TrainedPredictor:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("format") != FORMAT_NAME:
        raise SchemaError("not a perfreduce model file")
    if obj.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported model format version: {obj.get('version')!r}")
    models = {name: _model_from_obj(obj["models"].get(name)) for name in MODEL_NAMES}
    cv_scores = {
        name: (math.inf if score is None else float(score))
        for name, score in obj["cv_scores"].items()
    }
    return TrainedPredictor(
        manifest=_manifest_from_obj(obj["manifest"]),
        models=models,
        chosen=obj["chosen"],
        cv_scores=cv_scores,
        fit_seconds={},
        folds=int(obj["folds"]),
        seed=int(obj["seed"]),
    )
