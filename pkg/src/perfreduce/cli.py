"""Command-line surface for reduction, evaluation, validation, and prediction.

Exit codes: 0 success (or contribution accepted), 2 validation or parameter
error, 3 contribution deferred. Output files are written to a temp file and
renamed into place so a failing run never leaves partial output behind.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import tempfile
from pathlib import Path

from .charts import line_chart
from .dataset import (
    format_number,
    load_dataset,
    make_record,
    parse_manifest,
    render_manifest,
    write_csv,
)
from .errors import ParameterError, PerfReduceError, SchemaError
from .evaluation import (
    generate_synthetic,
    parse_experiment_config,
    parse_spec,
    run_experiment,
    spec_to_obj,
)
from .model_io import dump_predictor, load_predictor
from .models import C3O, c3o_select
from .reduction import (
    ACCEPTED,
    ReductionRequest,
    decision_to_text,
    derive_seed,
    reduce,
    report_to_csv,
    report_to_text,
    validate_contribution,
)

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_DEFERRED = 3


def _write_text(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent or "."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _require(value, flag: str):
    if value is None:
        raise ParameterError(f"{flag} is required for this command")
    return value


def _load_manifest(args):
    path = _require(args.manifest, "--manifest")
    return parse_manifest(Path(path).read_text())


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def cmd_reduce(args) -> int:
    manifest = _load_manifest(args)
    dataset = load_dataset(manifest, Path(args.input).read_text())
    request = ReductionRequest(
        method=args.method,
        retained_fraction=args.fraction,
        eps=args.eps,
        target_size=args.target_size,
        min_pts=args.min_pts,
        seed=_seed(args),
    )
    reduced, report = reduce(dataset, request)
    output = _require(args.output, "--output")
    _write_text(output, write_csv(reduced))

    fmt = args.format or "text"
    if fmt == "svg":
        raise ParameterError("reduce reports support --format text or csv")
    text = report_to_csv(report) if fmt == "csv" else report_to_text(report)
    if args.report:
        _write_text(args.report, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _chart_series(report, value_of):
    series = {}
    for row in report.rows:
        if not row.available:
            continue
        if row.model != C3O and any(r.model == C3O for r in report.rows):
            continue  # chart the selector when present, else whatever ran
        series.setdefault(f"{row.job_type}/{row.method}", []).append(
            (row.level, value_of(row)))
    return sorted(series.items())


def cmd_evaluate(args) -> int:
    config_path = Path(args.config)
    config = parse_experiment_config(config_path.read_text(), base_dir=config_path.parent)
    if args.seed is not None:
        config = type(config)(
            datasets=config.datasets, methods=config.methods, levels=config.levels,
            repetitions=config.repetitions, test_fraction=config.test_fraction,
            models=config.models, base_seed=args.seed)
    report = run_experiment(config)
    output = Path(args.output or "evaluation.csv")
    _write_text(output, report.to_csv())
    written = [str(output)]
    if args.format == "svg":
        mape_svg = output.with_suffix(".mape.svg")
        _write_text(mape_svg, line_chart(
            "Prediction error vs retained fraction", "retained fraction",
            "mean MAPE (%)", _chart_series(report, lambda r: r.mean_mape)))
        time_svg = output.with_suffix(".time.svg")
        _write_text(time_svg, line_chart(
            "Training time vs retained fraction", "retained fraction",
            "mean fit time (ms)", _chart_series(report, lambda r: r.mean_train_time_ms)))
        written += [str(mape_svg), str(time_svg)]
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_validate(args) -> int:
    manifest = _load_manifest(args)
    current = load_dataset(manifest, Path(args.current).read_text())
    batch = load_dataset(manifest, Path(args.batch).read_text())
    decision = validate_contribution(current, batch, seed=_seed(args))
    text = decision_to_text(decision)
    if args.output:
        _write_text(args.output, text)
    sys.stdout.write(text)
    return EXIT_OK if decision.verdict == ACCEPTED else EXIT_DEFERRED


def cmd_predict(args) -> int:
    predictor = load_predictor(Path(args.model).read_text())
    manifest = predictor.manifest
    values: dict[str, str] = {}
    for item in args.record:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ParameterError(f"record entries must be key=value, got {item!r}")
        values[key] = raw

    known = {c.name for c in manifest.feature_columns}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ParameterError(f"unknown record keys: {', '.join(unknown)}")
    missing = [c.name for c in manifest.feature_columns if c.name not in values]
    if missing:
        raise ParameterError(f"missing record keys: {', '.join(missing)}")

    typed: dict[str, float | str] = {}
    for col in manifest.feature_columns:
        raw = values[col.name]
        if col.kind == "numeric":
            try:
                typed[col.name] = float(raw)
            except ValueError:
                raise ParameterError(f"{col.name}={raw!r} is not numeric") from None
        else:
            typed[col.name] = raw
    record = make_record(manifest, typed, runtime_s=1.0)  # target is a placeholder
    runtime = predictor.predict(record)
    print(f"predicted_runtime_s: {format_number(runtime)}")
    print(f"model: {predictor.chosen}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec_path = Path(args.spec)
    try:
        obj = json.loads(spec_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"spec file is not valid JSON: {exc}") from exc
    spec_objs = obj["jobs"] if isinstance(obj, dict) and "jobs" in obj else [obj]
    specs = [parse_spec(o) for o in spec_objs]

    single_file = (len(specs) == 1 and args.output is not None
                   and str(args.output).endswith(".csv"))
    out_dir = None if single_file else Path(args.output or ".")

    written = []
    for ji, spec in enumerate(specs):
        effective = derive_seed(_seed(args), ji)
        dataset = generate_synthetic(spec, seed=effective)
        csv_path = Path(args.output) if single_file else out_dir / f"{spec.job_type}.csv"
        _write_text(csv_path, write_csv(dataset))
        base = str(csv_path)[:-4] if str(csv_path).endswith(".csv") else str(csv_path)
        truth = {
            "format": "perfreduce-synthetic-truth",
            "version": 1,
            "seed": _seed(args),
            "effective_seed": effective,
            "spec": spec_to_obj(spec),
        }
        _write_text(base + ".truth.json",
                    json.dumps(truth, indent=2, sort_keys=True) + "\n")
        _write_text(base + ".manifest", render_manifest(spec.manifest()))
        written.append(str(csv_path))
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = _load_manifest(args)
    dataset = load_dataset(manifest, Path(args.input).read_text())
    predictor = c3o_select(dataset, folds=args.folds, seed=_seed(args))
    output = args.output or "model.json"
    _write_text(output, dump_predictor(predictor))
    print(f"wrote {output}")
    print(f"chosen: {predictor.chosen}")
    for name in sorted(predictor.cv_scores):
        score = predictor.cv_scores[name]
        shown = "unavailable" if score == float("inf") else format_number(score)
        print(f"cv_mape[{name}]: {shown}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    common.add_argument("--manifest", help="dataset manifest file")
    common.add_argument("--output", help="output file or directory")
    common.add_argument("--format", choices=("text", "csv", "svg"),
                        help="report format where applicable")

    parser = argparse.ArgumentParser(
        prog="perfreduce",
        description="Reduce runtime-training datasets by clustering and "
                    "benchmark the accuracy cost.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reduce", parents=[common],
                       help="cluster a dataset down to representatives")
    p.add_argument("--input", required=True, help="input CSV")
    p.add_argument("--method", required=True, choices=("kmeans", "kmedoids", "dbscan"))
    p.add_argument("--fraction", type=float, help="retained fraction in (0, 1]")
    p.add_argument("--eps", type=float, help="dbscan neighborhood radius")
    p.add_argument("--target-size", type=int, dest="target_size",
                   help="dbscan: match this representative count via eps sweep")
    p.add_argument("--min-pts", type=int, default=2, dest="min_pts")
    p.add_argument("--report", help="write the reduction report here instead of stdout")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("evaluate", parents=[common],
                       help="run the accuracy-vs-reduction experiment grid")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", parents=[common],
                       help="gate a data contribution on plausibility and quality")
    p.add_argument("--current", required=True, help="current dataset CSV")
    p.add_argument("--batch", required=True, help="incoming batch CSV")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("predict", parents=[common],
                       help="predict a runtime with a trained model file")
    p.add_argument("--model", required=True, help="serialized predictor JSON")
    p.add_argument("--record", nargs="+", required=True, metavar="KEY=VALUE",
                   help="feature values, e.g. machines=8 datasize_gb=16")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", parents=[common],
                       help="generate synthetic datasets from a spec file")
    p.add_argument("--spec", required=True, help="synthetic spec JSON (or {jobs: [...]})")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common],
                       help="fit the model selector and save it for predict")
    p.add_argument("--input", required=True, help="training CSV")
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_train)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except PerfReduceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
