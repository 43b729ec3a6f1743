"""Command-line interface: generate data, train single roles, evaluate models,
run the full comparative experiment, and verify gradients.

Exit codes: 0 success, 2 usage/config error, 3 data or file-format error,
4 verification failure. All file outputs are written atomically (temp file in
the target directory, then rename), so an interrupted run never leaves a
torn model or report behind.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import data as data_mod
from .config import ConfigError, ExperimentConfig, load_config
from .data import CsvParseError, DegenerateDataError
from .evaluation import confusion, metrics, render_summary_table, write_fold_csv
from .gradcheck import run_gradcheck
from .network import ModelFormatError, deserialize, serialize
from .orchestrator import (
    ROLE_BASELINE,
    ROLE_DATA_RICH,
    ROLE_STUDENT_KD,
    ROLE_TEACHER,
    CaseSpec,
    ModelKnowledgeSource,
    TrainedModel,
    predict,
    run_case_experiment,
    train_baseline,
    train_student_kd,
    train_teacher,
)
from .numerics import stream_for
from .synthesizer import generate_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CHECK = 4

ROLE_CHOICES = ("teacher", "student-kd", "baseline", "data-rich")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class Manifest:
    """Run record: config digest, seed, artifact paths and phase timings."""

    def __init__(self, config: ExperimentConfig, seed: int):
        self.data = {
            "tool": "distilmon",
            "code_version": __version__,
            "config_digest": config.digest(),
            "seed": seed,
            "resolved_config": config.resolved(),
            "artifacts": [],
            "timings_seconds": {},
        }

    def add_artifact(self, path: Path) -> None:
        self.data["artifacts"].append(str(path))

    def add_timing(self, phase: str, seconds: float) -> None:
        self.data["timings_seconds"][phase] = seconds

    def write(self, path: Path) -> None:
        for artifact in self.data["artifacts"]:
            if not Path(artifact).exists():
                raise CliError(f"manifest references a missing artifact: {artifact}", EXIT_DATA)
        atomic_write_text(path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _load_experiment_config(path: str | None) -> ExperimentConfig:
    try:
        if path is None:
            from .config import parse_config

            return parse_config("")
        return load_config(path)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {exc.filename}", EXIT_USAGE) from exc
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_USAGE) from exc


def _streams_from(cfg: ExperimentConfig, data_path: str | None, writable_out: Path | None = None):
    """Ingest the CSV if one is configured, otherwise synthesize the scenario."""
    path = Path(data_path) if data_path else cfg.data_path
    if path is not None:
        if not path.exists():
            raise CliError(f"data file not found: {path}", EXIT_DATA)
        try:
            return data_mod.ingest_csv(path, num_classes=cfg.arch.num_classes)
        except CsvParseError as exc:
            raise CliError(str(exc), EXIT_DATA) from exc
    streams = generate_scenario(cfg.scenario)
    if writable_out is not None:
        buffer = io.StringIO()
        data_mod.write_csv(streams, buffer)
        atomic_write_text(writable_out, buffer.getvalue())
    return streams


def _scaler_to_json(standardizer) -> str:
    return json.dumps(
        {"mean": [float(x) for x in standardizer.mean], "std": [float(x) for x in standardizer.std]},
        sort_keys=True,
    )


def _scaler_from_json(path: Path):
    raw = json.loads(path.read_text(encoding="utf-8"))
    return data_mod.Standardizer(
        mean=np.asarray(raw["mean"], dtype=np.float64),
        std=np.asarray(raw["std"], dtype=np.float64),
    )


def cmd_gen_data(args) -> int:
    cfg = _load_experiment_config(args.config)
    seed = args.seed if args.seed is not None else cfg.scenario.seed
    scenario = cfg.scenario
    if seed != scenario.seed:
        from dataclasses import replace

        scenario = replace(scenario, seed=seed)
    out = Path(args.out)
    started = time.perf_counter()
    streams = generate_scenario(scenario)
    buffer = io.StringIO()
    data_mod.write_csv(streams, buffer)
    atomic_write_text(out, buffer.getvalue())
    elapsed = time.perf_counter() - started
    print(f"wrote {out} ({len(streams)} trial streams, {elapsed:.2f}s)")
    return EXIT_OK


def _role_units(cfg: ExperimentConfig, role: str, unit: str | None) -> str:
    scenario = cfg.scenario
    if unit:
        return unit
    if role == "teacher":
        return scenario.rich_unit_id
    return scenario.poor_units()[0].unit_id


def _trial_filter(streams, unit_id, trials):
    trial_set = set(trials) if trials else None
    out = []
    for stream in streams:
        if stream.unit_id != unit_id:
            continue
        if trial_set is None or data_mod.logical_trial(stream.trial_id) in trial_set:
            out.append(stream)
    if not out:
        raise CliError(f"no streams for unit {unit_id!r} with trials {sorted(trial_set) if trial_set else 'all'}", EXIT_DATA)
    return out


def cmd_train(args) -> int:
    cfg = _load_experiment_config(args.config)
    seed = args.seed if args.seed is not None else cfg.scenario.seed
    role = args.role
    if role == "student-kd" and not args.teacher:
        raise CliError("--teacher <model file> is required for role student-kd", EXIT_USAGE)
    out_dir = Path(args.out) if args.out else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(cfg, seed)

    streams = _streams_from(cfg, args.data)
    trials = args.trials.split(",") if args.trials else None

    unit_id = _role_units(cfg, role, args.unit)
    if role == "data-rich":
        rich_unit = cfg.scenario.rich_unit_id
        student_trials = trials or [cfg.scenario.logical_trials(unit_id)[0]]
        train_streams = _trial_filter(streams, rich_unit, None) + _trial_filter(
            streams, unit_id, student_trials
        )
    else:
        train_streams = _trial_filter(streams, unit_id, trials)

    windows_raw = data_mod.streams_to_windows(train_streams, cfg.pipeline)
    try:
        standardizer = data_mod.fit_standardizer(windows_raw)
    except DegenerateDataError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    windows = data_mod.apply_standardizer(standardizer, windows_raw)

    rng = stream_for(seed, f"cli-train/{role}/{unit_id}")
    train_cfg = (
        cfg.teacher_train_config() if role == "teacher" else cfg.student_train_config(role == "student-kd")
    )
    started = time.perf_counter()
    if role == "student-kd":
        try:
            teacher_params = deserialize(Path(args.teacher).read_bytes(), expected_spec=cfg.arch)
        except FileNotFoundError as exc:
            raise CliError(f"teacher model not found: {args.teacher}", EXIT_DATA) from exc
        except ModelFormatError as exc:
            raise CliError(f"teacher model: {exc}", EXIT_DATA) from exc
        model, log = train_student_kd(
            windows, ModelKnowledgeSource(teacher_params), train_cfg, rng, cfg.arch, unit_id=unit_id
        )
    elif role == "teacher":
        model, log = train_teacher(windows, train_cfg, rng, cfg.arch, unit_id=unit_id)
    else:
        model, log = train_baseline(
            windows,
            train_cfg,
            rng,
            cfg.arch,
            unit_id=unit_id,
            role=ROLE_DATA_RICH if role == "data-rich" else ROLE_BASELINE,
        )
    train_seconds = time.perf_counter() - started

    model_path = out_dir / f"{role}.kdis"
    atomic_write_bytes(model_path, serialize(model.params))
    scaler_path = out_dir / f"{role}.kdis.scaler.json"
    atomic_write_text(scaler_path, _scaler_to_json(standardizer) + "\n")
    log_path = out_dir / f"{role}_log.csv"
    buffer = io.StringIO()
    log.write_csv(buffer)
    atomic_write_text(log_path, buffer.getvalue())

    from .reporting import save_training_curves

    figure_path = out_dir / f"{role}_training.png"
    save_training_curves([(model.provenance.role, [log])], f"{role} training", figure_path)

    for path in (model_path, scaler_path, log_path, figure_path):
        manifest.add_artifact(path)
    manifest.add_timing(f"train_{role}", train_seconds)
    manifest.write(out_dir / "manifest.json")
    print(f"trained {role} on unit {unit_id}: {model_path} ({train_seconds:.2f}s)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_experiment_config(args.config)
    try:
        params = deserialize(Path(args.model).read_bytes())
    except FileNotFoundError as exc:
        raise CliError(f"model not found: {args.model}", EXIT_DATA) from exc
    except ModelFormatError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    streams = _streams_from(cfg, args.data)
    if args.unit:
        streams = [s for s in streams if s.unit_id == args.unit]
        if not streams:
            raise CliError(f"no streams for unit {args.unit!r}", EXIT_DATA)
    windows_raw = data_mod.streams_to_windows(streams, cfg.pipeline)

    scaler_path = Path(args.scaler) if args.scaler else Path(str(args.model) + ".scaler.json")
    if scaler_path.exists():
        standardizer = _scaler_from_json(scaler_path)
    else:
        print("note: no training standardizer found; fitting on the evaluation data")
        standardizer = data_mod.fit_standardizer(windows_raw)
    windows = data_mod.apply_standardizer(standardizer, windows_raw)

    values, labels = data_mod.windows_to_array(windows)
    preds = predict(params, values)
    report = metrics(confusion(preds, labels, params.spec.num_classes))
    print(
        f"accuracy={report.accuracy:.3f} precision={report.precision:.3f} "
        f"recall={report.recall:.3f} f_score={report.f_score:.3f} "
        f"({len(windows)} windows)"
    )
    if args.out:
        out = Path(args.out)
        buffer = io.StringIO()
        write_fold_csv([("evaluated", 0, report)], buffer)
        atomic_write_text(out, buffer.getvalue())
        print(f"wrote {out}")
    return EXIT_OK


def _emit_case_outputs(case_result, case_dir: Path, manifest: Manifest) -> None:
    from .reporting import save_metric_comparison, save_training_curves

    roles = [r for r in (ROLE_TEACHER, ROLE_BASELINE, ROLE_STUDENT_KD, ROLE_DATA_RICH)
             if r in case_result.summary]
    fold_rows = []
    for role in roles:
        for fold_idx, report in enumerate(case_result.per_fold(role)):
            fold_rows.append((role, fold_idx, report))
    buffer = io.StringIO()
    write_fold_csv(fold_rows, buffer)
    per_fold_path = case_dir / "metrics_per_fold.csv"
    atomic_write_text(per_fold_path, buffer.getvalue())
    manifest.add_artifact(per_fold_path)

    summary_rows = [(role, case_result.summary[role]) for role in roles]
    table_path = case_dir / "metrics_summary.txt"
    atomic_write_text(table_path, render_summary_table(
        [(role, summary) for role, summary in summary_rows]
    ))
    manifest.add_artifact(table_path)

    summary_csv = io.StringIO()
    summary_csv.write("model,metric,mean,std\n")
    for role, summary in summary_rows:
        for name, mean, std in zip(
            ("accuracy", "precision", "recall", "f_score"),
            summary.mean.values(),
            summary.std.values(),
        ):
            summary_csv.write(f"{role},{name},{mean!r},{std!r}\n")
    summary_csv_path = case_dir / "metrics_summary.csv"
    atomic_write_text(summary_csv_path, summary_csv.getvalue())
    manifest.add_artifact(summary_csv_path)

    models_dir = case_dir / "models"
    teacher_path = models_dir / "teacher.kdis"
    atomic_write_bytes(teacher_path, serialize(case_result.teacher_model.params))
    manifest.add_artifact(teacher_path)
    for fold_idx, fold in enumerate(case_result.folds):
        for role, model in fold.models.items():
            path = models_dir / f"{role}_fold{fold_idx}.kdis"
            atomic_write_bytes(path, serialize(model.params))
            manifest.add_artifact(path)

    logs_dir = case_dir / "logs"
    buffer = io.StringIO()
    case_result.teacher_log.write_csv(buffer)
    teacher_log_path = logs_dir / "teacher_log.csv"
    atomic_write_text(teacher_log_path, buffer.getvalue())
    manifest.add_artifact(teacher_log_path)
    for fold_idx, fold in enumerate(case_result.folds):
        for role, log in fold.logs.items():
            buffer = io.StringIO()
            log.write_csv(buffer)
            path = logs_dir / f"{role}_fold{fold_idx}_log.csv"
            atomic_write_text(path, buffer.getvalue())
            manifest.add_artifact(path)

    figures_dir = case_dir / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)
    comparison_path = figures_dir / "metric_comparison.png"
    save_metric_comparison(summary_rows, f"{case_result.case.name}: cross-fold metrics", comparison_path)
    manifest.add_artifact(comparison_path)
    curve_roles = [
        (role, [fold.logs[role] for fold in case_result.folds if role in fold.logs])
        for role in (ROLE_BASELINE, ROLE_STUDENT_KD, ROLE_DATA_RICH)
    ]
    curve_roles = [(role, logs) for role, logs in curve_roles if logs]
    curves_path = figures_dir / "training_curves.png"
    save_training_curves(curve_roles, f"{case_result.case.name}: student training", curves_path)
    manifest.add_artifact(curves_path)


def cmd_run_experiment(args) -> int:
    cfg = _load_experiment_config(args.config)
    seed = args.seed if args.seed is not None else cfg.scenario.seed
    out_dir = Path(args.out) if args.out else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(cfg, seed)

    started = time.perf_counter()
    data_out = out_dir / "data.csv" if cfg.data_path is None else None
    streams = _streams_from(cfg, args.data, writable_out=data_out)
    if data_out is not None:
        manifest.add_artifact(data_out)
    manifest.add_timing("data", time.perf_counter() - started)

    rich = cfg.scenario.rich_unit_id
    poor = cfg.scenario.poor_units()[0].unit_id
    cases = (
        CaseSpec("case1", teacher_unit=rich, student_unit=poor),
        CaseSpec("case2", teacher_unit=poor, student_unit=rich),
    )
    kd_seconds = rich_seconds = 0.0
    for case in cases:
        started = time.perf_counter()
        result = run_case_experiment(
            streams,
            case,
            cfg.pipeline,
            cfg.teacher_train_config(),
            cfg.student_train_config(),
            seed,
            arch=cfg.arch,
        )
        manifest.add_timing(case.name, time.perf_counter() - started)
        for role, seconds in result.train_seconds.items():
            manifest.add_timing(f"{case.name}_train_{role}", seconds)
        kd_seconds += result.train_seconds[ROLE_STUDENT_KD]
        rich_seconds += result.train_seconds[ROLE_DATA_RICH]
        case_dir = out_dir / case.name
        _emit_case_outputs(result, case_dir, manifest)
        print(f"{case.name}: teacher={case.teacher_unit} student={case.student_unit}")
        print(render_summary_table([(r, result.summary[r]) for r in result.summary]))

    manifest.add_timing("train_student_kd_total", kd_seconds)
    manifest.add_timing("train_data_rich_total", rich_seconds)
    manifest.write(out_dir / "manifest.json")
    print(f"KD student training {kd_seconds:.2f}s vs data-rich {rich_seconds:.2f}s")
    print(f"wrote {out_dir / 'manifest.json'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(
        seed=args.seed if args.seed is not None else 0,
        trials=args.trials,
        perturb_layer=args.perturb_layer,
    )
    print(report.render())
    return EXIT_OK if report.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distilmon",
        description="Teacher-student knowledge sharing for windowed process monitoring.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=False):
        p.add_argument("--config", help="experiment config (YAML); defaults apply if omitted")
        p.add_argument("--seed", type=int, help="overrides the scenario seed")
        if needs_out:
            p.add_argument("--out", help="output directory")

    p = sub.add_parser("gen-data", help="synthesize a scenario to CSV")
    common(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model role")
    common(p, needs_out=True)
    p.add_argument("--role", required=True, choices=ROLE_CHOICES)
    p.add_argument("--data", help="sensor CSV (defaults to the configured path or synthesis)")
    p.add_argument("--teacher", help="teacher model file (required for student-kd)")
    p.add_argument("--unit", help="unit to train on (defaults per role)")
    p.add_argument("--trials", help="comma-separated logical trial ids (default: all)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model file on a dataset")
    common(p)
    p.add_argument("--model", required=True, help="model file to evaluate")
    p.add_argument("--data", help="sensor CSV (defaults to the configured path or synthesis)")
    p.add_argument("--unit", help="restrict evaluation to one unit")
    p.add_argument("--scaler", help="standardizer JSON (default: <model>.scaler.json if present)")
    p.add_argument("--out", help="write a metrics CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-experiment", help="run the two-case comparative experiment")
    common(p, needs_out=True)
    p.add_argument("--data", help="sensor CSV (defaults to the configured path or synthesis)")
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("gradcheck", help="verify backprop against finite differences")
    p.add_argument("--seed", type=int, help="seed for the random instances")
    p.add_argument("--trials", type=int, default=5, help="random instances per loss setting")
    p.add_argument("--perturb-layer", help="test hook: corrupt one layer's analytic gradient")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CsvParseError, ModelFormatError, DegenerateDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
