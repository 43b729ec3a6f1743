"""Experiment configuration: a strict YAML document with explicit defaults.

Unknown keys are rejected at every level so a typo cannot silently fall back
to a default. The resolved configuration (defaults filled in) is what gets
digested into the run manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import PipelineConfig, WindowConfig
from .distillation import DistillConfig
from .network import ArchitectureSpec, DEFAULT_CONV_LAYERS, DEFAULT_DENSE_LAYERS
from .orchestrator import TrainConfig
from .synthesizer import ScenarioConfig, UnitProfile
from . import fixtures


class ConfigError(ValueError):
    """The experiment config is malformed; treated as a usage error (exit 2)."""


@dataclass
class ExperimentConfig:
    pipeline: PipelineConfig
    distill: DistillConfig
    arch: ArchitectureSpec
    epochs_teacher: int
    epochs_student: int
    batch_size: int
    learning_rate: float
    scenario: ScenarioConfig
    data_path: Path | None
    out_dir: Path

    def teacher_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs_teacher,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
        )

    def student_train_config(self, with_distill: bool = True) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs_student,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            distill=self.distill if with_distill else None,
        )

    def resolved(self) -> dict:
        """Every effective value, defaults included, as plain JSON data."""
        return {
            "window": {
                "n": self.pipeline.window.n,
                "v": self.pipeline.window.v,
                "reduce": self.pipeline.reduce,
                "channel": self.pipeline.channel,
                "label_rule": self.pipeline.label_rule,
            },
            "distill": {"alpha": self.distill.alpha, "temperature": self.distill.temperature},
            "net": {
                "input_channels": self.arch.input_channels,
                "input_length": self.arch.input_length,
                "conv_layers": [list(t) for t in self.arch.conv_layers],
                "dense_layers": [list(t) for t in self.arch.dense_layers],
            },
            "train": {
                "epochs_teacher": self.epochs_teacher,
                "epochs_student": self.epochs_student,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
            },
            "scenario": {
                "seed": self.scenario.seed,
                "layout": self.scenario.layout,
                "rich_unit_id": self.scenario.rich_unit_id,
                "anomaly_onset_fraction": self.scenario.anomaly_onset_fraction,
                "units": [
                    {
                        "unit_id": u.unit_id,
                        "base_frequency": u.base_frequency,
                        "base_amplitude": u.base_amplitude,
                        "noise_std": u.noise_std,
                        "anomaly_amp_gain": u.anomaly_amp_gain,
                        "anomaly_freq_shift": u.anomaly_freq_shift,
                        "trial_count": u.trial_count,
                        "trial_length": u.trial_length,
                    }
                    for u in self.scenario.units
                ],
            },
            "io": {
                "data_path": str(self.data_path) if self.data_path else None,
                "out_dir": str(self.out_dir),
            },
        }

    def digest(self) -> str:
        encoded = json.dumps(self.resolved(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()


def _require_mapping(node, where: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(node).__name__}")
    return node


def _check_keys(node: dict, allowed: set[str], where: str) -> None:
    unknown = set(node) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _get(node: dict, key: str, default, caster, where: str):
    if key not in node or node[key] is None:
        return default
    try:
        return caster(node[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def _parse_unit(node, idx: int) -> UnitProfile:
    where = f"scenario.units[{idx}]"
    node = _require_mapping(node, where)
    allowed = {
        "unit_id",
        "base_frequency",
        "base_amplitude",
        "noise_std",
        "anomaly_amp_gain",
        "anomaly_freq_shift",
        "trial_count",
        "trial_length",
    }
    _check_keys(node, allowed, where)
    if "unit_id" not in node:
        raise ConfigError(f"{where}: unit_id is required")
    try:
        return UnitProfile(
            unit_id=str(node["unit_id"]),
            base_frequency=_get(node, "base_frequency", 0.10, float, where),
            base_amplitude=_get(node, "base_amplitude", 1.0, float, where),
            noise_std=_get(node, "noise_std", 0.4, float, where),
            anomaly_amp_gain=_get(node, "anomaly_amp_gain", 1.35, float, where),
            anomaly_freq_shift=_get(node, "anomaly_freq_shift", 0.01, float, where),
            trial_count=_get(node, "trial_count", 5, int, where),
            trial_length=_get(node, "trial_length", 900, int, where),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse and validate a YAML experiment config, filling in defaults."""
    try:
        root = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    root = _require_mapping(root, "config")
    _check_keys(root, {"window", "distill", "net", "train", "scenario", "io"}, "config")

    window_node = _require_mapping(root.get("window"), "window")
    _check_keys(window_node, {"n", "v", "reduce", "channel", "label_rule"}, "window")
    try:
        window = WindowConfig(
            n=_get(window_node, "n", 30, int, "window"),
            v=_get(window_node, "v", 28, int, "window"),
        )
    except ValueError as exc:
        raise ConfigError(f"window: {exc}") from exc
    reduce = _get(window_node, "reduce", "magnitude", str, "window")
    if reduce not in ("magnitude", "single", "keep_all"):
        raise ConfigError(f"window.reduce must be magnitude/single/keep_all, got {reduce!r}")
    channel = _get(window_node, "channel", None, int, "window")
    label_rule = _get(window_node, "label_rule", "majority", str, "window")
    if label_rule not in ("majority", "strict"):
        raise ConfigError(f"window.label_rule must be majority/strict, got {label_rule!r}")
    pipeline = PipelineConfig(window=window, reduce=reduce, channel=channel, label_rule=label_rule)

    distill_node = _require_mapping(root.get("distill"), "distill")
    _check_keys(distill_node, {"alpha", "temperature"}, "distill")
    try:
        distill = DistillConfig(
            temperature=_get(distill_node, "temperature", 15.0, float, "distill"),
            alpha=_get(distill_node, "alpha", 0.7, float, "distill"),
        )
    except ValueError as exc:
        raise ConfigError(f"distill: {exc}") from exc

    net_node = _require_mapping(root.get("net"), "net")
    _check_keys(net_node, {"input_channels", "input_length", "conv_layers", "dense_layers"}, "net")

    def _layers(key, default, width):
        raw = net_node.get(key)
        if raw is None:
            return default
        if not isinstance(raw, list) or not all(
            isinstance(t, list) and len(t) == width for t in raw
        ):
            raise ConfigError(f"net.{key} must be a list of {width}-integer lists")
        return tuple(tuple(int(x) for x in t) for t in raw)

    try:
        arch = ArchitectureSpec(
            input_channels=_get(net_node, "input_channels", 1, int, "net"),
            input_length=_get(net_node, "input_length", window.n, int, "net"),
            conv_layers=_layers("conv_layers", DEFAULT_CONV_LAYERS, 5),
            dense_layers=_layers("dense_layers", DEFAULT_DENSE_LAYERS, 2),
        )
    except ValueError as exc:
        raise ConfigError(f"net: {exc}") from exc
    if arch.input_length != window.n:
        raise ConfigError(
            f"net.input_length {arch.input_length} must equal window.n {window.n}"
        )

    train_node = _require_mapping(root.get("train"), "train")
    _check_keys(
        train_node, {"epochs_teacher", "epochs_student", "batch_size", "learning_rate"}, "train"
    )
    epochs_teacher = _get(train_node, "epochs_teacher", 5, int, "train")
    epochs_student = _get(train_node, "epochs_student", 50, int, "train")
    batch_size = _get(train_node, "batch_size", 32, int, "train")
    learning_rate = _get(train_node, "learning_rate", 0.01, float, "train")
    if epochs_teacher < 0 or epochs_student < 0:
        raise ConfigError("train epochs must be nonnegative")
    if batch_size < 1:
        raise ConfigError(f"train.batch_size must be positive, got {batch_size}")
    if not learning_rate > 0:
        raise ConfigError(f"train.learning_rate must be positive, got {learning_rate}")

    scenario_node = _require_mapping(root.get("scenario"), "scenario")
    _check_keys(
        scenario_node,
        {"units", "rich_unit_id", "layout", "anomaly_onset_fraction", "seed"},
        "scenario",
    )
    if scenario_node.get("units"):
        units_raw = scenario_node["units"]
        if not isinstance(units_raw, list):
            raise ConfigError("scenario.units must be a list")
        units = tuple(_parse_unit(u, i) for i, u in enumerate(units_raw))
        default_rich = units[0].unit_id
        try:
            scenario = ScenarioConfig(
                units=units,
                rich_unit_id=_get(scenario_node, "rich_unit_id", default_rich, str, "scenario"),
                seed=_get(scenario_node, "seed", fixtures.DEFAULT_SEED, int, "scenario"),
                layout=_get(scenario_node, "layout", "per_class_trials", str, "scenario"),
                anomaly_onset_fraction=_get(
                    scenario_node, "anomaly_onset_fraction", 0.425, float, "scenario"
                ),
            )
        except ValueError as exc:
            raise ConfigError(f"scenario: {exc}") from exc
    else:
        base = fixtures.two_unit_scenario(
            _get(scenario_node, "seed", fixtures.DEFAULT_SEED, int, "scenario")
        )
        try:
            scenario = ScenarioConfig(
                units=base.units,
                rich_unit_id=_get(scenario_node, "rich_unit_id", base.rich_unit_id, str, "scenario"),
                seed=base.seed,
                layout=_get(scenario_node, "layout", base.layout, str, "scenario"),
                anomaly_onset_fraction=_get(
                    scenario_node, "anomaly_onset_fraction", base.anomaly_onset_fraction,
                    float, "scenario",
                ),
            )
        except ValueError as exc:
            raise ConfigError(f"scenario: {exc}") from exc
    for unit in scenario.units:
        if unit.trial_length < window.n:
            raise ConfigError(
                f"scenario unit {unit.unit_id}: trial_length {unit.trial_length} is shorter "
                f"than the window size {window.n}"
            )

    io_node = _require_mapping(root.get("io"), "io")
    _check_keys(io_node, {"data_path", "out_dir"}, "io")
    base = base_dir or Path.cwd()
    data_path = io_node.get("data_path")
    out_dir = io_node.get("out_dir", "runs")
    return ExperimentConfig(
        pipeline=pipeline,
        distill=distill,
        arch=arch,
        epochs_teacher=epochs_teacher,
        epochs_student=epochs_student,
        batch_size=batch_size,
        learning_rate=learning_rate,
        scenario=scenario,
        data_path=(base / str(data_path)) if data_path else None,
        out_dir=base / str(out_dir),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
