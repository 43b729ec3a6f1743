"""Sensor stream ingestion, channel reduction, overlapping windowing,
standardization, and leave-one-trial-in fold construction.

CSV schema (header required, UTF-8, comma separated, '.' decimal point):
    unit_id,trial_id,t,ax,ay,az,label
with t a nonnegative integer sample index contiguous per trial, ax/ay/az
decimal reals, and label an integer class in [1..M]. Windows follow the
overlap convention: window j (1-based) starts at sample (j-1)*(n-v)+1 and
covers n samples, so consecutive windows share exactly v samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_COLUMNS = ("unit_id", "trial_id", "t", "ax", "ay", "az", "label")

STATUS_SUFFIXES = ("-nominal", "-anomaly")


class CsvParseError(ValueError):
    """A sensor CSV violates the schema; the message carries the line number."""


class DegenerateDataError(ValueError):
    """Training data cannot support the requested preprocessing."""


@dataclass
class SensorStream:
    """One trial's raw multi-channel series with per-sample class labels."""

    unit_id: str
    trial_id: str
    channels: np.ndarray  # (k, L)
    labels: np.ndarray  # (L,), values in [1..M]

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.channels.ndim != 2:
            raise ValueError(f"channels must be 2-D (k, L), got shape {self.channels.shape}")
        if self.labels.shape != (self.channels.shape[1],):
            raise ValueError(
                f"labels length {self.labels.shape} does not match {self.channels.shape[1]} samples"
            )
        if not np.all(np.isfinite(self.channels)):
            raise ValueError(f"stream {self.unit_id}/{self.trial_id} contains non-finite samples")
        if self.labels.size and self.labels.min() < 1:
            raise ValueError("labels must be 1-based positive class indices")

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]


def logical_trial(trial_id: str) -> str:
    """Collapse a '-nominal'/'-anomaly' suffixed trial id to its print trial.

    Single-status trials generated per class share one logical trial; fold
    rotation operates on these so every training fold sees both classes.
    """
    for suffix in STATUS_SUFFIXES:
        if trial_id.endswith(suffix):
            return trial_id[: -len(suffix)]
    return trial_id


@dataclass(frozen=True)
class WindowConfig:
    """Window size n and overlap v between consecutive windows."""

    n: int = 30
    v: int = 28

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"window size must be positive, got {self.n}")
        if not 0 <= self.v < self.n:
            raise ValueError(f"overlap must satisfy 0 <= v < n, got v={self.v}, n={self.n}")

    @property
    def step(self) -> int:
        return self.n - self.v


@dataclass(frozen=True)
class TimeWindow:
    """One (channels, n) slice with its class label and provenance."""

    values: np.ndarray
    label: int
    origin: tuple[str, str, int]  # (unit_id, trial_id, 1-based start sample)


@dataclass(frozen=True)
class Standardizer:
    """Per-channel location/scale fitted on a training set."""

    mean: np.ndarray  # (k,)
    std: np.ndarray  # (k,)


@dataclass(frozen=True)
class Fold:
    train_trials: tuple[str, ...]
    test_trials: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    """Leave-one-trial-in rotation: each fold trains on exactly one student
    trial and tests on the rest; teacher trials are constant across folds."""

    folds: tuple[Fold, ...]
    teacher_trials: tuple[str, ...]


def ingest_csv(path, num_classes: int = 2) -> list[SensorStream]:
    """Parse a sensor CSV into one stream per (unit_id, trial_id) group.

    Raises CsvParseError (with the offending line number) on schema
    violations: missing columns, non-numeric cells, duplicate sample indices,
    out-of-range labels, or a non-contiguous time index.
    """
    path = Path(path)
    groups: dict[tuple[str, str], dict[int, tuple[float, float, float, int]]] = {}
    first_lines: dict[tuple[str, str, int], int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: line 1: empty file, expected header") from None
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise CsvParseError(
                f"{path}: line 1: header must be {','.join(CSV_COLUMNS)}, got {','.join(header)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise CsvParseError(
                    f"{path}: line {line_no}: expected {len(CSV_COLUMNS)} fields, got {len(row)}"
                )
            unit_id, trial_id = row[0].strip(), row[1].strip()
            if not unit_id or not trial_id:
                raise CsvParseError(f"{path}: line {line_no}: empty unit_id or trial_id")
            try:
                t = int(row[2])
            except ValueError:
                raise CsvParseError(
                    f"{path}: line {line_no}: t must be an integer, got {row[2]!r}"
                ) from None
            if t < 0:
                raise CsvParseError(f"{path}: line {line_no}: t must be nonnegative, got {t}")
            axes = []
            for name, cell in zip(("ax", "ay", "az"), row[3:6]):
                try:
                    value = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"{path}: line {line_no}: {name} must be numeric, got {cell!r}"
                    ) from None
                if not np.isfinite(value):
                    raise CsvParseError(f"{path}: line {line_no}: {name} is not finite")
                axes.append(value)
            try:
                label = int(row[6])
            except ValueError:
                raise CsvParseError(
                    f"{path}: line {line_no}: label must be an integer, got {row[6]!r}"
                ) from None
            if not 1 <= label <= num_classes:
                raise CsvParseError(
                    f"{path}: line {line_no}: label {label} outside [1, {num_classes}]"
                )
            key = (unit_id, trial_id)
            if (unit_id, trial_id, t) in first_lines:
                raise CsvParseError(
                    f"{path}: line {line_no}: duplicate sample ({unit_id}, {trial_id}, t={t}); "
                    f"first seen at line {first_lines[(unit_id, trial_id, t)]}"
                )
            first_lines[(unit_id, trial_id, t)] = line_no
            groups.setdefault(key, {})[t] = (axes[0], axes[1], axes[2], label)

    streams = []
    for (unit_id, trial_id) in sorted(groups):
        samples = groups[(unit_id, trial_id)]
        ts = sorted(samples)
        if ts[-1] - ts[0] + 1 != len(ts):
            missing = next(t for t in range(ts[0], ts[-1]) if t not in samples)
            raise CsvParseError(
                f"{path}: trial ({unit_id}, {trial_id}) has a gap in t at index {missing}"
            )
        rows = [samples[t] for t in ts]
        channels = np.array([[r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows]])
        labels = np.array([r[3] for r in rows], dtype=np.int64)
        streams.append(SensorStream(unit_id, trial_id, channels, labels))
    return streams


def write_csv(streams: Iterable[SensorStream], fh) -> None:
    """Emit streams in the ingest schema (3-channel streams only)."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for stream in streams:
        if stream.num_channels != 3:
            raise ValueError(
                f"CSV schema carries 3 channels, stream {stream.unit_id}/{stream.trial_id} "
                f"has {stream.num_channels}"
            )
        for t in range(stream.length):
            writer.writerow(
                [
                    stream.unit_id,
                    stream.trial_id,
                    t,
                    repr(float(stream.channels[0, t])),
                    repr(float(stream.channels[1, t])),
                    repr(float(stream.channels[2, t])),
                    int(stream.labels[t]),
                ]
            )


def reduce_channels(stream: SensorStream, mode: str = "magnitude", index: int | None = None) -> SensorStream:
    """Collapse multi-axis channels: Euclidean magnitude, one axis, or keep all."""
    if mode == "magnitude":
        reduced = np.sqrt((stream.channels**2).sum(axis=0, keepdims=True))
    elif mode == "single":
        if index is None or not 0 <= index < stream.num_channels:
            raise ValueError(
                f"single-channel reduction needs an index in [0, {stream.num_channels}), got {index}"
            )
        reduced = stream.channels[index : index + 1].copy()
    elif mode == "keep_all":
        return stream
    else:
        raise ValueError(f"unknown reduction mode {mode!r}")
    return SensorStream(stream.unit_id, stream.trial_id, reduced, stream.labels.copy())


def make_windows(
    stream: SensorStream, cfg: WindowConfig, label_rule: str = "majority"
) -> list[TimeWindow]:
    """Slice a stream into overlapping windows of n samples, step n - v.

    majority: the window label is the most frequent sample label, ties going
    to the earlier class index. strict: windows spanning a label change are
    dropped.
    """
    if label_rule not in ("majority", "strict"):
        raise ValueError(f"label_rule must be 'majority' or 'strict', got {label_rule!r}")
    if stream.length < cfg.n:
        raise ValueError(
            f"stream {stream.unit_id}/{stream.trial_id} has {stream.length} samples, "
            f"shorter than window size {cfg.n}"
        )
    count = (stream.length - cfg.n) // cfg.step + 1
    windows = []
    for j in range(count):
        start = j * cfg.step
        labels = stream.labels[start : start + cfg.n]
        if label_rule == "strict":
            if labels.min() != labels.max():
                continue
            label = int(labels[0])
        else:
            label = int(np.bincount(labels).argmax())
        windows.append(
            TimeWindow(
                values=stream.channels[:, start : start + cfg.n].copy(),
                label=label,
                origin=(stream.unit_id, stream.trial_id, start + 1),
            )
        )
    return windows


def windows_to_array(windows: Sequence[TimeWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (N, channels, n) values and (N,) labels."""
    if not windows:
        raise ValueError("cannot stack an empty window list")
    values = np.stack([w.values for w in windows])
    labels = np.array([w.label for w in windows], dtype=np.int64)
    return values, labels


def fit_standardizer(windows: Sequence[TimeWindow]) -> Standardizer:
    """Per-channel mean/std over every sample of the training windows.

    Statistics are population (ddof 0); a channel with zero variance is
    rejected because its z-scores would be undefined.
    """
    if not windows:
        raise ValueError("cannot fit a standardizer on an empty window list")
    values, _ = windows_to_array(windows)
    mean = values.mean(axis=(0, 2))
    std = values.std(axis=(0, 2))
    if np.any(std < 1e-12):
        bad = int(np.argmin(std))
        raise DegenerateDataError(f"channel {bad} has zero variance on the training set")
    return Standardizer(mean=mean, std=std)


def apply_standardizer(standardizer: Standardizer, windows: Sequence[TimeWindow]) -> list[TimeWindow]:
    """Transform windows with training statistics; never refits."""
    mean = standardizer.mean[:, None]
    std = standardizer.std[:, None]
    return [TimeWindow((w.values - mean) / std, w.label, w.origin) for w in windows]


def build_folds(student_trials: Sequence[str], teacher_trials: Sequence[str]) -> FoldPlan:
    """One fold per student trial: it trains the student, the rest test it."""
    student_trials = list(student_trials)
    if len(student_trials) < 2:
        raise ValueError(f"need at least 2 student trials to rotate, got {len(student_trials)}")
    if len(set(student_trials)) != len(student_trials):
        raise ValueError("student trials contain duplicates")
    folds = tuple(
        Fold(
            train_trials=(trial,),
            test_trials=tuple(t for t in student_trials if t != trial),
        )
        for trial in student_trials
    )
    return FoldPlan(folds=folds, teacher_trials=tuple(teacher_trials))


@dataclass(frozen=True)
class PipelineConfig:
    """Stream-to-window settings shared by every model in an experiment."""

    window: WindowConfig = field(default_factory=WindowConfig)
    reduce: str = "magnitude"
    channel: int | None = None
    label_rule: str = "majority"


def stream_to_windows(stream: SensorStream, pipe: PipelineConfig) -> list[TimeWindow]:
    reduced = reduce_channels(stream, pipe.reduce, pipe.channel)
    return make_windows(reduced, pipe.window, pipe.label_rule)


def streams_to_windows(streams: Iterable[SensorStream], pipe: PipelineConfig) -> list[TimeWindow]:
    out: list[TimeWindow] = []
    for stream in streams:
        out.extend(stream_to_windows(stream, pipe))
    return out
