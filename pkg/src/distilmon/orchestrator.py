"""Training loops: teacher, plain-supervision baseline, distillation student,
multi-unit fan-out, and the two-case comparative experiment.

Every loop is plain minibatch SGD with a seeded per-epoch shuffle, so a run is
a pure function of (data, config, stream). The teacher is frozen during
student training: it is only ever queried for soft targets, and updates build
new parameter objects rather than mutating old ones.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import data as data_mod
from .data import FoldPlan, PipelineConfig, SensorStream, TimeWindow, build_folds
from .distillation import (
    DistillConfig,
    KnowledgeSource,
    cross_entropy,
    softmax_ce_grad,
    softmax_t,
    student_loss,
    student_loss_grad,
)
from .evaluation import MetricsReport, MetricsSummary, confusion, metrics, summarize_folds
from .network import (
    ArchitectureSpec,
    CnnParameters,
    backward,
    forward,
    init_params,
    serialize,
)
from .numerics import RngStream, stream_for

ROLE_TEACHER = "teacher"
ROLE_BASELINE = "baseline"
ROLE_STUDENT_KD = "student_kd"
ROLE_DATA_RICH = "data_rich"

_INIT_SUBSTREAM = 0  # rng.derive ids: 0 = parameter init, 1 + epoch = shuffles


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 0.01
    shuffle_seed: int | None = None
    distill: DistillConfig | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class Provenance:
    role: str
    unit_id: str = ""
    fold: int | None = None
    config_digest: str = ""


@dataclass
class TrainedModel:
    params: CnnParameters
    provenance: Provenance

    @property
    def spec(self) -> ArchitectureSpec:
        return self.params.spec


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float | None = None


@dataclass
class TrainingLog:
    entries: list[EpochStats] = field(default_factory=list)

    def write_csv(self, fh) -> None:
        fh.write("epoch,loss,train_acc,test_acc\n")
        for e in self.entries:
            test = "" if e.test_acc is None else repr(e.test_acc)
            fh.write(f"{e.epoch},{e.loss!r},{e.train_acc!r},{test}\n")


class ModelKnowledgeSource:
    """Frozen-network adapter: soft targets are the model's tempered softmax."""

    def __init__(self, params: CnnParameters):
        self._params = params

    def soft_targets(self, batch: np.ndarray, temperature: float) -> np.ndarray:
        logits, _ = forward(self._params, batch)
        return softmax_t(logits, temperature)


def sgd_step(params: CnnParameters, grads: CnnParameters, learning_rate: float) -> CnnParameters:
    """One descent update, theta - lr * g, building fresh arrays."""
    if params.spec != grads.spec:
        raise ValueError("parameter and gradient architectures differ")
    new_arrays = []
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        new_arrays.append(p - learning_rate * g)
    n_conv = len(params.conv_kernels)
    return CnnParameters(
        spec=params.spec,
        conv_kernels=new_arrays[0 : 2 * n_conv : 2],
        conv_biases=new_arrays[1 : 2 * n_conv : 2],
        dense_weights=new_arrays[2 * n_conv :: 2],
        dense_biases=new_arrays[2 * n_conv + 1 :: 2],
    )


def params_checksum(params: CnnParameters) -> str:
    """SHA-256 of the serialized parameters; used by frozen-teacher checks."""
    return hashlib.sha256(serialize(params)).hexdigest()


def predict(params: CnnParameters, values: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """1-based argmax labels for a stack of windows."""
    out = []
    for start in range(0, values.shape[0], batch_size):
        logits, _ = forward(params, values[start : start + batch_size])
        out.append(np.argmax(logits, axis=1) + 1)
    return np.concatenate(out)


def accuracy_on(params: CnnParameters, windows: Sequence[TimeWindow]) -> float:
    values, labels = data_mod.windows_to_array(windows)
    return float((predict(params, values) == labels).mean())


def _shuffle_stream(cfg: TrainConfig, rng: RngStream, epoch: int) -> RngStream:
    if cfg.shuffle_seed is not None:
        return stream_for(cfg.shuffle_seed, f"shuffle/{epoch}")
    return rng.derive(1 + epoch)


def _train_loop(
    windows: Sequence[TimeWindow],
    cfg: TrainConfig,
    rng: RngStream,
    arch: ArchitectureSpec,
    teacher: KnowledgeSource | None,
    eval_windows: Sequence[TimeWindow] | None,
    provenance: Provenance,
) -> tuple[TrainedModel, TrainingLog]:
    if not windows:
        raise ValueError("training data is empty")
    values, labels = data_mod.windows_to_array(windows)
    if values.shape[1] != arch.input_channels or values.shape[2] != arch.input_length:
        raise ValueError(
            f"windows of shape {values.shape[1:]} do not fit the architecture input "
            f"({arch.input_channels}, {arch.input_length})"
        )
    if teacher is not None and cfg.distill is None:
        raise ValueError("a distillation config is required when training against a teacher")

    params = init_params(arch, rng.derive(_INIT_SUBSTREAM))
    eval_values = eval_labels = None
    if eval_windows:
        eval_values, eval_labels = data_mod.windows_to_array(eval_windows)

    log = TrainingLog()
    n = values.shape[0]
    for epoch in range(cfg.epochs):
        order = _shuffle_stream(cfg, rng, epoch).permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = values[idx]
            batch_labels = labels[idx]
            logits, cache = forward(params, batch)
            if teacher is None:
                loss = cross_entropy(softmax_t(logits, 1.0), batch_labels, "mean")
                logit_grad = softmax_ce_grad(logits, batch_labels)
            else:
                soft = teacher.soft_targets(batch, cfg.distill.temperature)
                if soft.shape != logits.shape:
                    raise RuntimeError(
                        f"teacher returned soft targets of shape {soft.shape}, "
                        f"expected {logits.shape}"
                    )
                loss = student_loss(logits, batch_labels, soft, cfg.distill)
                logit_grad = student_loss_grad(logits, batch_labels, soft, cfg.distill)
            grads = backward(params, cache, logit_grad)
            params = sgd_step(params, grads, cfg.learning_rate)
            loss_sum += loss * len(idx)
            correct += int((np.argmax(logits, axis=1) + 1 == batch_labels).sum())
        test_acc = None
        if eval_values is not None:
            test_acc = float((predict(params, eval_values) == eval_labels).mean())
        log.entries.append(EpochStats(epoch + 1, loss_sum / n, correct / n, test_acc))
    return TrainedModel(params=params, provenance=provenance), log


def train_teacher(
    windows: Sequence[TimeWindow],
    cfg: TrainConfig,
    rng: RngStream,
    arch: ArchitectureSpec | None = None,
    eval_windows: Sequence[TimeWindow] | None = None,
    unit_id: str = "",
) -> tuple[TrainedModel, TrainingLog]:
    """Minibatch cross-entropy training of the knowledge-providing network."""
    if cfg.distill is not None:
        raise ValueError("teacher training takes no distillation config")
    arch = arch or ArchitectureSpec()
    return _train_loop(
        windows, cfg, rng, arch, None, eval_windows, Provenance(ROLE_TEACHER, unit_id)
    )


def train_baseline(
    windows: Sequence[TimeWindow],
    cfg: TrainConfig,
    rng: RngStream,
    arch: ArchitectureSpec | None = None,
    eval_windows: Sequence[TimeWindow] | None = None,
    unit_id: str = "",
    fold: int | None = None,
    role: str = ROLE_BASELINE,
) -> tuple[TrainedModel, TrainingLog]:
    """Plain supervision on the student's own data, no teacher involved."""
    if cfg.distill is not None:
        raise ValueError("baseline training takes no distillation config")
    arch = arch or ArchitectureSpec()
    return _train_loop(windows, cfg, rng, arch, None, eval_windows, Provenance(role, unit_id, fold))


def train_student_kd(
    windows: Sequence[TimeWindow],
    teacher: KnowledgeSource,
    cfg: TrainConfig,
    rng: RngStream,
    arch: ArchitectureSpec | None = None,
    eval_windows: Sequence[TimeWindow] | None = None,
    unit_id: str = "",
    fold: int | None = None,
) -> tuple[TrainedModel, TrainingLog]:
    """Distillation training: each minibatch queries the frozen teacher for
    soft targets on the student's own samples and descends the combined loss."""
    if cfg.distill is None:
        raise ValueError("student training requires a distillation config")
    arch = arch or ArchitectureSpec()
    return _train_loop(
        windows, cfg, rng, arch, teacher, eval_windows, Provenance(ROLE_STUDENT_KD, unit_id, fold)
    )


@dataclass(frozen=True)
class StudentTask:
    """One data-poor unit's training job inside a multi-unit run."""

    unit_id: str
    windows: Sequence[TimeWindow]
    cfg: TrainConfig
    eval_windows: Sequence[TimeWindow] | None = None


@dataclass
class MultiUnitResult:
    teacher: TrainedModel
    teacher_log: TrainingLog
    students: list[TrainedModel]
    student_logs: list[TrainingLog]


def train_multi_unit(
    teacher_windows: Sequence[TimeWindow],
    student_tasks: Sequence[StudentTask],
    teacher_cfg: TrainConfig,
    rng: RngStream,
    arch: ArchitectureSpec | None = None,
    teacher_unit_id: str = "",
) -> MultiUnitResult:
    """Train the teacher once, then every student independently against it.

    Each student draws from a stream keyed on its unit id, not its list
    position, so reordering the task list cannot change any result; results
    are returned in input order.
    """
    if not student_tasks:
        raise ValueError("need at least one student task")
    ids = [t.unit_id for t in student_tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("student unit ids must be unique")
    arch = arch or ArchitectureSpec()
    teacher_model, teacher_log = train_teacher(
        teacher_windows, teacher_cfg, rng.derive(_INIT_SUBSTREAM + 1), arch, unit_id=teacher_unit_id
    )
    source = ModelKnowledgeSource(teacher_model.params)
    students, logs = [], []
    for task in student_tasks:
        student_rng = stream_for(rng.seed, f"multi/{rng.stream_id}/{task.unit_id}")
        model, log = train_student_kd(
            task.windows,
            source,
            task.cfg,
            student_rng,
            arch,
            eval_windows=task.eval_windows,
            unit_id=task.unit_id,
        )
        students.append(model)
        logs.append(log)
    return MultiUnitResult(teacher_model, teacher_log, students, logs)


@dataclass(frozen=True)
class CaseSpec:
    """Which unit teaches and which learns in one comparative case."""

    name: str
    teacher_unit: str
    student_unit: str


@dataclass
class FoldArtifacts:
    models: dict[str, TrainedModel]
    logs: dict[str, TrainingLog]
    reports: dict[str, MetricsReport]


@dataclass
class CaseResult:
    case: CaseSpec
    fold_plan: FoldPlan
    folds: list[FoldArtifacts]
    teacher_model: TrainedModel
    teacher_log: TrainingLog
    summary: dict[str, MetricsSummary]
    train_seconds: dict[str, float]

    def per_fold(self, role: str) -> list[MetricsReport]:
        return [f.reports[role] for f in self.folds]


def _windows_by_trial(
    streams: Sequence[SensorStream], unit_id: str, trials: Sequence[str], pipe: PipelineConfig
) -> list[TimeWindow]:
    wanted = set(trials)
    out: list[TimeWindow] = []
    for stream in streams:
        if stream.unit_id == unit_id and data_mod.logical_trial(stream.trial_id) in wanted:
            out.extend(data_mod.stream_to_windows(stream, pipe))
    return out


def _fit_apply(train_windows, test_windows):
    standardizer = data_mod.fit_standardizer(train_windows)
    return (
        data_mod.apply_standardizer(standardizer, train_windows),
        data_mod.apply_standardizer(standardizer, test_windows),
        standardizer,
    )


def _evaluate(params: CnnParameters, test_windows: Sequence[TimeWindow], num_classes: int) -> MetricsReport:
    values, labels = data_mod.windows_to_array(test_windows)
    preds = predict(params, values)
    return metrics(confusion(preds, labels, num_classes))


def run_case_experiment(
    streams: Sequence[SensorStream],
    case: CaseSpec,
    pipe: PipelineConfig,
    teacher_cfg: TrainConfig,
    student_cfg: TrainConfig,
    seed: int,
    arch: ArchitectureSpec | None = None,
    include_data_rich: bool = True,
    fold_plan: FoldPlan | None = None,
    track_test_accuracy: bool = True,
) -> CaseResult:
    """The comparative protocol for one teacher/student role assignment.

    Per fold: the student trains on a single trial, the baseline student
    trains identically without the teacher, and the data-rich network trains
    on all teacher trials plus the student's training trial; all are scored
    on the fold's held-out student trials. Each model standardizes with
    statistics fitted on its own training windows. The teacher is trained
    once, up front, and its soft targets drive every fold's student.
    """
    arch = arch or ArchitectureSpec()
    if student_cfg.distill is None:
        raise ValueError("student config must carry a distillation section")
    unit_ids = {s.unit_id for s in streams}
    for unit in (case.teacher_unit, case.student_unit):
        if unit not in unit_ids:
            raise ValueError(f"unit {unit!r} has no streams")

    teacher_trials = sorted(
        {data_mod.logical_trial(s.trial_id) for s in streams if s.unit_id == case.teacher_unit}
    )
    student_trials = sorted(
        {data_mod.logical_trial(s.trial_id) for s in streams if s.unit_id == case.student_unit}
    )
    if fold_plan is None:
        fold_plan = build_folds(student_trials, teacher_trials)

    train_seconds = dict.fromkeys(
        (ROLE_TEACHER, ROLE_BASELINE, ROLE_STUDENT_KD, ROLE_DATA_RICH), 0.0
    )

    teacher_raw = _windows_by_trial(streams, case.teacher_unit, fold_plan.teacher_trials, pipe)
    teacher_std = data_mod.fit_standardizer(teacher_raw)
    teacher_train = data_mod.apply_standardizer(teacher_std, teacher_raw)
    started = time.perf_counter()
    teacher_model, teacher_log = train_teacher(
        teacher_train,
        teacher_cfg,
        stream_for(seed, f"{case.name}/teacher"),
        arch,
        unit_id=case.teacher_unit,
    )
    train_seconds[ROLE_TEACHER] += time.perf_counter() - started
    teacher_source = ModelKnowledgeSource(teacher_model.params)

    baseline_cfg = replace(student_cfg, distill=None)
    folds = []
    for fold_idx, fold in enumerate(fold_plan.folds):
        train_raw = _windows_by_trial(streams, case.student_unit, fold.train_trials, pipe)
        test_raw = _windows_by_trial(streams, case.student_unit, fold.test_trials, pipe)
        student_train, student_test, _ = _fit_apply(train_raw, test_raw)
        student_eval = student_test if track_test_accuracy else None

        models: dict[str, TrainedModel] = {}
        logs: dict[str, TrainingLog] = {}
        reports: dict[str, MetricsReport] = {}

        teacher_test = data_mod.apply_standardizer(teacher_std, test_raw)
        reports[ROLE_TEACHER] = _evaluate(teacher_model.params, teacher_test, arch.num_classes)

        started = time.perf_counter()
        models[ROLE_BASELINE], logs[ROLE_BASELINE] = train_baseline(
            student_train,
            baseline_cfg,
            stream_for(seed, f"{case.name}/fold{fold_idx}/{ROLE_BASELINE}"),
            arch,
            eval_windows=student_eval,
            unit_id=case.student_unit,
            fold=fold_idx,
        )
        train_seconds[ROLE_BASELINE] += time.perf_counter() - started

        started = time.perf_counter()
        models[ROLE_STUDENT_KD], logs[ROLE_STUDENT_KD] = train_student_kd(
            student_train,
            teacher_source,
            student_cfg,
            stream_for(seed, f"{case.name}/fold{fold_idx}/{ROLE_STUDENT_KD}"),
            arch,
            eval_windows=student_eval,
            unit_id=case.student_unit,
            fold=fold_idx,
        )
        train_seconds[ROLE_STUDENT_KD] += time.perf_counter() - started

        for role in (ROLE_BASELINE, ROLE_STUDENT_KD):
            reports[role] = _evaluate(models[role].params, student_test, arch.num_classes)

        if include_data_rich:
            rich_raw = teacher_raw + train_raw
            rich_train, rich_test, _ = _fit_apply(rich_raw, test_raw)
            started = time.perf_counter()
            models[ROLE_DATA_RICH], logs[ROLE_DATA_RICH] = train_baseline(
                rich_train,
                baseline_cfg,
                stream_for(seed, f"{case.name}/fold{fold_idx}/{ROLE_DATA_RICH}"),
                arch,
                eval_windows=rich_test if track_test_accuracy else None,
                unit_id=case.student_unit,
                fold=fold_idx,
                role=ROLE_DATA_RICH,
            )
            train_seconds[ROLE_DATA_RICH] += time.perf_counter() - started
            reports[ROLE_DATA_RICH] = _evaluate(models[ROLE_DATA_RICH].params, rich_test, arch.num_classes)

        folds.append(FoldArtifacts(models=models, logs=logs, reports=reports))

    roles = [ROLE_TEACHER, ROLE_BASELINE, ROLE_STUDENT_KD]
    if include_data_rich:
        roles.append(ROLE_DATA_RICH)
    summary = {role: summarize_folds([f.reports[role] for f in folds]) for role in roles}
    if not include_data_rich:
        train_seconds.pop(ROLE_DATA_RICH)
    return CaseResult(
        case=case,
        fold_plan=fold_plan,
        folds=folds,
        teacher_model=teacher_model,
        teacher_log=teacher_log,
        summary=summary,
        train_seconds=train_seconds,
    )
