"""Temperature softmax, soft-target KL, hard-label cross-entropy, and the
combined student objective with its analytic logit gradient.

The student loss is alpha * KL(teacher_soft || student_soft_at_T) plus
(1 - alpha) * CE(student_at_T=1, labels), both mean-reduced over the batch.
No T**2 rescaling is applied to the KL term, so its gradient carries a 1/T
attenuation relative to the cross-entropy part.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

PROB_CLAMP = 1e-12  # probabilities are clamped here before any logarithm


@dataclass(frozen=True)
class DistillConfig:
    """Temperature and mixing weight of the combined objective."""

    temperature: float = 15.0
    alpha: float = 0.7

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


class KnowledgeSource(Protocol):
    """Anything that yields soft targets for a batch at a given temperature.

    Implementations must be frozen: repeated queries on identical input
    return identical output for the lifetime of a student training run.
    """

    def soft_targets(self, batch: np.ndarray, temperature: float) -> np.ndarray: ...


def _as_prob_matrix(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (batch, classes), got shape {arr.shape}")
    return arr


def softmax_t(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of logits / T, computed with max subtraction."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    logits = _as_prob_matrix(logits, "logits")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite values")
    scaled = logits / temperature
    scaled -= scaled.max(axis=1, keepdims=True)
    exp = np.exp(scaled)
    return exp / exp.sum(axis=1, keepdims=True)


def kl_divergence(teacher: np.ndarray, student: np.ndarray, reduction: str = "sum") -> float:
    """KL(teacher || student) summed over classes, with 0 * log(0/q) = 0.

    reduction="sum" adds all rows; "mean" divides by the batch size.
    """
    teacher = _as_prob_matrix(teacher, "teacher")
    student = _as_prob_matrix(student, "student")
    if teacher.shape != student.shape:
        raise ValueError(f"shape mismatch: teacher {teacher.shape} vs student {student.shape}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    positive = teacher > 0.0
    safe_teacher = np.where(positive, teacher, 1.0)
    log_ratio = np.log(safe_teacher) - np.log(np.maximum(student, PROB_CLAMP))
    total = float(np.where(positive, teacher * log_ratio, 0.0).sum())
    return total / teacher.shape[0] if reduction == "mean" else total


def cross_entropy(probs: np.ndarray, labels: np.ndarray, reduction: str = "sum") -> float:
    """Negative log-probability of the true class, labels 1-based."""
    probs = _as_prob_matrix(probs, "probs")
    labels = np.asarray(labels)
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"labels must have shape ({probs.shape[0]},), got {labels.shape}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    num_classes = probs.shape[1]
    for idx, label in enumerate(labels):
        if not 1 <= int(label) <= num_classes:
            raise ValueError(f"label {label} at row {idx} is outside [1, {num_classes}]")
    picked = probs[np.arange(probs.shape[0]), labels.astype(np.int64) - 1]
    total = float(-np.log(np.maximum(picked, PROB_CLAMP)).sum())
    return total / probs.shape[0] if reduction == "mean" else total


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(batch, classes) indicator matrix for 1-based labels."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels - 1] = 1.0
    return out


def student_loss(
    student_logits: np.ndarray,
    labels: np.ndarray,
    teacher_soft: np.ndarray,
    cfg: DistillConfig,
) -> float:
    """Mean-reduced combined objective for one batch.

    teacher_soft must have been computed at cfg.temperature.
    """
    kl = kl_divergence(teacher_soft, softmax_t(student_logits, cfg.temperature), "mean")
    ce = cross_entropy(softmax_t(student_logits, 1.0), labels, "mean")
    return cfg.alpha * kl + (1.0 - cfg.alpha) * ce


def student_loss_grad(
    student_logits: np.ndarray,
    labels: np.ndarray,
    teacher_soft: np.ndarray,
    cfg: DistillConfig,
) -> np.ndarray:
    """Gradient of student_loss with respect to the student logits.

    Per row: (alpha / T) * (p_s(T) - p_t(T)) + (1 - alpha) * (p_s(1) - onehot),
    divided by the batch size for the mean reduction.
    """
    logits = _as_prob_matrix(student_logits, "student_logits")
    teacher_soft = _as_prob_matrix(teacher_soft, "teacher_soft")
    if teacher_soft.shape != logits.shape:
        raise ValueError(
            f"teacher_soft shape {teacher_soft.shape} does not match logits {logits.shape}"
        )
    batch = logits.shape[0]
    soft = softmax_t(logits, cfg.temperature)
    hard = softmax_t(logits, 1.0)
    targets = one_hot(labels, logits.shape[1])
    kd_part = (cfg.alpha / cfg.temperature) * (soft - teacher_soft)
    ce_part = (1.0 - cfg.alpha) * (hard - targets)
    return (kd_part + ce_part) / batch


def softmax_ce_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of mean-reduced softmax cross-entropy: (p_s(1) - onehot) / B.

    Bitwise identical to student_loss_grad at alpha = 0; the plain-supervision
    training path uses this directly.
    """
    logits = _as_prob_matrix(logits, "logits")
    hard = softmax_t(logits, 1.0)
    return (hard - one_hot(labels, logits.shape[1])) / logits.shape[0]
