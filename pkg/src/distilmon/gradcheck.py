"""Backpropagation-versus-finite-differences verification suite.

Runs the full-coordinate check on a reduced architecture (same layer kinds as
the default network, far fewer filters, so every conv/dense/rectifier code
path is exercised at full coverage in seconds), plus a sampled-coordinate
check on the full default architecture. Both the combined objective at its
default settings and plain cross-entropy (alpha = 0, T = 1) are covered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distillation import DistillConfig, softmax_t, student_loss, student_loss_grad
from .network import (
    ArchitectureSpec,
    backward,
    forward,
    init_params,
    params_from_vector,
    params_to_vector,
)
from .numerics import finite_diff_gradient, relative_errors, stream_for

REL_TOLERANCE = 1e-4
ABS_FLOOR = 1e-7
FD_STEP = 1e-5

LOSS_SETTINGS = (DistillConfig(temperature=15.0, alpha=0.7), DistillConfig(temperature=1.0, alpha=0.0))

#: Same stack shape as the default network, scaled down for full-coordinate FD.
SMALL_ARCH = ArchitectureSpec(
    input_channels=1,
    input_length=30,
    conv_layers=((1, 3, 3, 2, 1), (3, 4, 3, 2, 1)),
    dense_layers=((32, 10), (10, 6), (6, 2)),
)


@dataclass
class GradCheckFailure:
    trial: int
    setting: DistillConfig
    layer: str
    coordinate: int
    relative_error: float


@dataclass
class GradCheckReport:
    trials: int
    coordinates_checked: int = 0
    max_relative_error: float = 0.0
    failures: list[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def render(self) -> str:
        lines = [
            f"gradient check: {self.trials} trial(s), "
            f"{self.coordinates_checked} coordinates, "
            f"max relative error {self.max_relative_error:.3e} "
            f"(tolerance {REL_TOLERANCE:.0e})"
        ]
        if self.trials == 0:
            lines.append("WARNING: zero trials requested; the pass is vacuous")
        for f in self.failures[:20]:
            lines.append(
                f"FAIL trial {f.trial} alpha={f.setting.alpha} T={f.setting.temperature}: "
                f"{f.layer}[{f.coordinate}] relative error {f.relative_error:.3e}"
            )
        if len(self.failures) > 20:
            lines.append(f"... and {len(self.failures) - 20} more failures")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _layer_of_coordinate(spec: ArchitectureSpec, names: list[str], sizes: list[int], index: int) -> tuple[str, int]:
    offset = 0
    for name, size in zip(names, sizes):
        if index < offset + size:
            return name, index - offset
        offset += size
    raise IndexError(index)


def _random_instance(arch: ArchitectureSpec, rng, batch_size: int):
    """Parameters and a batch with no pre-activation near the rectifier kink.

    Freshly initialized biases are exactly zero and padded windows can be all
    zero, which parks pre-activations exactly where the rectifier derivative
    is undefined and finite differences straddle the kink. Small random bias
    offsets remove the structural zeros; the retry guard handles the
    measure-zero rest.
    """
    batch = rng.derive(1).normals(batch_size * arch.input_channels * arch.input_length).reshape(
        batch_size, arch.input_channels, arch.input_length
    )
    for attempt in range(10):
        params = init_params(arch, rng.derive(10 + attempt))
        for bias in params.conv_biases + params.dense_biases:
            bias += (2.0 * rng.derive(100 + attempt).uniforms(bias.size) - 1.0) * 0.05
        _, cache = forward(params, batch)
        kink_distance = min(
            float(np.abs(z).min()) for z in cache.conv_pre + cache.dense_pre[:-1]
        )
        if kink_distance > 100.0 * FD_STEP:
            return params, batch
    raise RuntimeError("could not draw a kink-free gradcheck instance")


def _check_instance(
    arch: ArchitectureSpec,
    cfg: DistillConfig,
    trial: int,
    seed: int,
    batch_size: int,
    coordinate_subset: int | None,
    perturb_layer: str | None,
    report: GradCheckReport,
) -> None:
    rng = stream_for(seed, f"gradcheck/{arch.flatten_size}/{trial}/{cfg.alpha}/{cfg.temperature}")
    params, batch = _random_instance(arch, rng, batch_size)
    labels = (rng.derive(2).uniforms(batch_size) * arch.num_classes).astype(np.int64) + 1
    teacher_logits = rng.derive(3).normals(batch_size * arch.num_classes).reshape(
        batch_size, arch.num_classes
    )
    teacher_soft = softmax_t(teacher_logits, cfg.temperature)

    logits, cache = forward(params, batch)
    grads = backward(params, cache, student_loss_grad(logits, labels, teacher_soft, cfg))
    analytic = params_to_vector(grads)

    names = params.array_names()
    sizes = [a.size for a in params.arrays()]
    if perturb_layer is not None:
        offset = 0
        for name, size in zip(names, sizes):
            if name == perturb_layer:
                analytic = analytic.copy()
                analytic[offset] += 1e-2
                break
            offset += size
        else:
            raise ValueError(f"no layer named {perturb_layer!r}")

    def loss_at(vector: np.ndarray) -> float:
        candidate = params_from_vector(arch, vector)
        candidate_logits, _ = forward(candidate, batch)
        return student_loss(candidate_logits, labels, teacher_soft, cfg)

    theta = params_to_vector(params)
    if coordinate_subset is None:
        numeric = finite_diff_gradient(loss_at, theta, FD_STEP)
        indices = np.arange(theta.size)
        errors = relative_errors(analytic, numeric, ABS_FLOOR)
    else:
        indices = np.sort(
            (rng.derive(4).uniforms(coordinate_subset) * theta.size).astype(np.int64)
        )
        numeric = np.empty(indices.size)
        for pos, i in enumerate(indices):
            step = np.zeros(theta.size)
            step[i] = FD_STEP
            plus = loss_at(theta + step)
            minus = loss_at(theta - step)
            numeric[pos] = (plus - minus) / (2.0 * FD_STEP)
        errors = relative_errors(analytic[indices], numeric, ABS_FLOOR)

    report.coordinates_checked += errors.size
    report.max_relative_error = max(report.max_relative_error, float(errors.max()))
    for pos in np.nonzero(errors > REL_TOLERANCE)[0]:
        coord = int(indices[pos])
        layer, local = _layer_of_coordinate(arch, names, sizes, coord)
        report.failures.append(
            GradCheckFailure(trial, cfg, layer, local, float(errors[pos]))
        )


def run_gradcheck(
    seed: int = 0,
    trials: int = 5,
    batch_size: int = 4,
    full_arch_samples: int = 200,
    perturb_layer: str | None = None,
) -> GradCheckReport:
    """Every coordinate on the reduced architecture for each trial and loss
    setting, then `full_arch_samples` random coordinates on the default one.

    perturb_layer deliberately corrupts one analytic gradient entry; it exists
    so the failure path (naming the offending layer) stays tested.
    """
    if trials < 0:
        raise ValueError(f"trials must be nonnegative, got {trials}")
    report = GradCheckReport(trials=trials)
    for trial in range(trials):
        for cfg in LOSS_SETTINGS:
            _check_instance(
                SMALL_ARCH, cfg, trial, seed, batch_size, None, perturb_layer, report
            )
    if trials > 0 and full_arch_samples > 0:
        _check_instance(
            ArchitectureSpec(),
            LOSS_SETTINGS[0],
            trials,
            seed,
            batch_size,
            full_arch_samples,
            perturb_layer,
            report,
        )
    return report
