"""Committed synthetic scenarios used by the acceptance suite and the default
CLI config, so runs are comparable across machines.

The two-unit scenario gives the data-rich unit cleaner signals and the
data-poor unit noisier ones at a shifted base frequency; with five trials per
unit and single-trial student folds this reproduces the comparative protocol
at desk scale. Profile numbers were tuned once so the task is learnable but
not saturated. Do not edit them casually: expected accuracies in tests were
measured against exactly these values.
"""

from __future__ import annotations

from .synthesizer import ScenarioConfig, UnitProfile

DEFAULT_SEED = 20240817

#: Seeds the two-unit directional experiments are averaged over.
EVALUATION_SEEDS = tuple(range(101, 111))


def two_unit_scenario(seed: int = DEFAULT_SEED) -> ScenarioConfig:
    """Rich unit 1 (clean) teaching poor unit 2 (noisy, shifted frequency)."""
    return ScenarioConfig(
        units=(
            UnitProfile(
                unit_id="unit1",
                base_frequency=0.10,
                base_amplitude=1.0,
                noise_std=0.30,
                anomaly_amp_gain=1.15,
                anomaly_freq_shift=0.0,
                trial_count=5,
                trial_length=900,
            ),
            UnitProfile(
                unit_id="unit2",
                base_frequency=0.115,
                base_amplitude=1.0,
                noise_std=0.45,
                anomaly_amp_gain=1.15,
                anomaly_freq_shift=0.0,
                trial_count=5,
                trial_length=900,
            ),
        ),
        rich_unit_id="unit1",
        seed=seed,
        layout="per_class_trials",
    )


def three_unit_scenario(seed: int = DEFAULT_SEED) -> ScenarioConfig:
    """One rich unit and two poor units with distinct shifts, for fan-out runs."""
    rich, poor = two_unit_scenario(seed).units
    third = UnitProfile(
        unit_id="unit3",
        base_frequency=0.09,
        base_amplitude=1.0,
        noise_std=0.50,
        anomaly_amp_gain=1.15,
        anomaly_freq_shift=0.0,
        trial_count=5,
        trial_length=900,
    )
    return ScenarioConfig(
        units=(rich, poor, third),
        rich_unit_id="unit1",
        seed=seed,
        layout="per_class_trials",
    )
