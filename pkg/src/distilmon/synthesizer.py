"""Synthetic decentralized-unit vibration data.

Each unit emits 3-channel sinusoids plus Gaussian noise; units differ in base
frequency, amplitude and noise level, so their window distributions are
similar but not identical. The anomalous status multiplies the amplitude and
shifts the frequency. Channel phases are random whole-sample offsets
(phase = 2*pi*f*k for an integer k), which keeps the sampled value lattice,
and hence amplitude statistics like the maximum and RMS, identical across
phase draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SensorStream
from .numerics import RngStream, sample_gaussian, stream_for

NOMINAL = 1
ANOMALY = 2

_CHANNELS = 3
_PHASE_SHIFT_RANGE = 1024  # whole-sample phase offsets are drawn from [0, this)


@dataclass(frozen=True)
class UnitProfile:
    """Signal family of one manufacturing unit."""

    unit_id: str
    base_frequency: float  # cycles per sample
    base_amplitude: float
    noise_std: float
    anomaly_amp_gain: float
    anomaly_freq_shift: float
    trial_count: int
    trial_length: int = 900

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")
        if self.trial_count < 1:
            raise ValueError(f"trial_count must be positive, got {self.trial_count}")
        if self.trial_length < 1:
            raise ValueError(f"trial_length must be positive, got {self.trial_length}")
        if self.base_frequency <= 0:
            raise ValueError(f"base_frequency must be positive, got {self.base_frequency}")


@dataclass(frozen=True)
class ScenarioConfig:
    """A full multi-unit dataset recipe, reproducible from its seed."""

    units: tuple[UnitProfile, ...]
    rich_unit_id: str
    seed: int
    layout: str = "per_class_trials"
    anomaly_onset_fraction: float = 0.425

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if len(self.units) < 2:
            raise ValueError(f"a scenario needs at least 2 units, got {len(self.units)}")
        ids = [u.unit_id for u in self.units]
        if len(set(ids)) != len(ids):
            raise ValueError("unit ids must be unique")
        if self.rich_unit_id not in ids:
            raise ValueError(f"rich_unit_id {self.rich_unit_id!r} is not among {ids}")
        if self.layout not in ("per_class_trials", "mixed_trial"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if not 0.0 < self.anomaly_onset_fraction < 1.0:
            raise ValueError(
                f"anomaly_onset_fraction must lie in (0, 1), got {self.anomaly_onset_fraction}"
            )
        rich = self.rich_unit()
        for unit in self.units:
            if unit.trial_count > rich.trial_count:
                raise ValueError(
                    f"rich unit must have the most trials: {unit.unit_id} has "
                    f"{unit.trial_count} > {rich.trial_count}"
                )

    def rich_unit(self) -> UnitProfile:
        return next(u for u in self.units if u.unit_id == self.rich_unit_id)

    def poor_units(self) -> list[UnitProfile]:
        return [u for u in self.units if u.unit_id != self.rich_unit_id]

    def logical_trials(self, unit_id: str) -> list[str]:
        unit = next(u for u in self.units if u.unit_id == unit_id)
        return [f"t{k}" for k in range(1, unit.trial_count + 1)]


def _status_params(profile: UnitProfile, status: int) -> tuple[float, float]:
    if status == ANOMALY:
        return (
            profile.base_amplitude * profile.anomaly_amp_gain,
            profile.base_frequency + profile.anomaly_freq_shift,
        )
    return profile.base_amplitude, profile.base_frequency


def _channel(amp, freq, length, shift, noise_std, rng) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    signal = amp * np.sin(2.0 * math.pi * freq * (t + shift))
    if noise_std > 0:
        signal = signal + sample_gaussian(rng, 0.0, noise_std, length)
    return signal


def generate_trial(
    profile: UnitProfile, status: int, trial_id: str, rng: RngStream
) -> SensorStream:
    """One single-status trial: 3 phase-offset sinusoid channels plus noise."""
    if status not in (NOMINAL, ANOMALY):
        raise ValueError(f"status must be {NOMINAL} (nominal) or {ANOMALY} (anomaly), got {status}")
    amp, freq = _status_params(profile, status)
    channels = np.empty((_CHANNELS, profile.trial_length))
    for c in range(_CHANNELS):
        shift = math.floor(rng.uniforms(1)[0] * _PHASE_SHIFT_RANGE)
        channels[c] = _channel(amp, freq, profile.trial_length, shift, profile.noise_std, rng)
    labels = np.full(profile.trial_length, status, dtype=np.int64)
    return SensorStream(profile.unit_id, trial_id, channels, labels)


def _generate_mixed_trial(
    profile: UnitProfile, onset_fraction: float, trial_id: str, rng: RngStream
) -> SensorStream:
    # Nominal samples 1..floor(f*L); the anomaly starts at sample floor(f*L)+1.
    length = profile.trial_length
    onset = math.floor(onset_fraction * length)
    if not 1 <= onset <= length - 1:
        raise ValueError(
            f"onset fraction {onset_fraction} leaves an empty status segment for length {length}"
        )
    amp_n, freq_n = _status_params(profile, NOMINAL)
    amp_a, freq_a = _status_params(profile, ANOMALY)
    channels = np.empty((_CHANNELS, length))
    t = np.arange(length, dtype=np.float64)
    for c in range(_CHANNELS):
        shift = math.floor(rng.uniforms(1)[0] * _PHASE_SHIFT_RANGE)
        values = np.where(
            t < onset,
            amp_n * np.sin(2.0 * math.pi * freq_n * (t + shift)),
            amp_a * np.sin(2.0 * math.pi * freq_a * (t + shift)),
        )
        if profile.noise_std > 0:
            values = values + sample_gaussian(rng, 0.0, profile.noise_std, length)
        channels[c] = values
    labels = np.where(t < onset, NOMINAL, ANOMALY).astype(np.int64)
    return SensorStream(profile.unit_id, trial_id, channels, labels)


def generate_scenario(cfg: ScenarioConfig) -> list[SensorStream]:
    """All streams of a scenario, deterministically from its seed.

    per_class_trials: every logical trial tK yields a tK-nominal and a
    tK-anomaly stream. mixed_trial: every trial tK is one stream that
    switches from nominal to anomalous at the onset fraction. Each stream
    draws from its own (unit, trial) derived stream, so trials can be
    generated in any order or in parallel.
    """
    streams = []
    for profile in cfg.units:
        for k in range(1, profile.trial_count + 1):
            if cfg.layout == "per_class_trials":
                for status, suffix in ((NOMINAL, "nominal"), (ANOMALY, "anomaly")):
                    trial_id = f"t{k}-{suffix}"
                    rng = stream_for(cfg.seed, f"{profile.unit_id}/{trial_id}")
                    streams.append(generate_trial(profile, status, trial_id, rng))
            else:
                trial_id = f"t{k}"
                rng = stream_for(cfg.seed, f"{profile.unit_id}/{trial_id}")
                streams.append(
                    _generate_mixed_trial(profile, cfg.anomaly_onset_fraction, trial_id, rng)
                )
    return streams
