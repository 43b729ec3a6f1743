import math

import numpy as np
import pytest
from scipy import stats

from distilmon.data import PipelineConfig, WindowConfig, streams_to_windows
from distilmon.numerics import stream_for
from distilmon.synthesizer import (
    ANOMALY,
    NOMINAL,
    ScenarioConfig,
    UnitProfile,
    generate_scenario,
    generate_trial,
)


def profile(**overrides):
    base = dict(
        unit_id="u1",
        base_frequency=0.25,
        base_amplitude=1.0,
        noise_std=0.0,
        anomaly_amp_gain=2.0,
        anomaly_freq_shift=0.0,
        trial_count=2,
        trial_length=900,
    )
    base.update(overrides)
    return UnitProfile(**base)


def two_units(seed=7, layout="per_class_trials", **overrides):
    u1 = profile(unit_id="u1", trial_count=5, **overrides)
    u2 = profile(unit_id="u2", trial_count=5, base_frequency=0.115, **overrides)
    return ScenarioConfig(units=(u1, u2), rich_unit_id="u1", seed=seed, layout=layout)


class TestGenerateTrial:
    def test_noise_free_trial_is_exact_sinusoid(self):
        p = profile()
        rng = stream_for(3, "u1/t1")
        stream = generate_trial(p, NOMINAL, "t1", rng)
        # replay the channel phase draws: one uniform per channel when noiseless
        replay = stream_for(3, "u1/t1")
        t = np.arange(p.trial_length, dtype=np.float64)
        for c in range(3):
            shift = math.floor(replay.uniforms(1)[0] * 1024)
            expected = p.base_amplitude * np.sin(2.0 * math.pi * p.base_frequency * (t + shift))
            assert np.array_equal(stream.channels[c], expected)

    def test_noise_free_peak_equals_amplitude(self):
        # f = 1/4: whole-sample phase offsets keep samples on the peak lattice
        stream = generate_trial(profile(base_amplitude=2.5), NOMINAL, "t1", stream_for(0, "x"))
        assert abs(np.abs(stream.channels).max() - 2.5) < 1e-12

    def test_same_inputs_same_stream(self):
        p = profile(noise_std=0.3)
        a = generate_trial(p, ANOMALY, "t1", stream_for(9, "u1/t1"))
        b = generate_trial(p, ANOMALY, "t1", stream_for(9, "u1/t1"))
        assert np.array_equal(a.channels, b.channels)
        assert np.array_equal(a.labels, b.labels)

    def test_anomaly_rms_scales_with_gain(self):
        p = profile(anomaly_amp_gain=2.0, anomaly_freq_shift=0.0)
        nominal = generate_trial(p, NOMINAL, "t1", stream_for(1, "a"))
        anomaly = generate_trial(p, ANOMALY, "t1", stream_for(2, "b"))
        rms = lambda s: np.sqrt((s.channels**2).mean())
        assert anomaly.labels[0] == ANOMALY
        assert rms(anomaly) / rms(nominal) == pytest.approx(2.0, abs=1e-9)

    def test_labels_constant_per_status(self):
        stream = generate_trial(profile(), ANOMALY, "t1", stream_for(0, "x"))
        assert set(stream.labels.tolist()) == {ANOMALY}

    def test_invalid_status_rejected(self):
        with pytest.raises(ValueError):
            generate_trial(profile(), 3, "t1", stream_for(0, "x"))


class TestUnitProfileValidation:
    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            profile(noise_std=-0.1)

    def test_nonpositive_counts_rejected(self):
        with pytest.raises(ValueError):
            profile(trial_count=0)
        with pytest.raises(ValueError):
            profile(trial_length=0)


class TestScenarioConfig:
    def test_rich_unit_must_exist(self):
        with pytest.raises(ValueError):
            ScenarioConfig(units=(profile(), profile(unit_id="u2")), rich_unit_id="nope", seed=0)

    def test_rich_unit_needs_most_trials(self):
        poor = profile(unit_id="u2", trial_count=9)
        with pytest.raises(ValueError, match="most trials"):
            ScenarioConfig(units=(profile(trial_count=5), poor), rich_unit_id="u1", seed=0)

    def test_needs_two_units(self):
        with pytest.raises(ValueError):
            ScenarioConfig(units=(profile(),), rich_unit_id="u1", seed=0)


class TestGenerateScenario:
    def test_per_class_layout_counts(self):
        streams = generate_scenario(two_units())
        # 5 trials x 2 statuses x 2 units
        assert len(streams) == 20
        ids = {(s.unit_id, s.trial_id) for s in streams}
        assert len(ids) == 20
        assert ("u1", "t3-nominal") in ids and ("u2", "t5-anomaly") in ids

    def test_deterministic_in_config(self):
        a = generate_scenario(two_units(seed=123))
        b = generate_scenario(two_units(seed=123))
        assert all(np.array_equal(x.channels, y.channels) for x, y in zip(a, b))

    def test_seed_changes_data(self):
        a = generate_scenario(two_units(seed=123))
        b = generate_scenario(two_units(seed=124))
        assert not np.array_equal(a[0].channels, b[0].channels)

    def test_mixed_trial_switch_sample(self):
        cfg = two_units(layout="mixed_trial")
        streams = generate_scenario(cfg)
        assert len(streams) == 10  # one stream per trial
        stream = streams[0]
        onset = math.floor(0.425 * 900)  # 382 nominal samples
        assert stream.labels[onset - 1] == NOMINAL
        assert stream.labels[onset] == ANOMALY
        # first anomalous sample is 383, 1-based
        assert onset + 1 == 383

    def test_mixed_trial_amplitude_steps_up(self):
        cfg = two_units(layout="mixed_trial")
        stream = generate_scenario(cfg)[0]
        nominal_rms = np.sqrt((stream.channels[:, :300] ** 2).mean())
        anomaly_rms = np.sqrt((stream.channels[:, 500:] ** 2).mean())
        assert anomaly_rms > 1.5 * nominal_rms


def dominant_frequency(window) -> float:
    x = window.values[0] - window.values[0].mean()
    power = np.abs(np.fft.rfft(x)) ** 2
    return float(np.argmax(power[1:]) + 1) / x.size


class TestCrossUnitShift:
    def test_periodogram_peak_tracks_base_frequency(self):
        # unit2 runs 15% faster; its magnitude windows should show a higher
        # dominant frequency on average
        u1 = profile(unit_id="u1", trial_count=5, base_frequency=0.10, noise_std=0.2)
        u2 = profile(unit_id="u2", trial_count=5, base_frequency=0.115, noise_std=0.2)
        cfg = ScenarioConfig(units=(u1, u2), rich_unit_id="u1", seed=7)
        streams = generate_scenario(cfg)
        pipe = PipelineConfig(window=WindowConfig(30, 28))
        nominal = lambda unit: [
            w
            for s in streams
            if s.unit_id == unit and s.trial_id.endswith("nominal")
            for w in streams_to_windows([s], pipe)
        ]
        f1 = [dominant_frequency(w) for w in nominal("u1")]
        f2 = [dominant_frequency(w) for w in nominal("u2")]
        assert np.mean(f2) > np.mean(f1)
        # and the two samples are statistically distinguishable
        result = stats.mannwhitneyu(f1, f2)
        assert result.pvalue < 1e-3
