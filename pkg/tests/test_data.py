import numpy as np
import pytest

from distilmon.data import (
    CsvParseError,
    DegenerateDataError,
    PipelineConfig,
    SensorStream,
    Standardizer,
    TimeWindow,
    WindowConfig,
    apply_standardizer,
    build_folds,
    fit_standardizer,
    ingest_csv,
    logical_trial,
    make_windows,
    reduce_channels,
    stream_to_windows,
    windows_to_array,
    write_csv,
)

HEADER = "unit_id,trial_id,t,ax,ay,az,label\n"


def write(tmp_path, body, name="data.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body, encoding="utf-8")
    return path


def stream_of(values, labels=None, unit="u1", trial="t1"):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    if labels is None:
        labels = np.ones(values.shape[1], dtype=np.int64)
    return SensorStream(unit, trial, values, np.asarray(labels))


class TestIngestCsv:
    def test_single_trial(self, tmp_path):
        path = write(tmp_path, "u1,t1,0,1.0,2.0,3.0,1\nu1,t1,1,4.0,5.0,6.0,1\nu1,t1,2,7,8,9,2\n")
        streams = ingest_csv(path)
        assert len(streams) == 1
        s = streams[0]
        assert s.length == 3
        assert s.channels[0].tolist() == [1.0, 4.0, 7.0]
        assert s.labels.tolist() == [1, 1, 2]

    def test_label_out_of_range_names_line(self, tmp_path):
        path = write(tmp_path, "u1,t1,0,1,2,3,1\nu1,t1,1,1,2,3,3\n")
        with pytest.raises(CsvParseError, match="line 3"):
            ingest_csv(path, num_classes=2)

    def test_interleaved_trials_are_grouped_and_ordered(self, tmp_path):
        rows = [
            "u1,t2,1,9,9,9,1",
            "u1,t1,0,1,1,1,1",
            "u1,t2,0,8,8,8,1",
            "u1,t1,2,3,3,3,1",
            "u1,t1,1,2,2,2,1",
            "u1,t2,2,7,7,7,1",
        ]
        path = write(tmp_path, "\n".join(rows) + "\n")
        streams = ingest_csv(path)
        assert [s.trial_id for s in streams] == ["t1", "t2"]
        assert streams[0].channels[0].tolist() == [1.0, 2.0, 3.0]
        assert streams[1].channels[0].tolist() == [8.0, 9.0, 7.0]

    def test_duplicate_sample_rejected(self, tmp_path):
        path = write(tmp_path, "u1,t1,0,1,2,3,1\nu1,t1,0,1,2,3,1\n")
        with pytest.raises(CsvParseError, match="duplicate"):
            ingest_csv(path)

    def test_non_numeric_cell_names_line(self, tmp_path):
        path = write(tmp_path, "u1,t1,0,1,zzz,3,1\n")
        with pytest.raises(CsvParseError, match="line 2.*ay"):
            ingest_csv(path)

    def test_missing_column_rejected(self, tmp_path):
        path = write(tmp_path, "u1,t1,0,1,2,1\n")
        with pytest.raises(CsvParseError, match="expected 7 fields"):
            ingest_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("unit,trial,t,ax,ay,az,label\nu1,t1,0,1,2,3,1\n", encoding="utf-8")
        with pytest.raises(CsvParseError, match="line 1"):
            ingest_csv(path)

    def test_gap_in_time_index_rejected(self, tmp_path):
        path = write(tmp_path, "u1,t1,0,1,2,3,1\nu1,t1,2,1,2,3,1\n")
        with pytest.raises(CsvParseError, match="gap"):
            ingest_csv(path)

    def test_round_trip_with_write_csv(self, tmp_path):
        stream = SensorStream(
            "u9",
            "t3",
            np.array([[0.125, -1.5], [2.0, 3.25], [4.5, -0.75]]),
            np.array([1, 2]),
        )
        path = tmp_path / "round.csv"
        with path.open("w", encoding="utf-8") as fh:
            write_csv([stream], fh)
        restored = ingest_csv(path)[0]
        assert np.array_equal(restored.channels, stream.channels)
        assert np.array_equal(restored.labels, stream.labels)


class TestReduceChannels:
    def test_magnitude_pythagorean(self):
        s = SensorStream("u", "t", np.array([[3.0], [4.0], [0.0]]), np.array([1]))
        out = reduce_channels(s, "magnitude")
        assert out.num_channels == 1
        assert out.channels[0, 0] == pytest.approx(5.0)

    def test_magnitude_of_zeros(self):
        s = SensorStream("u", "t", np.zeros((3, 4)), np.ones(4, dtype=int))
        assert np.all(reduce_channels(s, "magnitude").channels == 0.0)

    def test_single_selects_channel(self):
        s = SensorStream("u", "t", np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), np.ones(2, dtype=int))
        out = reduce_channels(s, "single", index=1)
        assert out.channels.tolist() == [[3.0, 4.0]]

    def test_single_out_of_range(self):
        s = SensorStream("u", "t", np.zeros((3, 2)), np.ones(2, dtype=int))
        with pytest.raises(ValueError):
            reduce_channels(s, "single", index=3)

    def test_keep_all_is_identity(self):
        s = SensorStream("u", "t", np.zeros((3, 2)), np.ones(2, dtype=int))
        assert reduce_channels(s, "keep_all") is s


class TestMakeWindows:
    def test_exact_fit_single_window(self):
        s = stream_of(np.arange(30.0))
        windows = make_windows(s, WindowConfig(30, 28))
        assert len(windows) == 1
        assert windows[0].origin == ("u1", "t1", 1)
        assert windows[0].values.shape == (1, 30)

    def test_second_window_starts_at_sample_three(self):
        s = stream_of(np.arange(40.0))
        windows = make_windows(s, WindowConfig(30, 28))
        assert windows[1].origin[2] == 3
        assert windows[1].values[0, 0] == 2.0  # sample 3, 1-based

    def test_900_samples_give_436_windows(self):
        s = stream_of(np.arange(900.0))
        assert len(make_windows(s, WindowConfig(30, 28))) == 436

    def test_consecutive_windows_share_v_samples(self):
        s = stream_of(np.arange(100.0))
        cfg = WindowConfig(30, 28)
        windows = make_windows(s, cfg)
        for a, b in zip(windows, windows[1:]):
            assert np.array_equal(a.values[0, cfg.step :], b.values[0, : cfg.n - cfg.step])

    def test_too_short_stream_rejected(self):
        with pytest.raises(ValueError, match="shorter"):
            make_windows(stream_of(np.arange(10.0)), WindowConfig(30, 28))

    def test_majority_label_ties_go_to_earlier_class(self):
        labels = [1] * 15 + [2] * 15
        s = stream_of(np.arange(30.0), labels)
        windows = make_windows(s, WindowConfig(30, 28), "majority")
        assert windows[0].label == 1

    def test_majority_label_counts(self):
        labels = [1] * 14 + [2] * 16
        s = stream_of(np.arange(30.0), labels)
        assert make_windows(s, WindowConfig(30, 28), "majority")[0].label == 2

    def test_strict_drops_mixed_windows(self):
        labels = [1] * 40 + [2] * 40
        s = stream_of(np.arange(80.0), labels)
        windows = make_windows(s, WindowConfig(20, 10), "strict")
        # starts: 1,11,21,31,41,51,61; only the window starting at 31 spans the change
        assert [w.origin[2] for w in windows] == [1, 11, 21, 41, 51, 61]
        assert all(w.label in (1, 2) for w in windows)

    def test_window_config_invariants(self):
        with pytest.raises(ValueError):
            WindowConfig(30, 30)
        with pytest.raises(ValueError):
            WindowConfig(0, 0)

    @pytest.mark.parametrize("n,v", [(30, 28), (10, 5), (7, 0)])
    def test_start_indices_are_arithmetic(self, n, v):
        s = stream_of(np.arange(200.0))
        windows = make_windows(s, WindowConfig(n, v))
        starts = [w.origin[2] for w in windows]
        assert starts == [1 + j * (n - v) for j in range(len(starts))]
        assert len(starts) == (200 - n) // (n - v) + 1


class TestStandardizer:
    def _windows(self, rng_seed=0, count=40, offset=3.0, scale=2.0):
        rng = np.random.default_rng(rng_seed)
        return [
            TimeWindow(offset + scale * rng.standard_normal((1, 30)), 1, ("u", "t", 1 + 2 * j))
            for j in range(count)
        ]

    def test_fit_set_becomes_zero_mean_unit_std(self):
        windows = self._windows()
        standardizer = fit_standardizer(windows)
        transformed = apply_standardizer(standardizer, windows)
        values, _ = windows_to_array(transformed)
        assert abs(values.mean()) < 1e-9
        assert abs(values.std() - 1.0) < 1e-9

    def test_not_idempotent_on_unnormalized_data(self):
        windows = self._windows(offset=10.0, scale=0.5)
        standardizer = fit_standardizer(windows)
        once = apply_standardizer(standardizer, windows)
        twice = apply_standardizer(standardizer, once)
        v_once, _ = windows_to_array(once)
        v_twice, _ = windows_to_array(twice)
        assert not np.allclose(v_once, v_twice)

    def test_far_test_data_stays_finite(self):
        standardizer = fit_standardizer(self._windows())
        wild = [TimeWindow(np.full((1, 30), 1e6), 2, ("u", "t", 1))]
        out = apply_standardizer(standardizer, wild)
        assert np.all(np.isfinite(out[0].values))
        assert np.all(np.abs(out[0].values) > 100)

    def test_zero_variance_channel_rejected(self):
        flat = [TimeWindow(np.ones((1, 30)), 1, ("u", "t", 1))] * 3
        with pytest.raises(DegenerateDataError, match="channel 0"):
            fit_standardizer(flat)

    def test_no_leakage_from_test_windows(self):
        train = self._windows(rng_seed=1)
        fitted = fit_standardizer(train)
        refitted = fit_standardizer(train)  # test data never enters the fit
        assert np.array_equal(fitted.mean, refitted.mean)
        assert np.array_equal(fitted.std, refitted.std)


class TestBuildFolds:
    def test_five_trials_five_folds(self):
        plan = build_folds(["t1", "t2", "t3", "t4", "t5"], ["t1", "t2"])
        assert len(plan.folds) == 5
        for fold in plan.folds:
            assert len(fold.train_trials) == 1
            assert len(fold.test_trials) == 4
            assert set(fold.train_trials).isdisjoint(fold.test_trials)
        assert plan.teacher_trials == ("t1", "t2")

    def test_two_trials(self):
        plan = build_folds(["a", "b"], [])
        assert [f.train_trials for f in plan.folds] == [("a",), ("b",)]
        assert [f.test_trials for f in plan.folds] == [("b",), ("a",)]

    def test_train_trials_cover_all_exactly_once(self):
        trials = ["t1", "t2", "t3"]
        plan = build_folds(trials, [])
        assert sorted(t for f in plan.folds for t in f.train_trials) == trials

    def test_single_trial_rejected(self):
        with pytest.raises(ValueError):
            build_folds(["only"], [])

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            build_folds(["a", "a"], [])


def test_logical_trial_strips_status_suffixes():
    assert logical_trial("t3-nominal") == "t3"
    assert logical_trial("t3-anomaly") == "t3"
    assert logical_trial("t3") == "t3"


def test_pipeline_is_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for trial in ("t1", "t2"):
        for t in range(64):
            ax, ay, az = (float(x) for x in rng.standard_normal(3))
            rows.append(f"u1,{trial},{t},{ax!r},{ay!r},{az!r},{1 if t < 32 else 2}")
    path = write(tmp_path, "\n".join(rows) + "\n")
    pipe = PipelineConfig(window=WindowConfig(16, 8))

    def run():
        streams = ingest_csv(path)
        windows = [w for s in streams for w in stream_to_windows(s, pipe)]
        standardizer = fit_standardizer(windows)
        values, labels = windows_to_array(apply_standardizer(standardizer, windows))
        return values, labels, [w.origin for w in windows]

    v1, l1, o1 = run()
    v2, l2, o2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(l1, l2)
    assert o1 == o2
