import io

import numpy as np
import pytest

from distilmon.evaluation import (
    ConfusionMatrix,
    MetricsReport,
    confusion,
    f_score,
    metrics,
    render_summary_table,
    summarize_folds,
    write_fold_csv,
)


class TestConfusion:
    def test_perfect_predictions_are_diagonal(self):
        cm = confusion([1, 2, 1, 2], [1, 2, 1, 2], 2)
        assert np.array_equal(cm.counts, [[2, 0], [0, 2]])

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            confusion([], [], 2)

    def test_hand_counted_two_class(self):
        # preds [1,2,2,1] vs truths [1,2,1,1]: TP(class2)=1, FP=1, FN=0, TN=2
        cm = confusion([1, 2, 2, 1], [1, 2, 1, 1], 2)
        report = metrics(cm)
        assert cm.counts[1, 1] == 1  # TP
        assert cm.counts[0, 1] == 1  # FP
        assert cm.counts[1, 0] == 0  # FN
        assert cm.counts[0, 0] == 2  # TN
        assert report.accuracy == pytest.approx(3 / 4)
        assert report.precision == pytest.approx(1 / 2)
        assert report.recall == pytest.approx(1.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            confusion([1, 2], [1], 2)

    def test_out_of_range_labels_rejected(self):
        with pytest.raises(ValueError):
            confusion([1, 3], [1, 2], 2)

    def test_order_invariance(self):
        preds = [1, 2, 2, 1, 2]
        truths = [1, 1, 2, 2, 2]
        a = metrics(confusion(preds, truths, 2))
        b = metrics(confusion(preds[::-1], truths[::-1], 2))
        assert a == b


class TestMetrics:
    def test_paper_case1_kd_row(self):
        # published precision 0.808 / recall 0.810 reproduce F = 0.809
        assert f_score(0.808, 0.810) == pytest.approx(0.809, abs=0.0005)

    def test_paper_case2_kd_row(self):
        assert f_score(0.748, 0.875) == pytest.approx(0.807, abs=0.0005)

    def test_equal_precision_recall_is_identity(self):
        for p in (0.1, 0.5, 0.93):
            assert f_score(p, p) == pytest.approx(p)

    def test_zero_denominator_conventions(self):
        # nothing predicted or true for the positive class
        cm = ConfusionMatrix(np.array([[4, 0], [0, 0]]), positive_class=2)
        report = metrics(cm)
        assert report.precision == 0.0
        assert report.recall == 0.0
        assert report.f_score == 0.0

    def test_two_class_accuracy_identity(self):
        cm = confusion([1, 2, 2, 2, 1], [1, 1, 2, 2, 2], 2)
        report = metrics(cm)
        tp = cm.counts[1, 1]
        tn = cm.counts[0, 0]
        assert report.accuracy == pytest.approx((tp + tn) / cm.total)

    def test_harmonic_identity_holds_on_emitted_reports(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            preds = rng.integers(1, 3, size=40)
            truths = rng.integers(1, 3, size=40)
            report = metrics(confusion(preds, truths, 2))
            if report.precision + report.recall > 0:
                expected = 2 * report.precision * report.recall / (report.precision + report.recall)
                assert abs(report.f_score - expected) < 1e-12
            else:
                assert report.f_score == 0.0
            assert 0.0 <= report.accuracy <= 1.0

    def test_positive_class_selects_anchor(self):
        counts = np.array([[5, 1], [2, 8]])
        anchored_on_1 = metrics(ConfusionMatrix(counts, positive_class=1))
        assert anchored_on_1.precision == pytest.approx(5 / 7)
        assert anchored_on_1.recall == pytest.approx(5 / 6)


class TestSummarizeFolds:
    def test_identical_folds_zero_std(self):
        report = MetricsReport(0.8, 0.7, 0.9, 0.7875)
        summary = summarize_folds([report, report, report])
        assert summary.mean == report
        assert summary.std.accuracy == 0.0

    def test_two_point_population_std(self):
        a = MetricsReport(0.8, 0.8, 0.8, 0.8)
        b = MetricsReport(0.9, 0.9, 0.9, 0.9)
        summary = summarize_folds([a, b])
        assert summary.mean.accuracy == pytest.approx(0.85)
        assert summary.std.accuracy == pytest.approx(0.05)

    def test_single_fold(self):
        report = MetricsReport(0.6, 0.5, 0.7, 0.583)
        summary = summarize_folds([report])
        assert summary.mean == report
        assert summary.std.accuracy == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize_folds([])


class TestEmission:
    def test_fold_csv_layout(self):
        buffer = io.StringIO()
        write_fold_csv([("student_kd", 0, MetricsReport(0.5, 0.25, 0.75, 0.375))], buffer)
        lines = buffer.getvalue().strip().splitlines()
        assert lines[0] == "model,fold,accuracy,precision,recall,f_score"
        assert lines[1] == "student_kd,0,0.5,0.25,0.75,0.375"

    def test_summary_table_has_mean_std_cells(self):
        summary = summarize_folds(
            [MetricsReport(0.8, 0.8, 0.8, 0.8), MetricsReport(0.9, 0.9, 0.9, 0.9)]
        )
        table = render_summary_table([("Student network with KD", summary)])
        assert "0.850 (0.050)" in table
        assert "Methods" in table and "F-score" in table
