"""
Tests for ecglens/metrics.py
"""
import itertools

import numpy as np
import pytest

from ecglens.errors import DataValidationError, ShapeError
from ecglens.metrics import (AVG_ROW, REPORT_COLUMNS, aggregate_reports, average_f1, average_metrics,
                             confusion_counts, confusion_table, evaluate_predictions, format_report,
                             multilabel_confusion_matrix, per_class_metrics, read_report_csv, roc_auc,
                             write_report_csv)
from ecglens.schemas import CLASS_CODES, N_CLASSES, ClassMetrics

REFERENCE_ROWS = {
    # precision, recall, f1, auc, accuracy
    "SNR": (0.814, 0.800, 0.805, 0.974, 0.948),
    "AF": (0.920, 0.918, 0.919, 0.988, 0.971),
    "IAVB": (0.868, 0.865, 0.864, 0.987, 0.974),
    "LBBB": (0.844, 0.894, 0.866, 0.980, 0.991),
    "RBBB": (0.911, 0.942, 0.926, 0.987, 0.959),
    "PAC": (0.756, 0.720, 0.735, 0.949, 0.952),
    "PVC": (0.869, 0.839, 0.851, 0.976, 0.971),
    "STD": (0.808, 0.826, 0.814, 0.971, 0.953),
    "STE": (0.603, 0.504, 0.535, 0.923, 0.974),
}


def brute_force_cells(preds, targets, c):
    cells = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
    for p, t in zip(preds[:, c], targets[:, c]):
        key = ("t" if p == t else "f") + ("p" if p == 1 else "n")
        cells[key] += 1
    return cells


def all_pairs_auc(scores, targets):
    pos = [s for s, t in zip(scores, targets) if t == 1]
    neg = [s for s, t in zip(scores, targets) if t == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def make_row(name, precision=0.5, recall=0.5, f1=0.5, auc=0.5, accuracy=0.5, support=1):
    return ClassMetrics(name=name, precision=precision, recall=recall, f1=f1, auc=auc, accuracy=accuracy,
                        support=support)


class TestConfusionAndRates:
    """Test cell counts and derived rates against enumeration"""

    def test_matches_enumeration(self, rng):
        """Test 500 random multi-label pairs against a per-sample count"""
        preds = (rng.random((500, N_CLASSES)) < 0.3).astype(int)
        targets = (rng.random((500, N_CLASSES)) < 0.3).astype(int)
        cells = confusion_counts(preds, targets)
        rates = per_class_metrics(cells)
        for c in range(N_CLASSES):
            oracle = brute_force_cells(preds, targets, c)
            assert (cells.tp[c], cells.tn[c], cells.fp[c], cells.fn[c]) == (
                oracle["tp"], oracle["tn"], oracle["fp"], oracle["fn"])
            precision = oracle["tp"] / (oracle["tp"] + oracle["fp"])
            recall = oracle["tp"] / (oracle["tp"] + oracle["fn"])
            assert rates["precision"][c] == precision
            assert rates["recall"][c] == recall
            assert rates["f1"][c] == pytest.approx(2 * precision * recall / (precision + recall), abs=1e-15)
            assert rates["accuracy"][c] == (oracle["tp"] + oracle["tn"]) / 500

    def test_zero_denominators_are_zero(self):
        """Test no positives predicted or present gives 0 rather than NaN"""
        rates = per_class_metrics(confusion_counts(np.zeros((4, 1)), np.zeros((4, 1))))
        assert rates["precision"][0] == 0.0
        assert rates["recall"][0] == 0.0
        assert rates["f1"][0] == 0.0
        assert rates["accuracy"][0] == 1.0

    def test_non_binary_rejected(self):
        """Test values other than 0/1"""
        with pytest.raises(DataValidationError):
            confusion_counts(np.array([[2]]), np.array([[1]]))

    def test_shape_mismatch(self):
        """Test predictions and targets must align"""
        with pytest.raises(ShapeError):
            confusion_counts(np.zeros((3, 2)), np.zeros((3, 1)))


class TestRocAuc:
    """Test the rank-based AUC"""

    def test_matches_all_pairs(self, rng):
        """Test against the all-pairs statistic, ties included"""
        for _ in range(20):
            scores = np.round(rng.random(60), 1)
            targets = (rng.random(60) < 0.4).astype(int)
            if 0 < targets.sum() < 60:
                assert roc_auc(scores, targets) == pytest.approx(all_pairs_auc(scores, targets), abs=1e-12)

    def test_perfect_and_inverted(self):
        """Test separable scores give 1 and reversed scores 0"""
        targets = np.array([0, 0, 1, 1])
        assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), targets) == 1.0
        assert roc_auc(np.array([0.9, 0.8, 0.2, 0.1]), targets) == 0.0

    def test_single_class_undefined(self):
        """Test AUC is None without both classes"""
        assert roc_auc(np.array([0.3, 0.4]), np.array([1, 1])) is None


class TestAverageMetrics:
    """Test the AVG row"""

    def test_reference_table_averages(self):
        """Test the reference per-class rows reproduce their rounded averages"""
        rows = [make_row(name, *values) for name, values in REFERENCE_ROWS.items()]
        avg = average_metrics(rows)
        assert avg.name == AVG_ROW
        assert avg.f1 == pytest.approx(0.813, abs=5e-4)
        assert avg.precision == pytest.approx(0.821, abs=5e-4)
        assert avg.recall == pytest.approx(0.812, abs=5e-4)
        # per-class AUCs are themselves rounded
        assert avg.auc == pytest.approx(0.970, abs=1e-3)
        assert avg.accuracy == pytest.approx(0.966, abs=5e-4)

    def test_identical_rows(self):
        """Test the average of identical rows is that row"""
        avg = average_metrics([make_row(c, 0.3, 0.4, 0.2, 0.9, 0.7) for c in CLASS_CODES])
        assert (avg.precision, avg.recall, avg.f1, avg.auc, avg.accuracy) == pytest.approx((0.3, 0.4, 0.2, 0.9, 0.7))

    def test_unsupported_classes_count_as_rows(self):
        """Test rows without positive targets still enter the unweighted mean"""
        rows = [make_row(c, f1=1.0, support=1) for c in CLASS_CODES[:3]]
        rows += [make_row(c, f1=0.0, auc=None, support=0) for c in CLASS_CODES[3:]]
        avg = average_metrics(rows)
        assert avg.f1 == pytest.approx(np.mean([r.f1 for r in rows]), abs=1e-12)
        assert avg.f1 == pytest.approx(1 / 3, abs=1e-12)
        assert avg.auc == 0.5

    def test_two_supported_classes_report(self, rng):
        """Test a report with positives in two classes averages all nine rows"""
        scores = rng.random((20, N_CLASSES))
        targets = np.zeros((20, N_CLASSES), dtype=int)
        targets[:8, 0] = 1
        targets[8:14, 1] = 1
        report = evaluate_predictions(scores, targets, [0.5] * N_CLASSES)
        assert report.average.f1 == pytest.approx(np.mean([c.f1 for c in report.classes]), abs=1e-12)
        assert report.average.precision == pytest.approx(np.mean([c.precision for c in report.classes]), abs=1e-12)
        assert report.average.accuracy == pytest.approx(np.mean([c.accuracy for c in report.classes]), abs=1e-12)

    def test_explicit_class_subset(self, rng):
        """Test average_over restricts the AVG row to the named classes and is kept through aggregation"""
        scores = rng.random((20, N_CLASSES))
        targets = (rng.random((20, N_CLASSES)) < 0.5).astype(int)
        subset = ["SNR", "AF", "PVC"]
        report = evaluate_predictions(scores, targets, [0.5] * N_CLASSES, average_over=subset)
        assert report.average.f1 == pytest.approx(np.mean([report.row(c).f1 for c in subset]), abs=1e-12)
        assert report.averaged_classes == subset
        agg = aggregate_reports([report, report])
        assert agg.averaged_classes == subset
        assert agg.average.f1 == pytest.approx(report.average.f1, abs=1e-12)
        preds = (scores >= 0.5).astype(int)
        assert average_f1(preds, targets, columns=[0, 1, 6]) == pytest.approx(report.average.f1, abs=1e-12)

    def test_unknown_subset_class(self):
        """Test average_over must name existing rows"""
        with pytest.raises(DataValidationError):
            average_metrics([make_row(c) for c in CLASS_CODES], average_over=["SNR", "XYZ"])

    def test_wrong_row_count(self):
        """Test the number of class rows is checked"""
        with pytest.raises(DataValidationError):
            average_metrics([make_row("SNR")])


class TestReports:
    """Test report building, aggregation and serialization"""

    def test_evaluate_predictions(self, rng):
        """Test rows, thresholds and AVG consistency"""
        scores = rng.random((50, N_CLASSES))
        targets = (rng.random((50, N_CLASSES)) < 0.5).astype(int)
        report = evaluate_predictions(scores, targets, [0.5] * N_CLASSES)
        assert [c.name for c in report.classes] == CLASS_CODES
        assert report.thresholds == [0.5] * N_CLASSES
        assert report.average.f1 == pytest.approx(np.mean([c.f1 for c in report.classes]), abs=1e-12)
        preds = (scores >= 0.5).astype(int)
        assert report.average.f1 == pytest.approx(average_f1(preds, targets), abs=1e-12)

    def test_threshold_is_inclusive(self):
        """Test a score equal to the threshold predicts positive"""
        scores = np.full((2, N_CLASSES), 0.4)
        targets = np.ones((2, N_CLASSES), dtype=int)
        report = evaluate_predictions(scores, targets, [0.4] * N_CLASSES)
        assert report.row("SNR").recall == 1.0

    def test_aggregate_averages_rounds(self):
        """Test per-class rows are means over rounds and AUC skips undefined rounds"""
        a = evaluate_predictions(np.array([[0.9] * N_CLASSES, [0.1] * N_CLASSES]),
                                 np.array([[1] * N_CLASSES, [0] * N_CLASSES]), [0.5] * N_CLASSES)
        b = evaluate_predictions(np.array([[0.9] * N_CLASSES, [0.8] * N_CLASSES]),
                                 np.array([[1] * N_CLASSES, [1] * N_CLASSES]), [0.5] * N_CLASSES)
        agg = aggregate_reports([a, b])
        assert agg.row("AF").accuracy == pytest.approx(1.0)
        assert agg.row("AF").auc == pytest.approx(1.0)
        assert agg.row("AF").support == 3

    def test_aggregate_nothing(self):
        """Test aggregating no reports is an error"""
        with pytest.raises(DataValidationError):
            aggregate_reports([])

    def test_csv_layout(self, rng, tmp_path):
        """Test nine class rows then AVG with the report columns"""
        scores = rng.random((20, N_CLASSES))
        targets = np.zeros((20, N_CLASSES), dtype=int)
        targets[:10, 0] = 1
        report = evaluate_predictions(scores, targets, [0.5] * N_CLASSES)
        frame = read_report_csv(write_report_csv(report, tmp_path / "report.csv"))
        assert list(frame.index) == CLASS_CODES + [AVG_ROW]
        assert list(frame.columns) == REPORT_COLUMNS
        assert np.isnan(frame.loc["AF", "AUC"])
        assert frame.loc[AVG_ROW, "F1"] == pytest.approx(report.average.f1)
        assert AVG_ROW in format_report(report)


class TestMultilabelConfusion:
    """Test the row-normalized per-class matrices"""

    def test_rows_sum_to_one(self, rng):
        """Test each truth row is a distribution"""
        preds = (rng.random((40, N_CLASSES)) < 0.5).astype(int)
        targets = (rng.random((40, N_CLASSES)) < 0.5).astype(int)
        matrices = multilabel_confusion_matrix(preds, targets)
        assert matrices.shape == (N_CLASSES, 2, 2)
        np.testing.assert_allclose(matrices.sum(axis=2), 1.0)

    def test_empty_truth_row_is_nan(self):
        """Test a class with no positives has a NaN positive row"""
        preds = np.array([[0], [1]])
        targets = np.array([[0], [0]])
        matrix = multilabel_confusion_matrix(preds, targets)[0]
        np.testing.assert_allclose(matrix[0], [0.5, 0.5])
        assert np.all(np.isnan(matrix[1]))

    def test_table_layout(self):
        """Test the flat table has one row per class"""
        table = confusion_table(np.zeros((N_CLASSES, 2, 2)))
        assert list(table.index) == CLASS_CODES
        assert list(table.columns) == ["TN_rate", "FP_rate", "FN_rate", "TP_rate"]
