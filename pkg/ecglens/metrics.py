"""
Multi-label classification metrics for ECGLens
Confusion cells, precision/recall/F1/accuracy, rank-based ROC AUC and reports
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.stats import rankdata

from .errors import DataValidationError, ShapeError
from .schemas import CLASS_CODES, ClassMetrics, MetricsReport

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["Precision", "Recall", "F1", "AUC", "Accuracy"]
AVG_ROW = "AVG"


class ConfusionCells(BaseModel):
    """Per-class TP/TN/FP/FN counts."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tp: np.ndarray
    tn: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @model_validator(mode="after")
    def _consistent(self):
        totals = self.tp + self.tn + self.fp + self.fn
        if totals.size and not np.all(totals == totals[0]):
            raise ValueError("TP+TN+FP+FN must equal N for every class")
        if any(np.any(a < 0) for a in (self.tp, self.tn, self.fp, self.fn)):
            raise ValueError("confusion counts must be non-negative")
        return self

    @property
    def n(self) -> int:
        return int(self.tp[0] + self.tn[0] + self.fp[0] + self.fn[0]) if self.tp.size else 0


def _as_binary(a: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim == 1:
        arr = arr[:, None]
    if not np.all((arr == 0) | (arr == 1)):
        raise DataValidationError(f"{name} must be binary (0/1)")
    return arr.astype(np.int64)


def safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Elementwise num/den with 0/0 (and x/0) defined as 0."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den != 0)


def confusion_counts(preds: np.ndarray, targets: np.ndarray) -> ConfusionCells:
    """
    Count TP/TN/FP/FN per class column.

    Raises:
        ShapeError: If shapes differ
        DataValidationError: If either input is not binary
    """
    p = _as_binary(preds, "preds")
    t = _as_binary(targets, "targets")
    if p.shape != t.shape:
        raise ShapeError(f"preds {p.shape} and targets {t.shape} differ")
    return ConfusionCells(
        tp=((p == 1) & (t == 1)).sum(axis=0),
        tn=((p == 0) & (t == 0)).sum(axis=0),
        fp=((p == 1) & (t == 0)).sum(axis=0),
        fn=((p == 0) & (t == 1)).sum(axis=0),
    )


def per_class_metrics(cells: ConfusionCells) -> Dict[str, np.ndarray]:
    """
    Accuracy, recall, precision and F1 per class; every 0/0 is 0.

    Precision is TP / (TP + FP).
    """
    precision = safe_divide(cells.tp, cells.tp + cells.fp)
    recall = safe_divide(cells.tp, cells.tp + cells.fn)
    return {
        "precision": precision,
        "recall": recall,
        "f1": safe_divide(2 * precision * recall, precision + recall),
        "accuracy": safe_divide(cells.tp + cells.tn, cells.tp + cells.tn + cells.fp + cells.fn),
    }


def f1_per_class(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return per_class_metrics(confusion_counts(preds, targets))["f1"]


def roc_auc(scores: np.ndarray, targets: np.ndarray) -> Optional[float]:
    """
    Exact ROC AUC as the Mann-Whitney statistic (ties count one half).

    Returns:
        AUC in [0, 1], or None when targets contain a single class
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(targets).reshape(-1)
    if s.shape != y.shape:
        raise ShapeError(f"scores {s.shape} and targets {y.shape} differ")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_metrics(rows: Sequence[ClassMetrics], n_classes: int = len(CLASS_CODES),
                    average_over: Optional[Sequence[str]] = None) -> ClassMetrics:
    """
    Unweighted mean of the class rows.

    Every row counts, including classes without positive targets (their
    F1 is 0 by convention). Pass `average_over` to average an explicit
    subset of classes instead, e.g. the label vocabulary of a dataset that
    only covers some classes. AUC skips rows where it is undefined.

    Raises:
        DataValidationError: If the number of class rows is not n_classes,
            or `average_over` names a class without a row
    """
    if len(rows) != n_classes:
        raise DataValidationError(f"expected {n_classes} class rows, got {len(rows)}")
    included = list(rows)
    if average_over is not None:
        names = [r.name for r in rows]
        unknown = [c for c in average_over if c not in names]
        if unknown or not average_over:
            raise DataValidationError(f"cannot average over {list(average_over)}: no rows for {unknown}")
        wanted = set(average_over)
        included = [r for r in rows if r.name in wanted]
    unsupported = [r.name for r in included if r.support == 0]
    if unsupported:
        logger.warning(f"Classes without positive targets (F1 0 in AVG): {', '.join(unsupported)}")

    aucs = [r.auc for r in included if r.auc is not None]
    missing_auc = [r.name for r in included if r.auc is None]
    if missing_auc:
        logger.warning(f"AUC undefined for {', '.join(missing_auc)}; excluded from AVG AUC")

    return ClassMetrics(
        name=AVG_ROW,
        precision=float(np.mean([r.precision for r in included])),
        recall=float(np.mean([r.recall for r in included])),
        f1=float(np.mean([r.f1 for r in included])),
        auc=float(np.mean(aucs)) if aucs else None,
        accuracy=float(np.mean([r.accuracy for r in included])),
        support=int(sum(r.support for r in included)),
    )


def evaluate_predictions(scores: np.ndarray, targets: np.ndarray, thresholds: Sequence[float],
                         class_names: Sequence[str] = CLASS_CODES,
                         average_over: Optional[Sequence[str]] = None) -> MetricsReport:
    """
    Build the full report for probability scores at the given thresholds.

    Args:
        scores: [N, C] probabilities
        targets: [N, C] multi-hot labels
        thresholds: Per-class cutoffs; positive iff score >= threshold
        class_names: Row names
        average_over: Classes entering the AVG row (all rows when omitted)

    Returns:
        MetricsReport with C rows, the AVG row and the thresholds
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    t = np.asarray(thresholds, dtype=np.float64)
    if scores.shape != targets.shape or scores.ndim != 2 or t.shape != (scores.shape[1],):
        raise ShapeError(f"scores {scores.shape}, targets {targets.shape}, thresholds {t.shape} disagree")
    preds = (scores >= t[None, :]).astype(np.int64)
    values = per_class_metrics(confusion_counts(preds, targets))
    rows = []
    for i, name in enumerate(class_names):
        rows.append(ClassMetrics(
            name=name,
            precision=float(values["precision"][i]),
            recall=float(values["recall"][i]),
            f1=float(values["f1"][i]),
            auc=roc_auc(scores[:, i], targets[:, i]),
            accuracy=float(values["accuracy"][i]),
            support=int(targets[:, i].sum()),
        ))
    return MetricsReport(classes=rows, average=average_metrics(rows, len(class_names), average_over),
                         thresholds=[float(v) for v in t],
                         averaged_classes=list(average_over) if average_over is not None else None)


def aggregate_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """
    Mean of per-round per-class metrics; AVG recomputed from the mean rows.

    AUC is averaged over the rounds where it is defined; support is summed.
    The AVG row covers the same classes as the first report.
    """
    if not reports:
        raise DataValidationError("no reports to aggregate")
    names = [c.name for c in reports[0].classes]
    rows = []
    for i, name in enumerate(names):
        per_round = [r.classes[i] for r in reports]
        aucs = [c.auc for c in per_round if c.auc is not None]
        rows.append(ClassMetrics(
            name=name,
            precision=float(np.mean([c.precision for c in per_round])),
            recall=float(np.mean([c.recall for c in per_round])),
            f1=float(np.mean([c.f1 for c in per_round])),
            auc=float(np.mean(aucs)) if aucs else None,
            accuracy=float(np.mean([c.accuracy for c in per_round])),
            support=int(sum(c.support for c in per_round)),
        ))
    averaged = reports[0].averaged_classes
    return MetricsReport(classes=rows, average=average_metrics(rows, len(names), averaged),
                         averaged_classes=averaged)


def multilabel_confusion_matrix(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """
    Row-normalized 2x2 matrix per class: rows are truth (0, 1), columns prediction (0, 1).

    A truth row with no samples is NaN.
    """
    cells = confusion_counts(preds, targets)
    counts = np.stack([
        np.stack([cells.tn, cells.fp], axis=-1),
        np.stack([cells.fn, cells.tp], axis=-1),
    ], axis=1).astype(np.float64)  # [C, 2, 2]
    totals = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), np.nan)


def confusion_table(matrices: np.ndarray, class_names: Sequence[str] = CLASS_CODES) -> pd.DataFrame:
    """Flatten per-class matrices into one row per class (TN, FP, FN, TP rates)."""
    flat = matrices.reshape(len(matrices), 4)
    table = pd.DataFrame(flat, index=list(class_names), columns=["TN_rate", "FP_rate", "FN_rate", "TP_rate"])
    table.index.name = "class"
    return table


def report_to_frame(report: MetricsReport) -> pd.DataFrame:
    rows = list(report.classes) + [report.average]
    frame = pd.DataFrame(
        [[r.precision, r.recall, r.f1, r.auc, r.accuracy] for r in rows],
        index=[r.name for r in rows],
        columns=REPORT_COLUMNS,
    )
    frame.index.name = "class"
    return frame


def write_report_csv(report: MetricsReport, path: Union[str, Path]) -> Path:
    """Rows are the classes then AVG; an undefined AUC is an empty cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report_to_frame(report).to_csv(path, lineterminator="\n")
    return path


def read_report_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, index_col="class")


def format_report(report: MetricsReport) -> str:
    """Fixed-width text rendering for logs and the console."""
    return report_to_frame(report).to_string(float_format=lambda v: f"{v:.3f}", na_rep="-")


def average_f1(preds: np.ndarray, targets: np.ndarray, columns: Optional[Sequence[int]] = None) -> float:
    """Mean F1 over all classes, or over the given class columns; silent variant for training loops."""
    f1 = f1_per_class(preds, targets)
    return float(f1.mean() if columns is None else f1[list(columns)].mean())
