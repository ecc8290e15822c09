"""
Expert-feature baselines for ECGLens
Statistical and wavelet features with logistic regression and MLP classifiers
"""
import logging
import warnings
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pywt
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import expit
from scipy.stats import entropy
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.feature_selection import VarianceThreshold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tensor, no_grad, relu, sigmoid
from .errors import DataValidationError, OutOfScopeError
from .layers import Linear
from .metrics import aggregate_reports, evaluate_predictions
from .schemas import BaselineConfig, CLASS_CODES, EcgRecord, MetricsReport
from .train import Adam, FoldSplit, bce_loss, select_thresholds
from .utils import spawn_rng

logger = logging.getLogger(__name__)

STAT_NAMES = ["mean", "std", "var", "min", "max", "p5", "p25", "p50", "p75", "p95"]
PERCENTILES = [5, 25, 50, 75, 95]
BAND_STATS = ["mean", "std", "max", "min", "entropy"]
TREE_MODELS = {"rf": "random forest", "gbt": "gradient-boosted trees"}


class FeatureVector(BaseModel):
    """Flat feature values with a parallel list of unique names."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    names: List[str]

    @model_validator(mode="after")
    def _consistent(self):
        if self.values.shape != (len(self.names),):
            raise ValueError(f"{self.values.shape[0]} values for {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(self.values)):
            bad = [n for n, v in zip(self.names, self.values) if not np.isfinite(v)]
            raise ValueError(f"non-finite feature values: {bad[:5]}")
        return self


# ============================================================================
# Feature Extraction
# ============================================================================

def lead_statistics(lead: np.ndarray) -> np.ndarray:
    """Mean, std, var, min, max and the 5/25/50/75/95th percentiles (linear interpolation)."""
    lead = np.asarray(lead, dtype=np.float64)
    return np.concatenate([
        [lead.mean(), lead.std(), lead.var(), lead.min(), lead.max()],
        np.percentile(lead, PERCENTILES),
    ])


def statistical_features(rec: EcgRecord) -> FeatureVector:
    """Ten statistics per lead, named `<lead>_<stat>`."""
    values = np.concatenate([lead_statistics(lead) for lead in rec.signal])
    names = [f"{lead}_{stat}" for lead in rec.lead_names for stat in STAT_NAMES]
    return FeatureVector(values=values, names=names)


def band_names(levels: int) -> List[str]:
    return [f"A{levels}"] + [f"D{level}" for level in range(levels, 0, -1)]


def dwt(signal: np.ndarray, wavelet: str = "db4", levels: int = 4) -> List[np.ndarray]:
    """
    Orthogonal multi-level DWT with periodic boundary handling.

    Returns:
        Bands [approx_L, detail_L, ..., detail_1]

    Raises:
        DataValidationError: If the signal is shorter than 2**levels or levels < 1
    """
    signal = np.asarray(signal, dtype=np.float64)
    if levels < 1:
        raise DataValidationError(f"levels must be >= 1, got {levels}")
    if len(signal) < 2 ** levels:
        raise DataValidationError(f"signal of length {len(signal)} too short for {levels} levels (needs {2 ** levels})")
    with warnings.catch_warnings():
        # pywt warns about boundary effects on short signals at deep levels
        warnings.simplefilter("ignore", UserWarning)
        return pywt.wavedec(signal, wavelet, mode="periodization", level=levels)


def shannon_entropy(band: np.ndarray) -> float:
    """Entropy (nats) of the normalized energy c_i^2 / sum c^2; an all-zero band gives 0."""
    energy = np.square(np.asarray(band, dtype=np.float64))
    if energy.sum() == 0:
        return 0.0
    return float(entropy(energy))


def band_statistics(band: np.ndarray) -> np.ndarray:
    return np.array([band.mean(), band.std(), band.max(), band.min(), shannon_entropy(band)])


def wavelet_features(rec: EcgRecord, wavelet: str = "db4", levels: int = 4) -> FeatureVector:
    """
    Full expert feature vector: per lead, the ten statistics followed by
    five statistics for each wavelet band (`<lead>_<band>_<stat>`).
    """
    values, names = [], []
    for lead_name, lead in zip(rec.lead_names, rec.signal):
        values.append(lead_statistics(lead))
        names += [f"{lead_name}_{stat}" for stat in STAT_NAMES]
        for band_name, band in zip(band_names(levels), dwt(lead, wavelet, levels)):
            values.append(band_statistics(band))
            names += [f"{lead_name}_{band_name}_{stat}" for stat in BAND_STATS]
    return FeatureVector(values=np.concatenate(values), names=names)


def feature_matrix(records: Sequence[EcgRecord], wavelet: str = "db4", levels: int = 4,
                   jobs: int = 1) -> pd.DataFrame:
    """Feature table indexed by record_id with the stable feature-name header."""
    if not records:
        raise DataValidationError("no records to extract features from")
    vectors = Parallel(n_jobs=jobs)(delayed(wavelet_features)(rec, wavelet, levels) for rec in records)
    names = vectors[0].names
    for rec, vec in zip(records, vectors):
        if vec.names != names:
            raise DataValidationError(f"record {rec.record_id} yields a different feature layout")
    frame = pd.DataFrame(np.stack([v.values for v in vectors]), index=[r.record_id for r in records],
                         columns=names)
    frame.index.name = "record_id"
    logger.info(f"Extracted {frame.shape[1]} features from {frame.shape[0]} records")
    return frame


# ============================================================================
# Classifiers
# ============================================================================

def _standardizer(X: np.ndarray, names: Optional[Sequence[str]] = None):
    """Fit VarianceThreshold + StandardScaler on training features, warning about dropped columns."""
    pipeline = make_pipeline(VarianceThreshold(threshold=0.0), StandardScaler()).fit(X)
    kept = pipeline[0].get_support()
    if not kept.all():
        dropped = np.flatnonzero(~kept)
        labels = [names[i] for i in dropped] if names is not None else [str(i) for i in dropped]
        logger.warning(f"Dropping {len(dropped)} zero-variance feature column(s): {', '.join(labels[:10])}")
    return pipeline


class LogisticBaseline(ClassifierMixin, BaseEstimator):
    """
    One-vs-rest logistic regression per class, full-batch gradient descent
    on L2-regularized binary cross-entropy (bias not regularized).

    The L2 term is applied as an implicit (proximal) step so any l2 >= 0 is stable.
    """

    def __init__(self, l2: float = 1e-3, lr: float = 0.1, epochs: int = 500, standardize: bool = True):
        self.l2 = l2
        self.lr = lr
        self.epochs = epochs
        self.standardize = standardize

    @staticmethod
    def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray,
                      l2: float) -> Tuple[float, np.ndarray, np.ndarray]:
        """
        Sum over classes of mean BCE plus (l2 / 2) * ||W||^2.

        Returns:
            Tuple (loss, dL/dW [F, C], dL/db [C])
        """
        z = X @ W + b
        n = len(X)
        loss = float(np.sum(np.logaddexp(0.0, z) - Y * z) / n + 0.5 * l2 * np.sum(W * W))
        residual = (expit(z) - Y) / n
        return loss, X.T @ residual + l2 * W, residual.sum(axis=0)

    def fit(self, X: np.ndarray, Y: np.ndarray, feature_names: Optional[Sequence[str]] = None):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) != len(Y) or len(X) == 0:
            raise DataValidationError(f"features ({len(X)}) and targets ({len(Y)}) must be non-empty and aligned")
        self.preprocessor_ = _standardizer(X, feature_names) if self.standardize else None
        Xs = self.preprocessor_.transform(X) if self.preprocessor_ is not None else X

        W = np.zeros((Xs.shape[1], Y.shape[1]))
        b = np.zeros(Y.shape[1])
        self.loss_curve_ = []
        for _ in range(self.epochs):
            loss, grad_W, grad_b = self.loss_and_grad(W, b, Xs, Y, 0.0)
            self.loss_curve_.append(loss + 0.5 * self.l2 * float(np.sum(W * W)))
            W = (W - self.lr * grad_W) / (1.0 + self.lr * self.l2)
            b = b - self.lr * grad_b
        self.coef_ = W
        self.intercept_ = b
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=np.float64)
        Xs = self.preprocessor_.transform(X) if self.preprocessor_ is not None else X
        return Xs @ self.coef_ + self.intercept_

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Per-class probabilities [N, C] (independent sigmoids)."""
        return expit(self.decision_function(X))

    def predict(self, X: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)


class MLPBaseline(ClassifierMixin, BaseEstimator):
    """One relu hidden layer and sigmoid outputs, trained full-batch with Adam on mean BCE."""

    def __init__(self, hidden_size: int = 64, epochs: int = 300, lr: float = 1e-3,
                 seed: int = 0, standardize: bool = True):
        self.hidden_size = hidden_size
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.standardize = standardize

    def _forward(self, X: Tensor) -> Tensor:
        return sigmoid(self.output_(relu(self.hidden_(X))))

    def fit(self, X: np.ndarray, Y: np.ndarray, feature_names: Optional[Sequence[str]] = None):
        if self.hidden_size < 1:
            raise DataValidationError(f"hidden_size must be >= 1, got {self.hidden_size}")
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) != len(Y) or len(X) == 0:
            raise DataValidationError(f"features ({len(X)}) and targets ({len(Y)}) must be non-empty and aligned")
        self.preprocessor_ = _standardizer(X, feature_names) if self.standardize else None
        Xs = Tensor(self.preprocessor_.transform(X) if self.preprocessor_ is not None else X)

        rng = spawn_rng(self.seed, "baseline")
        self.hidden_ = Linear(Xs.shape[1], self.hidden_size, rng)
        self.output_ = Linear(self.hidden_size, Y.shape[1], rng)
        optimizer = Adam(self.hidden_.parameters() + self.output_.parameters(), lr=self.lr)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            optimizer.zero_grad()
            loss = bce_loss(self._forward(Xs), Y)
            loss.backward()
            optimizer.step()
            self.loss_curve_.append(loss.item())
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        check_is_fitted(self, "output_")
        X = np.asarray(X, dtype=np.float64)
        Xs = self.preprocessor_.transform(X) if self.preprocessor_ is not None else X
        with no_grad():
            return self._forward(Tensor(Xs)).data

    def predict(self, X: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)


def train_logistic_baseline(X: np.ndarray, Y: np.ndarray, l2: float = 1e-3, epochs: int = 500,
                            lr: float = 0.1) -> LogisticBaseline:
    """Fit one-vs-rest logistic models; features are standardized inside the estimator."""
    return LogisticBaseline(l2=l2, lr=lr, epochs=epochs).fit(X, Y)


def train_mlp_baseline(X: np.ndarray, Y: np.ndarray, hidden_size: int = 64, epochs: int = 300,
                       lr: float = 1e-3, seed: int = 0) -> MLPBaseline:
    return MLPBaseline(hidden_size=hidden_size, epochs=epochs, lr=lr, seed=seed).fit(X, Y)


def make_baseline(name: str, cfg: BaselineConfig, seed: int = 0):
    """
    Build an untrained baseline by short name ("lr" or "mlp").

    Raises:
        OutOfScopeError: For tree ensembles ("rf", "gbt")
        ValueError: For any other unknown name
    """
    if name == "lr":
        return LogisticBaseline(l2=cfg.l2, lr=cfg.lr, epochs=cfg.epochs)
    if name == "mlp":
        return MLPBaseline(hidden_size=cfg.mlp_hidden, epochs=cfg.mlp_epochs, lr=cfg.mlp_lr, seed=seed)
    if name in TREE_MODELS:
        raise OutOfScopeError(
            f"baseline {name!r} ({TREE_MODELS[name]}) is out of scope: tree ensembles are not implemented; "
            f"use 'lr' or 'mlp'"
        )
    raise ValueError(f"unknown baseline {name!r}; expected 'lr' or 'mlp'")


class BaselineRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    reports: List[MetricsReport]
    aggregate: MetricsReport
    scores: pd.DataFrame


def cross_validate_baseline(name: str, features: pd.DataFrame, labels: np.ndarray, folds: FoldSplit,
                            cfg: BaselineConfig, seed: int = 0,
                            average_over: Optional[Sequence[str]] = None) -> BaselineRun:
    """
    Run a baseline through the same fold rotation as the deep model.

    Each round fits on the training folds, picks thresholds on the
    validation fold and reports on the test fold. Scores collect every
    record's test-fold probabilities. `average_over` restricts the AVG
    row to those classes, matching the deep model's reports.
    """
    position = {rid: i for i, rid in enumerate(features.index)}
    X = features.to_numpy(dtype=np.float64)
    scores = np.zeros((len(X), labels.shape[1]))
    reports = []
    for r in range(folds.k):
        train_ids, val_ids, test_ids = folds.roles(r)
        tr = [position[i] for i in train_ids]
        va = [position[i] for i in val_ids]
        te = [position[i] for i in test_ids]
        model = make_baseline(name, cfg, seed).fit(X[tr], labels[tr], feature_names=list(features.columns))
        thresholds = select_thresholds(model.predict_proba(X[va]), labels[va])
        scores[te] = model.predict_proba(X[te])
        reports.append(evaluate_predictions(scores[te], labels[te], thresholds.values, average_over=average_over))
        logger.info(f"Baseline {name} round {r}: test avg F1 {reports[-1].average.f1:.4f}")
    frame = pd.DataFrame(scores, index=features.index, columns=list(CLASS_CODES)[: labels.shape[1]])
    return BaselineRun(name=name, reports=reports, aggregate=aggregate_reports(reports), scores=frame)


def comparison_table(reports: Dict[str, MetricsReport]) -> pd.DataFrame:
    """Long table (model, class, f1): one row per class per model, AVG included."""
    rows = []
    for model, report in reports.items():
        for row in list(report.classes) + [report.average]:
            rows.append({"model": model, "class": row.name, "f1": row.f1})
    return pd.DataFrame(rows, columns=["model", "class", "f1"])
