"""
Training protocol for ECGLens
BCE loss, Adam, fold rotation, per-class threshold selection and cross-validation
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from sklearn.model_selection import KFold

from .autodiff import Tensor, binary_cross_entropy
from .checkpoint import CheckpointMeta, save_checkpoint
from .data import augment_batch, load_records, stack_records
from .errors import ConfigMismatchError, DataValidationError, ShapeError
from .layers import Parameter
from .metrics import (average_f1, aggregate_reports, evaluate_predictions,
                      multilabel_confusion_matrix, write_report_csv)
from .model import EcgResNet, build_network
from .schemas import (CLASS_CODES, DatasetManifest, EcgRecord, EpochRecord, MetricsReport,
                      ModelConfig, ThresholdSet, ThresholdFile, TrainConfig, class_columns)
from .utils import chunks, dump_json, spawn_rng, stream_seed

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
THRESHOLD_GRID = np.arange(1, 100) / 100.0


def bce_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """
    Mean binary cross-entropy over batch and classes, probabilities clamped to [1e-7, 1 - 1e-7].

    Raises:
        ShapeError: If probs and targets differ in shape
    """
    return binary_cross_entropy(probs, targets, eps=BCE_EPS)


# ============================================================================
# Optimizer
# ============================================================================

class AdamState(BaseModel):
    """First and second moment estimates, one array per parameter."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: List[np.ndarray]
    v: List[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, t: int = 1):
    """
    Bias-corrected Adam update, applied in place.

    Args:
        params: Parameter arrays (modified in place)
        grads: Gradients, same shapes as params
        state: Moment estimates (modified in place)
        lr: Learning rate
        beta1: First moment decay
        beta2: Second moment decay
        eps: Denominator epsilon
        t: Step number, starting at 1
    """
    if t < 1:
        raise ValueError(f"Adam step number must be >= 1, got {t}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and Adam state have different lengths")
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


class Adam:
    """Adam over a list of Parameters; missing gradients count as zero."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.lr,
                  beta1=self.betas[0], beta2=self.betas[1], eps=self.eps, t=self.t)


# ============================================================================
# Folds & Thresholds
# ============================================================================

class FoldSplit(BaseModel):
    """Fold assignment per record and the rotation of train/validation/test roles."""
    k: int = Field(..., ge=2)
    record_ids: List[str]
    assignments: Dict[str, int]

    def fold(self, index: int) -> List[str]:
        return [rid for rid in self.record_ids if self.assignments[rid] == index]

    def fold_sizes(self) -> List[int]:
        return [len(self.fold(i)) for i in range(self.k)]

    def roles(self, round_index: int) -> Tuple[List[str], List[str], List[str]]:
        """(train, validation, test) ids: test is fold r, validation fold (r + 1) mod k."""
        test_fold = round_index % self.k
        val_fold = (round_index + 1) % self.k
        train = [rid for rid in self.record_ids if self.assignments[rid] not in (test_fold, val_fold)]
        return train, self.fold(val_fold), self.fold(test_fold)


def make_folds(manifest: Union[DatasetManifest, Sequence[str]], k: int = 10, seed: int = 0) -> FoldSplit:
    """
    Shuffle records into k folds whose sizes differ by at most one.

    Raises:
        DataValidationError: If there are fewer records than folds
    """
    ids = manifest.record_ids if isinstance(manifest, DatasetManifest) else list(manifest)
    if k < 2:
        raise DataValidationError(f"need at least 2 folds, got {k}")
    if len(ids) < k:
        raise DataValidationError(f"dataset too small: {len(ids)} records for {k} folds")
    splitter = KFold(n_splits=k, shuffle=True, random_state=stream_seed(seed, "folds"))
    assignments = {}
    for fold, (_, test_idx) in enumerate(splitter.split(np.arange(len(ids)))):
        for i in test_idx:
            assignments[ids[i]] = fold
    return FoldSplit(k=k, record_ids=ids, assignments=assignments)


def f1_by_threshold(scores: np.ndarray, targets: np.ndarray,
                    grid: np.ndarray = THRESHOLD_GRID) -> np.ndarray:
    """F1 for every (class, grid threshold) pair; prediction positive iff score >= t."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets) == 1
    if scores.shape != targets.shape or scores.ndim != 2:
        raise ShapeError(f"scores {scores.shape} and targets {targets.shape} differ")
    preds = scores[:, :, None] >= grid[None, None, :]  # [N, C, G]
    truth = targets[:, :, None]
    tp = (preds & truth).sum(axis=0)
    fp = (preds & ~truth).sum(axis=0)
    fn = (~preds & truth).sum(axis=0)
    denom = 2 * tp + fp + fn
    return np.divide(2.0 * tp, denom, out=np.zeros(denom.shape), where=denom > 0)


def select_thresholds(scores: np.ndarray, targets: np.ndarray) -> ThresholdSet:
    """
    Per-class threshold on the 0.01..0.99 grid maximizing F1; ties go to the smallest threshold.

    Raises:
        DataValidationError: If there are no samples
    """
    if len(scores) < 1:
        raise DataValidationError("threshold selection needs at least one sample")
    best = f1_by_threshold(scores, targets).argmax(axis=1)
    return ThresholdSet(values=[float(THRESHOLD_GRID[i]) for i in best])


# ============================================================================
# Training
# ============================================================================

class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    network: EcgResNet
    thresholds: ThresholdSet
    history: List[EpochRecord]
    best_epoch: int = 0
    best_val_f1: float = 0.0


def write_history_csv(history: Sequence[EpochRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [(h.epoch, h.train_loss, h.val_avg_f1) for h in history],
        columns=["epoch", "train_loss", "val_avg_F1"],
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _check_inputs(x: np.ndarray, model_cfg: ModelConfig, what: str):
    if len(x) == 0:
        raise DataValidationError(f"{what} set is empty")
    if x.shape[1:] != (model_cfg.n_leads, model_cfg.nsteps):
        raise ConfigMismatchError(
            f"{what} data is {x.shape[1:]} but the model expects ({model_cfg.n_leads}, {model_cfg.nsteps})"
        )


def train_arrays(x_train: np.ndarray, y_train: np.ndarray, x_val: np.ndarray, y_val: np.ndarray,
                 model_cfg: ModelConfig, train_cfg: TrainConfig, round_index: int = 0) -> TrainResult:
    """
    Train on preprocessed arrays and keep the best validation snapshot.

    Each epoch shuffles, augments training batches only, then scores the
    validation set in eval mode, picks thresholds on it and records its
    average F1. The snapshot with the strictly highest validation average
    F1 is restored at the end.

    Args:
        x_train, y_train: [N, leads, nsteps] inputs and [N, 9] labels
        x_val, y_val: Validation arrays
        model_cfg: Architecture
        train_cfg: Optimizer and protocol settings
        round_index: Cross-validation round (keys the seed streams)

    Returns:
        TrainResult
    """
    _check_inputs(x_train, model_cfg, "training")
    _check_inputs(x_val, model_cfg, "validation")

    seed = train_cfg.seed
    net = build_network(model_cfg, seed, keys=(round_index,))
    optimizer = Adam(net.parameters(), lr=train_cfg.learning_rate)
    shuffle_rng = spawn_rng(seed, "shuffle", round_index)
    augment_rng = spawn_rng(seed, "augment", round_index, train_cfg.augmentation.seed)

    columns = class_columns(train_cfg.average_over)
    history: List[EpochRecord] = []
    best_state = None
    best_f1 = -1.0
    best_epoch = 0
    best_thresholds = None

    for epoch in range(1, train_cfg.max_epochs + 1):
        net.train()
        order = shuffle_rng.permutation(len(x_train))
        total = 0.0
        for start, stop in chunks(len(order), train_cfg.batch_size):
            idx = order[start:stop]
            batch = augment_batch(x_train[idx], train_cfg.augmentation, augment_rng)
            optimizer.zero_grad()
            loss = bce_loss(net(Tensor(batch)), y_train[idx])
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
        train_loss = total / len(x_train)

        val_scores = net.predict_proba(x_val)
        thresholds = select_thresholds(val_scores, y_val)
        val_f1 = average_f1((val_scores >= thresholds.as_array()).astype(int), y_val, columns)
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_avg_f1=val_f1))
        logger.info(
            f"Round {round_index} epoch {epoch}/{train_cfg.max_epochs} - "
            f"loss {train_loss:.4f} - val avg F1 {val_f1:.4f}"
        )
        if val_f1 > best_f1:
            best_f1, best_epoch = val_f1, epoch
            best_state = net.state_dict()
            best_thresholds = thresholds

    if best_state is not None:
        net.load_state_dict(best_state)
    else:
        # no epochs run: thresholds come from the untrained scores
        val_scores = net.predict_proba(x_val)
        best_thresholds = select_thresholds(val_scores, y_val)
        best_f1 = average_f1((val_scores >= best_thresholds.as_array()).astype(int), y_val, columns)
    net.eval()
    return TrainResult(network=net, thresholds=best_thresholds, history=history,
                       best_epoch=best_epoch, best_val_f1=best_f1)


def train_model(train_records: Sequence[EcgRecord], val_records: Sequence[EcgRecord],
                model_cfg: ModelConfig, train_cfg: TrainConfig, round_index: int = 0) -> TrainResult:
    """
    Train the network on records (lead selection and length fixing applied here).

    Raises:
        DataValidationError: Empty or overlapping train/validation sets
    """
    if not train_records:
        raise DataValidationError("training set is empty")
    if not val_records:
        raise DataValidationError("validation set is empty")
    overlap = {r.record_id for r in train_records} & {r.record_id for r in val_records}
    if overlap:
        raise DataValidationError(f"train and validation sets share records: {sorted(overlap)[:5]}")
    x_train, y_train = stack_records(train_records, train_cfg.nsteps, train_cfg.leads)
    x_val, y_val = stack_records(val_records, train_cfg.nsteps, train_cfg.leads)
    return train_arrays(x_train, y_train, x_val, y_val, model_cfg, train_cfg, round_index)


# ============================================================================
# Cross-Validation
# ============================================================================

class RoundResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    round_index: int
    report: MetricsReport
    history: List[EpochRecord]
    thresholds: ThresholdSet
    best_epoch: int
    best_val_f1: float
    test_confusion: np.ndarray
    test_ids: List[str]


class CrossValidationResult(BaseModel):
    rounds: List[RoundResult]
    aggregate: MetricsReport
    best_round: int


def _round_dir(out_dir: Path, round_index: int) -> Path:
    return out_dir / f"round_{round_index:02d}"


def _run_round(round_index: int, folds: FoldSplit, x: np.ndarray, y: np.ndarray, ids: List[str],
               model_cfg: ModelConfig, train_cfg: TrainConfig, lead_names: List[str],
               out_dir: Optional[Path]) -> RoundResult:
    position = {rid: i for i, rid in enumerate(ids)}
    train_ids, val_ids, test_ids = folds.roles(round_index)
    tr = [position[r] for r in train_ids]
    va = [position[r] for r in val_ids]
    te = [position[r] for r in test_ids]

    result = train_arrays(x[tr], y[tr], x[va], y[va], model_cfg, train_cfg, round_index)
    # the test fold is touched only after snapshot selection
    test_scores = result.network.predict_proba(x[te])
    thresholds = result.thresholds.as_array()
    report = evaluate_predictions(test_scores, y[te], thresholds, average_over=train_cfg.average_over)
    confusion = multilabel_confusion_matrix((test_scores >= thresholds).astype(int), y[te])
    logger.info(f"Round {round_index}: best epoch {result.best_epoch}, "
                f"val avg F1 {result.best_val_f1:.4f}, test avg F1 {report.average.f1:.4f}")

    if out_dir is not None:
        rdir = _round_dir(out_dir, round_index)
        save_checkpoint(result.network, CheckpointMeta(
            epoch=result.best_epoch, seed=train_cfg.seed, thresholds=result.thresholds.values,
            round_index=round_index, folds=folds.k, val_avg_f1=result.best_val_f1,
            lead_names=lead_names,
        ), rdir / "checkpoint.ckpt")
        write_history_csv(result.history, rdir / "history.csv")
        dump_json(ThresholdFile(classes=list(CLASS_CODES), thresholds=result.thresholds.values).model_dump(),
                  rdir / "thresholds.json")
        write_report_csv(report, rdir / "test_report.csv")

    return RoundResult(round_index=round_index, report=report, history=result.history,
                       thresholds=result.thresholds, best_epoch=result.best_epoch,
                       best_val_f1=result.best_val_f1, test_confusion=confusion, test_ids=test_ids)


def cross_validate(manifest: DatasetManifest, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   k: int = 10, jobs: int = 1, out_dir: Optional[Union[str, Path]] = None,
                   records: Optional[Sequence[EcgRecord]] = None,
                   rounds: Optional[Sequence[int]] = None) -> CrossValidationResult:
    """
    Run k rounds rotating fold roles and aggregate the test-fold reports.

    Args:
        manifest: Dataset manifest
        model_cfg: Architecture
        train_cfg: Training settings
        k: Number of folds (>= 3 so every role is non-empty)
        jobs: Rounds run in parallel (joblib)
        out_dir: If set, each round writes checkpoint, history, thresholds and report
        records: Pre-loaded records in manifest order (loaded when omitted)
        rounds: Subset of round indices to run (all k when omitted; [0] is a single split)

    Returns:
        CrossValidationResult with per-round reports, the aggregate and the
        round with the best validation average F1
    """
    if k < 3:
        raise DataValidationError(f"cross-validation needs k >= 3 (train/validation/test), got {k}")
    records = load_records(manifest) if records is None else list(records)
    x, y = stack_records(records, train_cfg.nsteps, train_cfg.leads)
    if x.shape[1] != model_cfg.n_leads:
        raise ConfigMismatchError(f"data has {x.shape[1]} leads, model expects {model_cfg.n_leads}")
    ids = [r.record_id for r in records]
    lead_names = list(train_cfg.leads) if train_cfg.leads else list(records[0].lead_names)
    folds = make_folds(ids, k=k, seed=train_cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    logger.info(f"Cross-validation: {len(ids)} records, {k} folds, sizes {folds.fold_sizes()}, jobs={jobs}")

    selected = list(range(k)) if rounds is None else sorted(set(rounds))
    bad = [r for r in selected if not 0 <= r < k]
    if bad or not selected:
        raise DataValidationError(f"rounds must be a non-empty subset of 0..{k - 1}, got {list(rounds)}")
    results = Parallel(n_jobs=jobs)(
        delayed(_run_round)(r, folds, x, y, ids, model_cfg, train_cfg, lead_names, out)
        for r in selected
    )
    aggregate = aggregate_reports([r.report for r in results])
    best = max(results, key=lambda r: (r.best_val_f1, -r.round_index))
    logger.info(f"Cross-validation done: aggregate avg F1 {aggregate.average.f1:.4f}, best round {best.round_index}")
    return CrossValidationResult(rounds=results, aggregate=aggregate, best_round=best.round_index)
