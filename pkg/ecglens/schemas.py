"""
Pydantic schemas for ECGLens
Domain records, run configuration sections and evaluation reports
"""
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

LEAD_NAMES: List[str] = ["I", "II", "III", "aVR", "aVL", "aVF",
                         "V1", "V2", "V3", "V4", "V5", "V6"]


class DiagnosticClass(str, Enum):
    """The nine diagnostic classes, in the fixed order used by label vectors."""
    SNR = "SNR"
    AF = "AF"
    IAVB = "IAVB"
    LBBB = "LBBB"
    RBBB = "RBBB"
    PAC = "PAC"
    PVC = "PVC"
    STD = "STD"
    STE = "STE"

    @property
    def index(self) -> int:
        return CLASS_CODES.index(self.value)

    @classmethod
    def from_index(cls, index: int) -> "DiagnosticClass":
        return cls(CLASS_CODES[index])


CLASS_CODES: List[str] = [c.value for c in DiagnosticClass]
N_CLASSES = len(CLASS_CODES)


def labels_to_vector(codes: List[str]) -> np.ndarray:
    """Multi-hot vector (length 9) for a list of class codes."""
    vec = np.zeros(N_CLASSES, dtype=np.float64)
    for code in codes:
        vec[DiagnosticClass(code).index] = 1.0
    return vec


def vector_to_labels(vec: np.ndarray) -> List[str]:
    return [CLASS_CODES[i] for i in np.flatnonzero(np.asarray(vec) > 0.5)]


def validate_lead_names(leads: List[str]) -> List[str]:
    unknown = [lead for lead in leads if lead not in LEAD_NAMES]
    if unknown:
        raise ValueError(f"unknown lead name(s) {unknown}; expected names from {LEAD_NAMES}")
    if len(set(leads)) != len(leads):
        raise ValueError(f"duplicate lead names in {leads}")
    return list(leads)


def validate_class_codes(codes: List[str]) -> List[str]:
    """Known, unique codes returned in label-vector order."""
    unknown = [c for c in codes if c not in CLASS_CODES]
    if unknown:
        raise ValueError(f"unknown class code(s) {unknown}; expected codes from {CLASS_CODES}")
    if not codes:
        raise ValueError("class list is empty")
    return [c for c in CLASS_CODES if c in set(codes)]


def class_columns(codes: Optional[List[str]]) -> Optional[List[int]]:
    """Label-vector columns for the codes; None passes through."""
    return None if codes is None else [DiagnosticClass(c).index for c in codes]


# ============================================================================
# Records & Manifests
# ============================================================================

class EcgRecord(BaseModel):
    """One patient's multi-lead waveform with metadata and multi-hot labels."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    record_id: str = Field(..., min_length=1)
    signal: np.ndarray = Field(..., description="[n_leads x n_samples] millivolts")
    fs: float = Field(..., gt=0, description="Sampling rate in Hz (metadata only)")
    lead_names: List[str]
    age: Optional[float] = Field(None, ge=0)
    sex: Optional[Literal["M", "F"]] = None
    labels: np.ndarray = Field(default_factory=lambda: np.zeros(N_CLASSES))

    @field_validator("signal", mode="before")
    @classmethod
    def _check_signal(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"signal must be 2-D [n_leads x n_samples], got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("signal must contain at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal contains NaN or Inf values")
        return arr

    @field_validator("lead_names")
    @classmethod
    def _check_leads(cls, v):
        if not 1 <= len(v) <= len(LEAD_NAMES):
            raise ValueError(f"expected 1..12 leads, got {len(v)}")
        return validate_lead_names(v)

    @field_validator("labels", mode="before")
    @classmethod
    def _check_labels(cls, v):
        arr = np.array(v, dtype=np.float64).reshape(-1)
        if arr.shape != (N_CLASSES,):
            raise ValueError(f"labels must have length {N_CLASSES}, got {arr.shape[0]}")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("labels must be multi-hot (0/1)")
        return arr

    @model_validator(mode="after")
    def _check_lead_count(self):
        if self.signal.shape[0] != len(self.lead_names):
            raise ValueError(
                f"signal has {self.signal.shape[0]} leads but {len(self.lead_names)} lead names"
            )
        return self

    @property
    def n_leads(self) -> int:
        return self.signal.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.fs

    @property
    def label_codes(self) -> List[str]:
        return vector_to_labels(self.labels)

    def replace(self, **changes) -> "EcgRecord":
        """Copy with changed fields, re-running validation."""
        data = {
            "record_id": self.record_id, "signal": self.signal, "fs": self.fs,
            "lead_names": self.lead_names, "age": self.age, "sex": self.sex,
            "labels": self.labels,
        }
        data.update(changes)
        return EcgRecord(**data)


class ManifestEntry(BaseModel):
    """One manifest row."""
    record_id: str = Field(..., min_length=1)
    path: str = Field(..., min_length=1, description="Relative to the manifest directory")
    age: Optional[float] = Field(None, ge=0)
    sex: Optional[Literal["M", "F"]] = None
    labels: List[str] = Field(default_factory=list)
    fs: Optional[float] = Field(None, gt=0)

    @field_validator("labels")
    @classmethod
    def _known_codes(cls, v):
        for code in v:
            if code not in CLASS_CODES:
                raise ValueError(f"unknown label code {code!r}")
        return v


class DatasetManifest(BaseModel):
    """Validated manifest: ordered entries plus the directory paths resolve against."""
    root: Path
    entries: List[ManifestEntry] = Field(default_factory=list)
    default_fs: float = Field(500.0, gt=0)

    @model_validator(mode="after")
    def _unique_ids(self):
        seen = set()
        for entry in self.entries:
            if entry.record_id in seen:
                raise ValueError(f"duplicate record_id {entry.record_id!r}")
            seen.add(entry.record_id)
        return self

    @property
    def record_ids(self) -> List[str]:
        return [e.record_id for e in self.entries]

    def entry(self, record_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.record_id == record_id:
                return e
        raise KeyError(record_id)

    def subset(self, record_ids: List[str]) -> "DatasetManifest":
        wanted = set(record_ids)
        return DatasetManifest(
            root=self.root,
            entries=[e for e in self.entries if e.record_id in wanted],
            default_fs=self.default_fs,
        )

    def label_matrix(self) -> np.ndarray:
        """[N x 9] multi-hot labels in entry order."""
        if not self.entries:
            return np.zeros((0, N_CLASSES))
        return np.stack([labels_to_vector(e.labels) for e in self.entries])

    def label_classes(self) -> List[str]:
        """Codes with at least one positive record, in label-vector order."""
        present = self.label_matrix().sum(axis=0) > 0
        return [code for code, hit in zip(CLASS_CODES, present) if hit]


# ============================================================================
# Configuration Sections
# ============================================================================

class AugmentConfig(BaseModel):
    """Amplitude scaling and temporal shifting applied to training records."""
    scale_min: float = Field(0.8, gt=0)
    scale_max: float = Field(1.2, gt=0)
    max_shift_frac: float = Field(0.1, ge=0, lt=1)
    seed: int = 0
    enabled: bool = True

    @model_validator(mode="after")
    def _ordered(self):
        if self.scale_min > self.scale_max:
            raise ValueError(f"scale_min ({self.scale_min}) must be <= scale_max ({self.scale_max})")
        return self


class ModelConfig(BaseModel):
    """Architecture of the residual 1D-CNN."""
    n_leads: int = Field(12, ge=1, le=12)
    nsteps: int = Field(15000, ge=1)
    n_classes: int = Field(N_CLASSES, ge=1)
    kernel_size: int = Field(15, ge=1)
    base_channels: int = Field(64, ge=1)
    n_blocks: int = Field(4, ge=1)
    dropout_p: float = Field(0.2, ge=0, lt=1)
    leads: Optional[List[str]] = Field(None, description="Lead subset fed to the input layer")

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, v):
        if v % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {v}")
        return v

    @field_validator("leads")
    @classmethod
    def _valid_leads(cls, v):
        return None if v is None else validate_lead_names(v)

    @model_validator(mode="after")
    def _lead_count(self):
        if self.leads is not None and len(self.leads) != self.n_leads:
            raise ValueError(f"leads {self.leads} do not match n_leads={self.n_leads}")
        return self

    @property
    def block_channels(self) -> List[int]:
        return [self.base_channels * 2 ** i for i in range(self.n_blocks)]

    @property
    def input_leads(self) -> List[str]:
        return self.leads if self.leads is not None else LEAD_NAMES[: self.n_leads]


class ResidualBlockSpec(BaseModel):
    in_channels: int = Field(..., ge=1)
    out_channels: int = Field(..., ge=1)
    stride: Literal[1, 2] = 2
    kernel_size: int = Field(15, ge=1)
    dropout_p: float = Field(0.2, ge=0, lt=1)

    @property
    def has_shortcut(self) -> bool:
        return self.in_channels != self.out_channels or self.stride != 1


class TrainConfig(BaseModel):
    """Optimizer and protocol hyperparameters."""
    learning_rate: float = Field(1e-4, gt=0)
    batch_size: int = Field(32, ge=1)
    max_epochs: int = Field(30, ge=0)
    seed: int = 0
    augmentation: AugmentConfig = Field(default_factory=AugmentConfig)
    leads: Optional[List[str]] = None
    nsteps: int = Field(15000, ge=1)
    average_over: Optional[List[str]] = Field(
        None, description="Classes entering validation average F1 and the AVG row; all nine when unset")

    @field_validator("leads")
    @classmethod
    def _valid_leads(cls, v):
        return None if v is None else validate_lead_names(v)

    @field_validator("average_over")
    @classmethod
    def _valid_classes(cls, v):
        return None if v is None else validate_class_codes(v)


class ThresholdSet(BaseModel):
    """Per-class decision thresholds in (0, 1)."""
    values: List[float] = Field(..., min_length=1)

    @field_validator("values")
    @classmethod
    def _open_interval(cls, v):
        for i, t in enumerate(v):
            if not 0.0 < t < 1.0:
                raise ValueError(f"threshold {i} = {t} is outside (0, 1)")
        return v

    @classmethod
    def constant(cls, value: float = 0.5, n_classes: int = N_CLASSES) -> "ThresholdSet":
        return cls(values=[value] * n_classes)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class ThresholdFile(BaseModel):
    """On-disk thresholds.json: class codes and their cutoffs in the same order."""
    classes: List[str]
    thresholds: List[float]

    @model_validator(mode="after")
    def _aligned(self):
        if len(self.classes) != len(self.thresholds):
            raise ValueError(f"{len(self.thresholds)} thresholds for {len(self.classes)} classes")
        return self


class ExplainConfig(BaseModel):
    mc_samples: int = Field(200, ge=1)
    background_size: int = Field(100, ge=1)
    mode: Literal["absolute", "signed"] = "absolute"
    leads_to_show: int = Field(2, ge=1)
    window_seconds: float = Field(10.0, gt=0)
    highlight_percentile: float = Field(95.0, ge=0, le=100)


class BaselineConfig(BaseModel):
    wavelet: Literal["haar", "db4"] = "db4"
    levels: int = Field(4, ge=1)
    l2: float = Field(1e-3, ge=0)
    lr: float = Field(0.1, gt=0)
    epochs: int = Field(500, ge=1)
    mlp_hidden: int = Field(64, ge=1)
    mlp_epochs: int = Field(300, ge=1)
    mlp_lr: float = Field(1e-3, gt=0)


class SyntheticConfig(BaseModel):
    """Desk-scale stand-in dataset parameters."""
    n_records: int = Field(600, ge=1)
    classes: List[str] = Field(default_factory=lambda: ["normal", "af", "pvc"], min_length=1)
    n_leads: int = Field(12, ge=1, le=12)
    n_samples: int = Field(5000, ge=1)
    fs: float = Field(500.0, gt=0)
    seed: int = 0
    rr_seconds: float = Field(0.8, gt=0)
    noise_mv: float = Field(0.02, ge=0)

    @model_validator(mode="after")
    def _enough_records(self):
        if self.n_records < len(self.classes):
            raise ValueError(
                f"n_records ({self.n_records}) must be >= number of classes ({len(self.classes)})"
            )
        return self


# ============================================================================
# Reports
# ============================================================================

class ClassMetrics(BaseModel):
    """One row of a metrics report."""
    name: str
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    auc: Optional[float] = Field(None, ge=0, le=1)
    accuracy: float = Field(..., ge=0, le=1)
    support: int = Field(0, ge=0, description="Positive targets in the evaluated set")


class MetricsReport(BaseModel):
    """Per-class rows, the AVG row and the thresholds that produced them."""
    classes: List[ClassMetrics]
    average: ClassMetrics
    thresholds: Optional[List[float]] = None
    averaged_classes: Optional[List[str]] = Field(None, description="Classes in the AVG row; all rows when None")

    def row(self, name: str) -> ClassMetrics:
        if name == self.average.name:
            return self.average
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=1)
    train_loss: float
    val_avg_f1: float = Field(..., ge=0, le=1)
