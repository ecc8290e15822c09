"""
Pydantic models for the run configuration sections
"""
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ecglens.schemas import (AugmentConfig, ModelConfig, SyntheticConfig, TrainConfig, validate_class_codes,
                             validate_lead_names)


# ============================================================================
# Sections
# ============================================================================

class DataSection(BaseModel):
    """Where records come from and how they are shaped for the network"""
    model_config = ConfigDict(extra="forbid")

    manifest: Optional[str] = None
    fs: float = Field(500.0, gt=0, description="Sampling rate for records without an fs manifest column")
    nsteps: int = Field(15000, ge=1)
    leads: Optional[List[str]] = Field(None, description="Lead subset; all record leads when unset")
    folds: int = Field(10, ge=3)
    average_over: Optional[List[str]] = Field(
        None, description="Classes in the AVG row; the dataset's label vocabulary when unset")

    @field_validator("leads", mode="before")
    @classmethod
    def _split_leads(cls, v):
        if isinstance(v, str):
            v = [item.strip() for item in v.split(",") if item.strip()]
        return None if v is None else validate_lead_names(v)

    @field_validator("average_over", mode="before")
    @classmethod
    def _split_classes(cls, v):
        if isinstance(v, str):
            v = [item.strip() for item in v.split(",") if item.strip()]
        return None if v is None else validate_class_codes(v)


class ModelSection(BaseModel):
    """Architecture knobs; lead count and length follow the data section"""
    model_config = ConfigDict(extra="forbid")

    kernel_size: int = 15
    base_channels: int = Field(64, ge=1)
    n_blocks: int = Field(4, ge=1)
    dropout_p: float = Field(0.2, ge=0, lt=1)


class TrainSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-4, gt=0)
    batch_size: int = Field(32, ge=1)
    max_epochs: int = Field(30, ge=0)


class SynthSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_records: int = Field(600, ge=1)
    classes: List[str] = Field(default_factory=lambda: ["normal", "af", "pvc"], min_length=1)
    n_leads: int = Field(12, ge=1, le=12)
    n_samples: int = Field(5000, ge=1)

    @field_validator("classes", mode="before")
    @classmethod
    def _split_classes(cls, v):
        if isinstance(v, str):
            v = [item.strip() for item in v.split(",") if item.strip()]
        return v


# ============================================================================
# Derived engine configs
# ============================================================================

def build_model_config(model: ModelSection, data: DataSection, leads: List[str]) -> ModelConfig:
    """Architecture for the given input leads at the data section's length"""
    return ModelConfig(
        n_leads=len(leads), nsteps=data.nsteps, leads=list(leads), kernel_size=model.kernel_size,
        base_channels=model.base_channels, n_blocks=model.n_blocks, dropout_p=model.dropout_p,
    )


def build_train_config(train: TrainSection, augment: AugmentConfig, data: DataSection,
                       leads: List[str], seed: int, average_over: Optional[List[str]] = None) -> TrainConfig:
    return TrainConfig(
        learning_rate=train.learning_rate, batch_size=train.batch_size, max_epochs=train.max_epochs,
        seed=seed, augmentation=augment, leads=list(leads), nsteps=data.nsteps, average_over=average_over,
    )


def build_synthetic_config(synth: SynthSection, fs: float, seed: int) -> SyntheticConfig:
    return SyntheticConfig(n_records=synth.n_records, classes=synth.classes, n_leads=synth.n_leads,
                           n_samples=synth.n_samples, fs=fs, seed=seed)

