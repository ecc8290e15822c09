"""
Pytest configuration and fixtures for ECGLens tests
"""
import numpy as np
import pytest

from ecglens.schemas import (LEAD_NAMES, AugmentConfig, EcgRecord, ModelConfig, SyntheticConfig,
                             TrainConfig, labels_to_vector)
from ecglens.synthetic import generate_synthetic_dataset


@pytest.fixture
def rng():
    """Seeded generator for test data"""
    return np.random.default_rng(1234)


@pytest.fixture
def make_record():
    """Factory for small records with given labels"""
    def _make(record_id="r1", n_leads=2, n_samples=100, fs=100.0, codes=("SNR",), signal=None,
              age=50.0, sex="M"):
        if signal is None:
            t = np.arange(n_samples) / fs
            signal = np.stack([np.sin(2 * np.pi * (k + 1) * t) for k in range(n_leads)])
        return EcgRecord(record_id=record_id, signal=signal, fs=fs,
                         lead_names=LEAD_NAMES[: np.asarray(signal).shape[0]],
                         age=age, sex=sex, labels=labels_to_vector(list(codes)))
    return _make


@pytest.fixture
def tiny_model_config():
    """Two-lead, two-block network small enough for gradient checks"""
    return ModelConfig(n_leads=2, nsteps=32, kernel_size=3, base_channels=2, n_blocks=2,
                       dropout_p=0.0, leads=["I", "II"])


@pytest.fixture
def tiny_train_config():
    return TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=2, seed=0, leads=["I", "II"], nsteps=32,
                       augmentation=AugmentConfig(enabled=False))


@pytest.fixture
def synthetic_config():
    """Twelve short two-lead records across three classes"""
    return SyntheticConfig(n_records=12, classes=["normal", "af", "pvc"], n_leads=2, n_samples=500,
                           fs=250.0, seed=7)


@pytest.fixture
def synthetic_dataset(tmp_path, synthetic_config):
    """Synthetic dataset on disk; returns (manifest, directory)"""
    out_dir = tmp_path / "synthetic"
    manifest = generate_synthetic_dataset(synthetic_config, out_dir)
    return manifest, out_dir
