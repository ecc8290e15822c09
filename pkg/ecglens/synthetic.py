"""
Synthetic ECG generator for ECGLens
Quasi-periodic Gaussian P/QRS/T beats with class-specific morphology
"""
import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Tuple, Union

import numpy as np

from .data import write_manifest, write_record
from .errors import DataValidationError, EcgLensError
from .schemas import (LEAD_NAMES, DatasetManifest, EcgRecord, ManifestEntry,
                      SyntheticConfig, labels_to_vector)
from .utils import spawn_rng

logger = logging.getLogger(__name__)

# Synthetic class tag -> diagnostic code
CLASS_TAGS: Dict[str, str] = {
    "normal": "SNR",
    "snr": "SNR",
    "af": "AF",
    "iavb": "IAVB",
    "lbbb": "LBBB",
    "rbbb": "RBBB",
    "pac": "PAC",
    "pvc": "PVC",
    "std": "STD",
    "ste": "STE",
}

# (offset from R peak in s, amplitude in mV, gaussian width in s)
WAVES = {
    "P": (-0.16, 0.15, 0.025),
    "Q": (-0.03, -0.10, 0.010),
    "R": (0.00, 1.00, 0.012),
    "S": (0.03, -0.20, 0.010),
    "T": (0.28, 0.30, 0.050),
}

PVC_AMPLITUDE = 2.6
PVC_PROBABILITY = 0.15
PAC_PROBABILITY = 0.2


class Beat(NamedTuple):
    r_time: float
    kind: str  # "normal", "pvc" or "pac"


def _beat_schedule(tag: str, duration: float, cfg: SyntheticConfig,
                   rng: np.random.Generator) -> List[Beat]:
    rr = cfg.rr_seconds
    beats: List[Beat] = []
    t = float(rng.uniform(0.1, rr))
    pending_pause = 1.0
    while t < duration:
        kind = "normal"
        if tag == "pvc" and beats and rng.random() < PVC_PROBABILITY:
            kind = "pvc"
        elif tag == "pac" and beats and rng.random() < PAC_PROBABILITY:
            kind = "pac"
        if kind != "normal" and beats[-1].kind != "normal":
            kind = "normal"
        if kind in ("pvc", "pac"):
            # ectopic beat arrives early
            t = beats[-1].r_time + 0.65 * rr
            if t >= duration:
                break
        beats.append(Beat(t, kind))
        if tag == "af":
            step = rr * rng.uniform(0.6, 1.4)
        else:
            step = rr * (1.0 + rng.uniform(-0.01, 0.01))
        if kind == "pvc":
            pending_pause = 1.35
        step *= pending_pause
        pending_pause = 1.0
        t += step

    # guarantee the defining ectopic beat on short records
    if tag in ("pvc", "pac") and len(beats) > 2 and not any(b.kind == tag for b in beats):
        mid = len(beats) // 2
        beats[mid] = Beat(beats[mid - 1].r_time + 0.65 * rr, tag)
    return beats


def _waves_for_beat(tag: str, beat: Beat) -> List[Tuple[float, float, float]]:
    """Return (center, amplitude, width) triples for one beat."""
    r = beat.r_time
    if beat.kind == "pvc":
        return [
            (r, PVC_AMPLITUDE, 0.040),
            (r + 0.07, -0.40, 0.030),
            (r + 0.32, -0.50, 0.080),
        ]

    waves = dict(WAVES)
    if tag == "af":
        waves.pop("P")
    elif tag == "iavb":
        waves["P"] = (-0.30, 0.15, 0.025)
    elif tag == "lbbb":
        waves["R"] = (-0.015, 0.80, 0.022)
        waves["R2"] = (0.020, 0.75, 0.022)
        waves["S"] = (0.07, -0.10, 0.015)
        waves["T"] = (0.30, -0.30, 0.060)
    elif tag == "rbbb":
        waves["S"] = (0.035, -0.30, 0.020)
        waves["R2"] = (0.075, 0.50, 0.014)
    elif tag == "std":
        waves["ST"] = (0.14, -0.20, 0.050)
    elif tag == "ste":
        waves["ST"] = (0.14, 0.25, 0.050)
    if beat.kind == "pac":
        waves["P"] = (-0.12, -0.10, 0.020)
    return [(r + off, amp, width) for off, amp, width in waves.values()]


def synthesize_signal(tag: str, cfg: SyntheticConfig,
                      rng: np.random.Generator) -> Tuple[np.ndarray, List[Beat]]:
    """
    Render one [n_leads x n_samples] waveform.

    Args:
        tag: Synthetic class tag (see CLASS_TAGS)
        cfg: Generator configuration
        rng: Per-record generator

    Returns:
        Tuple (signal in mV, beat schedule)
    """
    if tag not in CLASS_TAGS:
        raise DataValidationError(f"unknown synthetic class {tag!r}; expected one of {sorted(CLASS_TAGS)}")

    n = cfg.n_samples
    t = np.arange(n) / cfg.fs
    beats = _beat_schedule(tag, n / cfg.fs, cfg, rng)

    waves = np.array([w for b in beats for w in _waves_for_beat(tag, b)]).reshape(-1, 3)
    template = np.zeros(n)
    if len(waves):
        centers, amps, widths = waves[:, 0:1], waves[:, 1:2], waves[:, 2:3]
        template = (amps * np.exp(-0.5 * ((t[None, :] - centers) / widths) ** 2)).sum(axis=0)

    if tag == "af":
        freqs = rng.uniform(4.0, 8.0, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        template = template + 0.03 * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)

    lead_names = LEAD_NAMES[: cfg.n_leads]
    gains = rng.uniform(0.6, 1.4, size=cfg.n_leads)
    gains[[i for i, name in enumerate(lead_names) if name == "aVR"]] *= -1.0

    wander_f = rng.uniform(0.15, 0.3, size=cfg.n_leads)
    wander_phase = rng.uniform(0, 2 * np.pi, size=cfg.n_leads)
    wander = 0.05 * np.sin(2 * np.pi * wander_f[:, None] * t[None, :] + wander_phase[:, None])
    noise = rng.normal(0.0, cfg.noise_mv, size=(cfg.n_leads, n))

    signal = gains[:, None] * template[None, :] + wander + noise
    return signal, beats


def synthesize_records(cfg: SyntheticConfig) -> List[EcgRecord]:
    """Generate the dataset in memory; class tags are assigned round-robin."""
    for tag in cfg.classes:
        if tag not in CLASS_TAGS:
            raise DataValidationError(f"unknown synthetic class {tag!r}; expected one of {sorted(CLASS_TAGS)}")

    records = []
    for i in range(cfg.n_records):
        rng = spawn_rng(cfg.seed, "synth", i)
        tag = cfg.classes[i % len(cfg.classes)]
        signal, _ = synthesize_signal(tag, cfg, rng)
        records.append(EcgRecord(
            record_id=f"rec_{i:05d}",
            signal=signal,
            fs=cfg.fs,
            lead_names=LEAD_NAMES[: cfg.n_leads],
            age=float(rng.integers(20, 90)),
            sex=str(rng.choice(["M", "F"])),
            labels=labels_to_vector([CLASS_TAGS[tag]]),
        ))
    return records


def generate_synthetic_dataset(cfg: SyntheticConfig, out_dir: Union[str, Path]) -> DatasetManifest:
    """
    Write a synthetic dataset: records/rec_XXXXX.csv plus manifest.csv.

    Output is byte-identical for equal configurations.

    Raises:
        EcgLensError: If the output directory cannot be written
    """
    out_dir = Path(out_dir)
    records = synthesize_records(cfg)
    entries = []
    try:
        for rec in records:
            rel = f"records/{rec.record_id}.csv"
            write_record(rec, out_dir / rel)
            entries.append(ManifestEntry(
                record_id=rec.record_id, path=rel, age=rec.age, sex=rec.sex,
                labels=rec.label_codes, fs=cfg.fs,
            ))
        manifest = DatasetManifest(root=out_dir.resolve(), entries=entries, default_fs=cfg.fs)
        write_manifest(manifest, out_dir / "manifest.csv")
    except OSError as e:
        raise EcgLensError(f"cannot write synthetic dataset to {out_dir}: {e}")

    logger.info(f"Wrote {len(entries)} synthetic records ({','.join(cfg.classes)}) to {out_dir}")
    return manifest
