"""
ECG dataset I/O and preprocessing for ECGLens
Loads manifests and record CSVs, fixes record length, augments and selects leads
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import DataValidationError, ShapeError
from .schemas import (CLASS_CODES, LEAD_NAMES, AugmentConfig, DatasetManifest,
                      EcgRecord, ManifestEntry, labels_to_vector)

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["record_id", "path", "age", "sex", "labels"]
OPTIONAL_MANIFEST_COLUMNS = ["fs"]


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err.get("loc", ()))
    return f"{loc}: {err.get('msg')}" if loc else str(err.get("msg"))


def _parse_optional_float(raw: str, column: str, line: int) -> Optional[float]:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise DataValidationError(f"manifest row {line}: {column} {raw!r} is not a number")


def load_manifest(path: Union[str, Path], default_fs: float = 500.0) -> DatasetManifest:
    """
    Load and validate a manifest CSV.

    Header is `record_id,path,age,sex,labels` with an optional trailing `fs`
    column. Paths resolve against the manifest's directory.

    Args:
        path: Manifest CSV path
        default_fs: Sampling rate for rows without an fs value

    Returns:
        DatasetManifest with entries in file order

    Raises:
        DataValidationError: Missing file, malformed row, unknown label code,
            duplicate record_id or missing record file (row numbers are file lines)
    """
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"manifest not found: {path}")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: manifest is empty (header required)")
    except pd.errors.ParserError as e:
        raise DataValidationError(f"{path}: malformed row ({e})")

    columns = [c.strip() for c in df.columns]
    expected = MANIFEST_COLUMNS + OPTIONAL_MANIFEST_COLUMNS[: max(0, len(columns) - len(MANIFEST_COLUMNS))]
    if columns != expected:
        raise DataValidationError(
            f"{path}: header must be {','.join(MANIFEST_COLUMNS)}[,fs], got {','.join(columns)}"
        )
    df.columns = columns

    root = path.resolve().parent
    entries: List[ManifestEntry] = []
    seen = {}
    for i, row in enumerate(df.itertuples(index=False)):
        line = i + 2
        values = row._asdict()
        if any(pd.isna(v) for v in values.values()):
            raise DataValidationError(f"manifest row {line}: expected {len(columns)} fields")

        record_id = values["record_id"].strip()
        if not record_id:
            raise DataValidationError(f"manifest row {line}: empty record_id")
        if record_id in seen:
            raise DataValidationError(
                f"manifest row {line}: duplicate record_id {record_id!r} (first seen on row {seen[record_id]})"
            )
        seen[record_id] = line

        codes = [c.strip() for c in values["labels"].split(";") if c.strip()]
        for code in codes:
            if code not in CLASS_CODES:
                raise DataValidationError(f"manifest row {line}: unknown label code {code!r}")

        sex = values["sex"].strip() or None
        if sex is not None and sex not in ("M", "F"):
            raise DataValidationError(f"manifest row {line}: sex must be M, F or empty, got {sex!r}")

        rel_path = values["path"].strip()
        if not (root / rel_path).is_file():
            raise DataValidationError(f"manifest row {line}: record file not found: {rel_path}")

        try:
            entries.append(ManifestEntry(
                record_id=record_id,
                path=rel_path,
                age=_parse_optional_float(values["age"], "age", line),
                sex=sex,
                labels=codes,
                fs=_parse_optional_float(values.get("fs", ""), "fs", line),
            ))
        except ValidationError as e:
            raise DataValidationError(f"manifest row {line}: {_first_error(e)}")

    logger.info(f"Loaded manifest {path.name}: {len(entries)} entries")
    return DatasetManifest(root=root, entries=entries, default_fs=default_fs)


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    """Serialize a manifest; the fs column is written only when some entry carries it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with_fs = any(e.fs is not None for e in manifest.entries)
    rows = []
    for e in manifest.entries:
        row = {
            "record_id": e.record_id,
            "path": e.path,
            "age": "" if e.age is None else f"{e.age:g}",
            "sex": e.sex or "",
            "labels": ";".join(e.labels),
        }
        if with_fs:
            row["fs"] = "" if e.fs is None else f"{e.fs:g}"
        rows.append(row)
    columns = MANIFEST_COLUMNS + (["fs"] if with_fs else [])
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")
    return path


def _reject_bad_line(bad_line: List[str]):
    raise DataValidationError(f"record row has more fields than the header: {bad_line}")


def load_record(manifest: DatasetManifest, record_id: str) -> EcgRecord:
    """
    Load one record's CSV (header of lead names, one row per sample).

    Args:
        manifest: Validated manifest
        record_id: Record to load

    Returns:
        EcgRecord with labels and demographics from the manifest

    Raises:
        DataValidationError: Unknown id, unknown lead header, field count
            mismatch, non-numeric or NaN/Inf cell
    """
    try:
        entry = manifest.entry(record_id)
    except KeyError:
        raise DataValidationError(f"unknown record_id {record_id!r}")

    path = manifest.root / entry.path
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False,
                         engine="python", on_bad_lines=_reject_bad_line)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{entry.path}: record file is empty")
    except DataValidationError as e:
        raise DataValidationError(f"{entry.path}: {e}")

    leads = [c.strip() for c in df.columns]
    unknown = [lead for lead in leads if lead not in LEAD_NAMES]
    if unknown:
        raise DataValidationError(f"{entry.path}: unknown lead column(s) {unknown}")
    if len(df) == 0:
        raise DataValidationError(f"{entry.path}: record has no samples")

    signal = np.empty((len(leads), len(df)), dtype=np.float64)
    for k, column in enumerate(df.columns):
        raw = df[column]
        numeric = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            idx = int(bad[0])
            cell = raw.iloc[idx]
            line = idx + 2
            if pd.isna(cell):
                raise DataValidationError(
                    f"{entry.path}: row {line} has fewer fields than the {len(leads)} declared leads"
                )
            if cell.strip().lower().lstrip("+-") in ("nan", "inf", "infinity"):
                raise DataValidationError(f"{entry.path}: NaN/Inf value {cell!r} at row {line}, column {leads[k]}")
            raise DataValidationError(f"{entry.path}: non-numeric cell {cell!r} at row {line}, column {leads[k]}")
        signal[k] = numeric

    try:
        return EcgRecord(
            record_id=entry.record_id,
            signal=signal,
            fs=entry.fs if entry.fs is not None else manifest.default_fs,
            lead_names=leads,
            age=entry.age,
            sex=entry.sex,
            labels=labels_to_vector(entry.labels),
        )
    except ValidationError as e:
        raise DataValidationError(f"{entry.path}: {_first_error(e)}")


def load_records(manifest: DatasetManifest, record_ids: Optional[Sequence[str]] = None) -> List[EcgRecord]:
    ids = manifest.record_ids if record_ids is None else list(record_ids)
    return [load_record(manifest, rid) for rid in ids]


def write_record(rec: EcgRecord, path: Union[str, Path], float_format: str = "%.6f") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(rec.signal.T, columns=rec.lead_names)
    df.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    return path


def fix_length(signal: np.ndarray, nsteps: int) -> np.ndarray:
    """Keep the last nsteps samples; left-pad short signals with zeros."""
    if nsteps < 1:
        raise ShapeError(f"nsteps must be >= 1, got {nsteps}")
    n = signal.shape[-1]
    if n >= nsteps:
        return signal[..., n - nsteps:].copy()
    out = np.zeros(signal.shape[:-1] + (nsteps,), dtype=signal.dtype)
    out[..., nsteps - n:] = signal
    return out


def preprocess_fix_length(rec: EcgRecord, nsteps: int) -> EcgRecord:
    """
    Crop or pad a record to exactly nsteps samples per lead.

    Longer records keep their LAST nsteps samples. Shorter records get zeros
    prepended so the original signal sits at the end of the window.
    """
    if rec.n_samples == nsteps:
        return rec
    return rec.replace(signal=fix_length(rec.signal, nsteps))


def shift_signal(signal: np.ndarray, offset: int) -> np.ndarray:
    """Delay (offset > 0) or advance (offset < 0) along the last axis, zero-filling vacated samples."""
    out = np.zeros_like(signal)
    n = signal.shape[-1]
    if offset >= n or -offset >= n:
        return out
    if offset > 0:
        out[..., offset:] = signal[..., : n - offset]
    elif offset < 0:
        out[..., :offset] = signal[..., -offset:]
    else:
        out[...] = signal
    return out


def augment_signal(signal: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Scale by one uniform factor, then shift by a uniform integer in +/- floor(max_shift_frac * n)."""
    scale = rng.uniform(cfg.scale_min, cfg.scale_max)
    max_shift = int(np.floor(cfg.max_shift_frac * signal.shape[-1]))
    offset = int(rng.integers(-max_shift, max_shift + 1))
    return shift_signal(signal * scale, offset)


def augment(rec: EcgRecord, cfg: AugmentConfig, rng: np.random.Generator) -> EcgRecord:
    """Apply amplitude scaling and temporal shifting; deterministic given rng."""
    if not cfg.enabled:
        return rec
    return rec.replace(signal=augment_signal(rec.signal, cfg, rng))


def augment_batch(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Augment each record of an [B, C, L] batch independently, drawing in batch order."""
    if not cfg.enabled:
        return x
    return np.stack([augment_signal(sample, cfg, rng) for sample in x]) if len(x) else x


def select_leads(rec: EcgRecord, leads: Sequence[str]) -> EcgRecord:
    """
    Restrict a record to the requested leads, in the requested order.

    Raises:
        DataValidationError: Empty request or a lead absent from the record
    """
    leads = list(leads)
    if not leads:
        raise DataValidationError("at least one lead must be selected")
    missing = [lead for lead in leads if lead not in rec.lead_names]
    if missing:
        raise DataValidationError(
            f"record {rec.record_id}: lead(s) {missing} not present (has {rec.lead_names})"
        )
    if leads == rec.lead_names:
        return rec
    idx = [rec.lead_names.index(lead) for lead in leads]
    return rec.replace(signal=rec.signal[idx], lead_names=leads)


def stack_records(records: Sequence[EcgRecord], nsteps: int,
                  leads: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Build the network input batch.

    Returns:
        Tuple (x [N, n_leads, nsteps], y [N, 9])
    """
    if not records:
        raise DataValidationError("no records to stack")
    rows = []
    for rec in records:
        if leads is not None:
            rec = select_leads(rec, leads)
        rows.append(preprocess_fix_length(rec, nsteps))
    shapes = {r.signal.shape for r in rows}
    if len(shapes) != 1:
        raise ShapeError(f"records disagree on lead count: {sorted(shapes)}")
    x = np.stack([r.signal for r in rows])
    y = np.stack([r.labels for r in rows])
    return x, y


def dataset_statistics(records: Sequence[EcgRecord]) -> pd.DataFrame:
    """
    Per-class dataset summary: count and share of records, male share,
    age and duration mean/std. The final row ("All") covers every record.
    """
    if not records:
        raise DataValidationError("no records to describe")
    frame = pd.DataFrame({
        "age": [r.age for r in records],
        "male": [None if r.sex is None else float(r.sex == "M") for r in records],
        "duration_s": [r.duration_seconds for r in records],
    }, dtype=float)
    labels = np.stack([r.labels for r in records]).astype(bool)

    def summarize(mask: np.ndarray) -> dict:
        part = frame[mask]
        return {
            "count": int(mask.sum()),
            "percent": 100.0 * mask.sum() / len(records),
            "male_percent": 100.0 * part["male"].mean() if part["male"].notna().any() else np.nan,
            "age_mean": part["age"].mean(),
            "age_std": part["age"].std(ddof=0),
            "duration_mean_s": part["duration_s"].mean(),
            "duration_std_s": part["duration_s"].std(ddof=0),
        }

    rows = {code: summarize(labels[:, i]) for i, code in enumerate(CLASS_CODES)}
    rows["All"] = summarize(np.ones(len(records), dtype=bool))
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "class"
    return table
