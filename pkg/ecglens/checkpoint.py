"""
Checkpoint serialization for ECGLens networks
JSON header, newline + NUL terminator, then a float32 little-endian blob
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .errors import CheckpointError, ConfigMismatchError
from .model import EcgResNet, build_network
from .schemas import ModelConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CHECKSUM_ALGORITHM = "sha256"
HEADER_TERMINATOR = b"\n\0"
BLOB_DTYPE = "<f4"


class TensorEntry(BaseModel):
    name: str
    shape: List[int]
    dtype: str = "float32"
    offset: int = Field(..., ge=0, description="Byte offset into the blob")
    nbytes: int = Field(..., ge=0)


class CheckpointMeta(BaseModel):
    """Training metadata stored alongside the weights."""
    epoch: Optional[int] = None
    seed: int = 0
    thresholds: Optional[List[float]] = None
    round_index: Optional[int] = None
    folds: Optional[int] = None
    val_avg_f1: Optional[float] = None
    lead_names: Optional[List[str]] = None


class CheckpointHeader(BaseModel):
    format_version: int
    config: ModelConfig
    tensors: List[TensorEntry]
    metadata: CheckpointMeta = Field(default_factory=CheckpointMeta)
    checksum_algorithm: str = CHECKSUM_ALGORITHM
    checksum: str = ""


def _digest(header: Dict[str, Any], blob: bytes) -> str:
    body = {k: v for k, v in header.items() if k != "checksum"}
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    h = hashlib.new(CHECKSUM_ALGORITHM)
    h.update(canonical)
    h.update(blob)
    return h.hexdigest()


def write_checkpoint_file(header: Dict[str, Any], blob: bytes, path: Union[str, Path]) -> Path:
    """Stamp the checksum into a raw header dict and write header + blob."""
    header = dict(header)
    header["checksum_algorithm"] = CHECKSUM_ALGORITHM
    header["checksum"] = _digest(header, blob)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(HEADER_TERMINATOR)
        f.write(blob)
    return path


def save_checkpoint(net: EcgResNet, meta: Optional[CheckpointMeta], path: Union[str, Path]) -> Path:
    """
    Write every parameter and running statistic of net.

    Args:
        net: Network to serialize
        meta: Training metadata (epoch, seed, thresholds)
        path: Destination file

    Returns:
        Path written
    """
    entries = []
    parts = []
    offset = 0
    for name, array in net.state_dict().items():
        raw = np.ascontiguousarray(array, dtype=BLOB_DTYPE).tobytes()
        entries.append(TensorEntry(name=name, shape=list(array.shape), offset=offset, nbytes=len(raw)))
        parts.append(raw)
        offset += len(raw)
    header = CheckpointHeader(
        format_version=FORMAT_VERSION,
        config=net.config,
        tensors=entries,
        metadata=meta or CheckpointMeta(),
    )
    path = write_checkpoint_file(header.model_dump(mode="json"), b"".join(parts), path)
    logger.info(f"Saved checkpoint {path} ({len(entries)} tensors, {offset} bytes)")
    return path


def read_checkpoint_header(path: Union[str, Path]) -> Tuple[CheckpointHeader, bytes]:
    """
    Parse and verify a checkpoint file without building the network.

    Raises:
        CheckpointError: Missing file, bad header, version mismatch,
            truncated blob or checksum failure
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    cut = raw.find(HEADER_TERMINATOR)
    if cut < 0:
        raise CheckpointError(f"{path}: header terminator not found")
    try:
        header_dict = json.loads(raw[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})")
    blob = raw[cut + len(HEADER_TERMINATOR):]

    version = header_dict.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} not supported (expected {FORMAT_VERSION})")
    try:
        header = CheckpointHeader.model_validate(header_dict)
    except ValidationError as e:
        raise CheckpointError(f"{path}: invalid header ({e.errors()[0]['msg']})")
    if header.checksum_algorithm != CHECKSUM_ALGORITHM:
        raise CheckpointError(f"{path}: unsupported checksum algorithm {header.checksum_algorithm!r}")

    names = [t.name for t in header.tensors]
    if len(set(names)) != len(names):
        raise CheckpointError(f"{path}: duplicate tensor names in table")
    previous_end = 0
    for t in sorted(header.tensors, key=lambda t: t.offset):
        if t.offset < previous_end:
            raise CheckpointError(f"{path}: tensor {t.name} overlaps the previous tensor")
        previous_end = t.offset + t.nbytes

    end = max((t.offset + t.nbytes for t in header.tensors), default=0)
    if len(blob) < end:
        raise CheckpointError(f"{path}: truncated blob ({len(blob)} bytes, header needs {end})")
    if _digest(header_dict, blob) != header.checksum:
        raise CheckpointError(f"{path}: checksum mismatch")
    return header, blob


def load_checkpoint(path: Union[str, Path],
                    expected: Optional[ModelConfig] = None) -> Tuple[EcgResNet, CheckpointMeta]:
    """
    Rebuild a network from a checkpoint, in eval mode.

    Args:
        path: Checkpoint file
        expected: Config the caller intends to use; must equal the stored one

    Returns:
        Tuple (network, metadata)

    Raises:
        CheckpointError: See read_checkpoint_header; also unknown tensor names
        ConfigMismatchError: Stored config differs from expected
    """
    header, blob = read_checkpoint_header(path)
    if expected is not None and expected != header.config:
        stored = header.config.model_dump()
        wanted = expected.model_dump()
        diffs = {k: (stored[k], wanted[k]) for k in stored if stored[k] != wanted[k]}
        raise ConfigMismatchError(f"checkpoint config differs (stored, requested): {diffs}")

    state = {}
    for t in header.tensors:
        if t.dtype != "float32":
            raise CheckpointError(f"tensor {t.name}: unsupported dtype {t.dtype}")
        count = int(np.prod(t.shape)) if t.shape else 1
        if count * 4 != t.nbytes:
            raise CheckpointError(f"tensor {t.name}: {t.nbytes} bytes do not fit shape {t.shape}")
        state[t.name] = np.frombuffer(blob, dtype=BLOB_DTYPE, count=count,
                                      offset=t.offset).astype(np.float64).reshape(t.shape)

    # placeholder init; load_state_dict overwrites every parameter and buffer
    net = build_network(header.config, seed=header.metadata.seed)
    net.load_state_dict(state)
    net.eval()
    logger.info(f"Loaded checkpoint {path}")
    return net, header.metadata
