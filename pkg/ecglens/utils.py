"""
Utility functions for ECGLens
Handles seed streams, JSON/YAML files and batch chunking
"""
import json
from pathlib import Path
from typing import Any, Dict, Iterator, Sequence, Tuple, Union

import numpy as np
import yaml

PathLike = Union[str, Path]

# Fixed stream ids: every subsystem draws from its own generator so that
# adding randomness to one never shifts another.
STREAM_IDS: Dict[str, int] = {
    "init": 0,
    "dropout": 1,
    "augment": 2,
    "shuffle": 3,
    "folds": 4,
    "background": 5,
    "explain": 6,
    "synth": 7,
    "baseline": 8,
}


def spawn_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """
    Build the random generator for one subsystem.

    Args:
        seed: Run-level seed
        stream: Subsystem name, one of STREAM_IDS
        *keys: Extra integers (round index, record index, ...)

    Returns:
        Independent numpy Generator

    Raises:
        KeyError: If stream is not a known subsystem
    """
    entropy = [int(seed), STREAM_IDS[stream], *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stream_seed(seed: int, stream: str, *keys: int) -> int:
    """Derive a plain integer seed for APIs that take ints (sklearn, sub-runs)."""
    return int(spawn_rng(seed, stream, *keys).integers(0, 2**31 - 1))


def load_json(path: PathLike) -> Any:
    """Read a UTF-8 JSON artifact such as thresholds.json."""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def dump_json(payload: Any, path: PathLike) -> Path:
    """Write JSON with stable key order so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_yaml(path: PathLike) -> Dict[str, Any]:
    """Load a YAML mapping; an empty file yields an empty dict."""
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level, got {type(data).__name__}")
    return data


def dump_yaml(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(payload, f, sort_keys=True, default_flow_style=False)
    return path


def chunks(n: int, size: int) -> Iterator[Tuple[int, int]]:
    """Yield (start, stop) pairs covering range(n) in blocks of at most size."""
    for start in range(0, n, size):
        yield start, min(start + size, n)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base (override wins)."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_list(value: Union[str, Sequence[str], None]) -> list:
    """Split a comma list ("I, II,V5") into trimmed non-empty items."""
    if value is None:
        return []
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return [str(item).strip() for item in value if str(item).strip()]
