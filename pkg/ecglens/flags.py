"""
Engine Flags
Centralized numeric toggles from environment variables
"""
import os
import logging
from typing import Optional

logger = logging.getLogger(__name__)


def str_to_bool(value: Optional[str], default: bool = False) -> bool:
    """Convert string environment variable to boolean."""
    if value is None:
        return default
    return value.strip().lower() in ('true', '1', 'yes', 'on', 'enabled')


def env_int(name: str, default: int, minimum: int = 1) -> int:
    """Read a positive integer from the environment, falling back on bad values."""
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}; using {default}")
        return default
    if value < minimum:
        logger.warning(f"Ignoring {name}={value} (< {minimum}); using {default}")
        return default
    return value


# Flags (read once at module import)
DEBUG_MODE = str_to_bool(os.getenv("ECGLENS_DEBUG"), default=False)

# Batch chunking for inference and attribution passes
EVAL_BATCH_SIZE = env_int("ECGLENS_EVAL_BATCH_SIZE", 64)
EXPLAIN_BATCH_SIZE = env_int("ECGLENS_EXPLAIN_BATCH_SIZE", 32)

logger.debug("Engine flags loaded:")
logger.debug(f"  DEBUG_MODE: {DEBUG_MODE}")
logger.debug(f"  EVAL_BATCH_SIZE: {EVAL_BATCH_SIZE}")
logger.debug(f"  EXPLAIN_BATCH_SIZE: {EXPLAIN_BATCH_SIZE}")
