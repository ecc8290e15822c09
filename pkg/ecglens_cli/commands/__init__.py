"""
CLI sub-commands and the dataset loading they share
"""
import logging
from typing import List, Optional, Tuple

from ecglens.data import load_manifest, load_records
from ecglens.errors import DataValidationError
from ecglens.schemas import CLASS_CODES, DatasetManifest, EcgRecord

from ..config import RunConfig, require_manifest

logger = logging.getLogger(__name__)


def load_dataset(config: RunConfig) -> Tuple[DatasetManifest, List[EcgRecord], List[str]]:
    """
    Load the manifest and every record it lists.

    Returns:
        Tuple (manifest, records, input leads); leads default to the first record's leads
    """
    manifest = load_manifest(require_manifest(config), default_fs=config.data.fs)
    records = load_records(manifest)
    if not records:
        raise DataValidationError(f"manifest {config.data.manifest} lists no records")
    leads = list(config.data.leads) if config.data.leads else list(records[0].lead_names)
    logger.info(f"Loaded {len(records)} records from {config.data.manifest}, leads {','.join(leads)}")
    return manifest, records, leads


def resolve_average_over(config: RunConfig, manifest: DatasetManifest) -> Optional[List[str]]:
    """
    Classes for the AVG row: data.average_over if set, else the manifest's label vocabulary.

    Returns None (all nine rows) when the vocabulary covers every class or is empty.
    """
    if config.data.average_over is not None:
        return list(config.data.average_over)
    present = manifest.label_classes()
    if not present or len(present) == len(CLASS_CODES):
        return None
    logger.info(f"AVG rows average the dataset's classes: {','.join(present)}")
    return present
