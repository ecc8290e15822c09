"""
evaluate command - score a checkpoint on a dataset
"""
import logging
from pathlib import Path
from typing import Optional

import click
import pandas as pd

from ecglens.checkpoint import load_checkpoint
from ecglens.data import stack_records
from ecglens.errors import ConfigMismatchError, DataValidationError
from ecglens.metrics import (confusion_table, evaluate_predictions, format_report,
                             multilabel_confusion_matrix, write_report_csv)
from ecglens.render import render_confusion_svg
from ecglens.schemas import CLASS_CODES, ThresholdFile, ThresholdSet
from ecglens.utils import load_json

from . import load_dataset, resolve_average_over
from ..config import base_overrides, common_options, data_options, load_run_config, write_resolved_config

logger = logging.getLogger(__name__)


def resolve_thresholds(path: Optional[str], stored: Optional[list], n_classes: int) -> ThresholdSet:
    """
    Pick decision thresholds: an explicit file, else those stored in the checkpoint, else 0.5.

    A file that is given but missing falls back to 0.5 with a warning.
    """
    if path is not None:
        if not Path(path).exists():
            logger.warning(f"Thresholds file {path} not found; using 0.5 for every class")
            return ThresholdSet.constant(0.5, n_classes)
        payload = ThresholdFile.model_validate(load_json(path))
        if len(payload.thresholds) != n_classes:
            raise DataValidationError(f"{path}: {len(payload.thresholds)} thresholds for {n_classes} classes")
        return ThresholdSet(values=payload.thresholds)
    if stored:
        return ThresholdSet(values=stored)
    logger.warning("No thresholds file and none stored in the checkpoint; using 0.5 for every class")
    return ThresholdSet.constant(0.5, n_classes)


@click.command("evaluate")
@common_options
@data_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False), required=True,
              help="Checkpoint written by train")
@click.option("--thresholds", "thresholds_path", type=click.Path(dir_okay=False), default=None,
              help="thresholds.json; defaults to the thresholds stored in the checkpoint")
def evaluate(config_path, seed, out, jobs, manifest, fs, nsteps, leads, folds,
             checkpoint_path, thresholds_path):
    """Write the per-class report CSV and confusion matrices SVG for a checkpoint."""
    config = load_run_config(config_path, base_overrides(seed, out, jobs, manifest, fs, nsteps, leads, folds))
    net, meta = load_checkpoint(checkpoint_path)
    model_cfg = net.config
    if nsteps is not None and nsteps != model_cfg.nsteps:
        raise ConfigMismatchError(f"--nsteps {nsteps} differs from the checkpoint's nsteps {model_cfg.nsteps}")
    input_leads = meta.lead_names or model_cfg.input_leads
    if config.data.leads and list(config.data.leads) != list(input_leads):
        raise ConfigMismatchError(f"--leads {config.data.leads} differ from the checkpoint's leads {input_leads}")

    dataset, records, _ = load_dataset(config)
    x, y = stack_records(records, model_cfg.nsteps, input_leads)
    thresholds = resolve_thresholds(thresholds_path, meta.thresholds, model_cfg.n_classes)
    scores = net.predict_proba(x)
    report = evaluate_predictions(scores, y, thresholds.values,
                                  average_over=resolve_average_over(config, dataset))

    out_dir = config.out_dir
    write_resolved_config(config)
    write_report_csv(report, out_dir / "report.csv")
    score_frame = pd.DataFrame(scores, index=[r.record_id for r in records], columns=CLASS_CODES)
    score_frame.index.name = "record_id"
    score_frame.to_csv(out_dir / "scores.csv", lineterminator="\n")
    matrices = multilabel_confusion_matrix((scores >= thresholds.as_array()).astype(int), y)
    confusion_table(matrices).to_csv(out_dir / "confusion.csv", lineterminator="\n")
    (out_dir / "confusion.svg").write_text(
        render_confusion_svg(matrices, CLASS_CODES, title=f"{Path(checkpoint_path).name} on {len(records)} records"),
        encoding="utf-8",
    )
    logger.info(f"Evaluation written to {out_dir}")
    click.echo(format_report(report))
