"""
train command - k-fold cross-validation (or a single split) of the residual network
"""
import logging

import click
import pandas as pd

from ecglens.metrics import confusion_table, format_report, write_report_csv
from ecglens.render import render_confusion_svg
from ecglens.schemas import CLASS_CODES
from ecglens.train import cross_validate

from . import load_dataset, resolve_average_over
from ..config import (base_overrides, common_options, data_options, load_run_config, set_override,
                      write_resolved_config)
from ..models import build_model_config, build_train_config

logger = logging.getLogger(__name__)


def training_options(func):
    """Optimizer and architecture flags shared by train and sweep-leads."""
    func = click.option("--epochs", type=click.IntRange(min=0), default=None, help="Maximum epochs")(func)
    func = click.option("--batch-size", type=click.IntRange(min=1), default=None)(func)
    func = click.option("--lr", "learning_rate", type=click.FloatRange(min=0, min_open=True), default=None,
                        help="Adam learning rate")(func)
    func = click.option("--blocks", "n_blocks", type=click.IntRange(min=1), default=None,
                        help="Residual blocks")(func)
    func = click.option("--base-channels", type=click.IntRange(min=1), default=None)(func)
    func = click.option("--no-augment", is_flag=True, default=False, help="Disable scaling and shifting")(func)
    return func


def training_overrides(overrides, epochs, batch_size, learning_rate, n_blocks, base_channels, no_augment):
    set_override(overrides, "train.max_epochs", epochs)
    set_override(overrides, "train.batch_size", batch_size)
    set_override(overrides, "train.learning_rate", learning_rate)
    set_override(overrides, "model.n_blocks", n_blocks)
    set_override(overrides, "model.base_channels", base_channels)
    if no_augment:
        set_override(overrides, "augment.enabled", False)
    return overrides


@click.command("train")
@common_options
@data_options
@training_options
@click.option("--no-cv", is_flag=True, default=False, help="Train a single split (round 0) instead of all folds")
def train(config_path, seed, out, jobs, manifest, fs, nsteps, leads, folds,
          epochs, batch_size, learning_rate, n_blocks, base_channels, no_augment, no_cv):
    """Train with rotating train/validation/test folds and write per-round artifacts."""
    overrides = base_overrides(seed, out, jobs, manifest, fs, nsteps, leads, folds)
    training_overrides(overrides, epochs, batch_size, learning_rate, n_blocks, base_channels, no_augment)
    config = load_run_config(config_path, overrides)

    dataset, records, input_leads = load_dataset(config)
    model_cfg = build_model_config(config.model, config.data, input_leads)
    train_cfg = build_train_config(config.train, config.augment, config.data, input_leads, config.seed,
                                   resolve_average_over(config, dataset))
    out_dir = config.out_dir
    write_resolved_config(config)

    result = cross_validate(dataset, model_cfg, train_cfg, k=config.data.folds, jobs=config.jobs,
                            out_dir=out_dir, records=records, rounds=[0] if no_cv else None)

    write_report_csv(result.aggregate, out_dir / "report.csv")
    pd.DataFrame(
        [(r.round_index, r.best_epoch, r.best_val_f1, r.report.average.f1) for r in result.rounds],
        columns=["round", "best_epoch", "val_avg_F1", "test_avg_F1"],
    ).to_csv(out_dir / "rounds.csv", index=False, lineterminator="\n")

    best = next(r for r in result.rounds if r.round_index == result.best_round)
    confusion_table(best.test_confusion, CLASS_CODES).to_csv(out_dir / "best_round_confusion.csv",
                                                            lineterminator="\n")
    (out_dir / "best_round_confusion.svg").write_text(
        render_confusion_svg(best.test_confusion, CLASS_CODES,
                             title=f"Round {best.round_index} test fold (best validation)"),
        encoding="utf-8",
    )
    logger.info(f"Training artifacts written to {out_dir}")
    click.echo(format_report(result.aggregate))
