"""
baseline command - expert-feature classifiers on the deep model's fold protocol
"""
import logging

import click
import numpy as np
import pandas as pd

from ecglens.data import select_leads
from ecglens.expert import comparison_table, cross_validate_baseline, feature_matrix, make_baseline
from ecglens.metrics import format_report, read_report_csv, write_report_csv
from ecglens.render import render_comparison_svg
from ecglens.train import make_folds

from . import load_dataset, resolve_average_over
from ..config import (base_overrides, common_options, data_options, load_run_config, set_override,
                      write_resolved_config)

logger = logging.getLogger(__name__)

DEEP_MODEL_NAME = "deep"


def deep_rows(report_path: str) -> pd.DataFrame:
    """(model, class, f1) rows from a report CSV written by train or evaluate."""
    report = read_report_csv(report_path)
    return pd.DataFrame({"model": DEEP_MODEL_NAME, "class": report.index, "f1": report["F1"].to_numpy()})


@click.command("baseline")
@common_options
@data_options
@click.option("--model", "models", type=click.Choice(["lr", "mlp", "rf", "gbt"]), multiple=True,
              help="Baseline(s) to run; repeat the flag for several (default lr and mlp)")
@click.option("--wavelet", type=click.Choice(["db4", "haar"]), default=None)
@click.option("--levels", type=click.IntRange(min=1), default=None, help="DWT depth")
@click.option("--deep-report", type=click.Path(exists=True, dir_okay=False), default=None,
              help="report.csv of the deep model to include in the comparison")
def baseline(config_path, seed, out, jobs, manifest, fs, nsteps, leads, folds,
             models, wavelet, levels, deep_report):
    """Extract expert features, cross-validate baselines and write the F1 comparison."""
    overrides = base_overrides(seed, out, jobs, manifest, fs, nsteps, leads, folds)
    set_override(overrides, "baseline.wavelet", wavelet)
    set_override(overrides, "baseline.levels", levels)
    config = load_run_config(config_path, overrides)
    models = list(models) or ["lr", "mlp"]
    for name in models:
        # reject out-of-scope models before any feature work
        make_baseline(name, config.baseline, seed=config.seed)

    dataset, records, input_leads = load_dataset(config)
    average_over = resolve_average_over(config, dataset)
    records = [select_leads(r, input_leads) for r in records]
    features = feature_matrix(records, config.baseline.wavelet, config.baseline.levels, jobs=config.jobs)
    labels = np.stack([r.labels for r in records])
    folds_split = make_folds(list(features.index), k=config.data.folds, seed=config.seed)

    out_dir = config.out_dir
    write_resolved_config(config)
    features.to_csv(out_dir / "features.csv", lineterminator="\n")
    aggregates = {}
    for name in models:
        run = cross_validate_baseline(name, features, labels, folds_split, config.baseline, seed=config.seed,
                                      average_over=average_over)
        run.scores.to_csv(out_dir / f"{name}_scores.csv", lineterminator="\n")
        write_report_csv(run.aggregate, out_dir / f"{name}_report.csv")
        aggregates[name] = run.aggregate
        click.echo(f"{name}:\n{format_report(run.aggregate)}")

    comparison = comparison_table(aggregates)
    if deep_report is not None:
        comparison = pd.concat([deep_rows(deep_report), comparison], ignore_index=True)
    comparison.to_csv(out_dir / "comparison.csv", index=False, lineterminator="\n")
    (out_dir / "comparison.svg").write_text(render_comparison_svg(comparison), encoding="utf-8")
    logger.info(f"Baseline comparison written to {out_dir}")
