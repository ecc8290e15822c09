"""
sweep-leads command - single-lead models against the all-lead model on one split
"""
import logging

import click
import pandas as pd

from ecglens.metrics import report_to_frame
from ecglens.train import cross_validate
from ecglens.utils import parse_list

from . import load_dataset, resolve_average_over
from ..config import base_overrides, common_options, data_options, load_run_config, write_resolved_config
from ..models import build_model_config, build_train_config
from .train import training_options, training_overrides

logger = logging.getLogger(__name__)

ALL_LEADS = "all"


@click.command("sweep-leads")
@common_options
@data_options
@training_options
@click.option("--sweep", "sweep", default=None,
              help="Comma-separated leads to train alone (default every input lead)")
def sweep_leads(config_path, seed, out, jobs, manifest, fs, nsteps, leads, folds,
                epochs, batch_size, learning_rate, n_blocks, base_channels, no_augment, sweep):
    """
    Train one model per single lead and one on all input leads, all on round 0,
    and tabulate test F1 by class and lead.
    """
    overrides = base_overrides(seed, out, jobs, manifest, fs, nsteps, leads, folds)
    training_overrides(overrides, epochs, batch_size, learning_rate, n_blocks, base_channels, no_augment)
    config = load_run_config(config_path, overrides)
    dataset, records, input_leads = load_dataset(config)
    sweep_leads_list = parse_list(sweep) or list(input_leads)
    average_over = resolve_average_over(config, dataset)

    out_dir = config.out_dir
    write_resolved_config(config)
    columns = {}
    for name, subset in [(ALL_LEADS, input_leads)] + [(lead, [lead]) for lead in sweep_leads_list]:
        model_cfg = build_model_config(config.model, config.data, subset)
        train_cfg = build_train_config(config.train, config.augment, config.data, subset, config.seed,
                                       average_over)
        result = cross_validate(dataset, model_cfg, train_cfg, k=config.data.folds, jobs=1,
                                out_dir=out_dir / f"leads_{name}", records=records, rounds=[0])
        columns[name] = report_to_frame(result.aggregate)["F1"]
        logger.info(f"Leads {name}: test avg F1 {result.aggregate.average.f1:.4f}")

    table = pd.DataFrame(columns)
    table.index.name = "class"
    table.to_csv(out_dir / "lead_f1.csv", lineterminator="\n")
    click.echo(table.to_string(float_format=lambda v: f"{v:.3f}"))
