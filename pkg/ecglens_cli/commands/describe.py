"""
describe command - per-class dataset statistics
"""
import click

from ecglens.data import dataset_statistics

from . import load_dataset
from ..config import base_overrides, common_options, data_options, load_run_config, write_resolved_config


@click.command("describe")
@common_options
@data_options
def describe(config_path, seed, out, jobs, manifest, fs, nsteps, leads, folds):
    """Count, sex share, age and duration per diagnostic class."""
    config = load_run_config(config_path, base_overrides(seed, out, jobs, manifest, fs, nsteps, leads, folds))
    _, records, _ = load_dataset(config)
    table = dataset_statistics(records)
    write_resolved_config(config)
    table.to_csv(config.out_dir / "statistics.csv", lineterminator="\n")
    click.echo(table.to_string(float_format=lambda v: f"{v:.2f}", na_rep="-"))
