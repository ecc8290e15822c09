"""
synth command - write a synthetic ECG dataset
"""
import logging

import click

from ecglens.synthetic import generate_synthetic_dataset

from ..config import load_run_config, set_override, write_resolved_config
from ..models import build_synthetic_config

logger = logging.getLogger(__name__)


@click.command("synth")
@click.option("--n", "n_records", type=click.IntRange(min=1), default=None, help="Number of records")
@click.option("--classes", default=None, help="Comma-separated class tags, e.g. normal,af,pvc")
@click.option("--n-leads", type=click.IntRange(1, 12), default=None, help="Leads per record (first n of the 12)")
@click.option("--samples", "n_samples", type=click.IntRange(min=1), default=None, help="Samples per record")
@click.option("--fs", type=click.FloatRange(min=0, min_open=True), default=None, help="Sampling rate in Hz")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML run configuration; explicit flags override it")
@click.option("--seed", type=int, default=None, help="Run seed")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory")
def synth(n_records, classes, n_leads, n_samples, fs, config_path, seed, out):
    """Generate labelled synthetic records plus manifest.csv."""
    overrides = {}
    set_override(overrides, "seed", seed)
    set_override(overrides, "out", out)
    set_override(overrides, "data.fs", fs)
    set_override(overrides, "synth.n_records", n_records)
    set_override(overrides, "synth.classes", classes)
    set_override(overrides, "synth.n_leads", n_leads)
    set_override(overrides, "synth.n_samples", n_samples)
    config = load_run_config(config_path, overrides)

    synthetic_cfg = build_synthetic_config(config.synth, config.data.fs, config.seed)
    generate_synthetic_dataset(synthetic_cfg, config.out_dir)
    write_resolved_config(config)
    click.echo(str(config.out_dir / "manifest.csv"))
