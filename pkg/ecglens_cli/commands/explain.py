"""
explain command - patient-level SVGs and population lead contributions
"""
import logging

import click
import numpy as np
import pandas as pd

from ecglens.checkpoint import CheckpointMeta, load_checkpoint
from ecglens.data import preprocess_fix_length, select_leads, stack_records
from ecglens.errors import DataValidationError
from ecglens.explain import (explain_batch, lead_contributions, patient_explanation,
                             population_report, sample_background)
from ecglens.render import render_explanation_svg
from ecglens.schemas import CLASS_CODES, DiagnosticClass
from ecglens.train import make_folds
from ecglens.utils import parse_list

from . import load_dataset
from ..config import (base_overrides, common_options, data_options, load_run_config, set_override,
                      write_resolved_config)

logger = logging.getLogger(__name__)


def parse_classes(value):
    """Comma list of class codes to explain; None means every class."""
    if value is None:
        return None
    try:
        return sorted({DiagnosticClass(code).index for code in parse_list(value)})
    except ValueError:
        raise click.BadParameter(f"expected codes from {','.join(CLASS_CODES)}, got {value!r}",
                                 param_hint="--classes")


def background_records(records, selected, meta: CheckpointMeta, default_folds: int):
    """
    Records eligible as expected-gradients references.

    A checkpoint from a cross-validation round draws only from that round's
    training folds. Explained records are left out unless nothing else
    remains (e.g. --records all), in which case the overlap is logged.

    Raises:
        DataValidationError: If the candidate pool is empty
    """
    pool = list(records)
    if meta.round_index is not None:
        k = meta.folds or default_folds
        folds = make_folds([r.record_id for r in records], k=k, seed=meta.seed)
        train_ids = set(folds.roles(meta.round_index)[0])
        pool = [r for r in pool if r.record_id in train_ids]
        logger.info(f"Background drawn from round {meta.round_index} training folds ({k} folds, seed {meta.seed})")
    explained = {r.record_id for r in selected}
    held_out = [r for r in pool if r.record_id not in explained]
    if held_out:
        pool = held_out
    elif pool:
        logger.warning("Every background candidate is also explained; references overlap the explained records")
    if not pool:
        raise DataValidationError("no records available for the background")
    logger.info(f"Background pool: {len(pool)} records")
    return pool


@click.command("explain")
@common_options
@data_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False), required=True)
@click.option("--records", "record_selection", default="all", show_default=True,
              help="'all' or comma-separated record ids")
@click.option("--mc", "mc_samples", type=click.IntRange(min=1), default=None, help="Monte Carlo samples per record")
@click.option("--background", "background_size", type=click.IntRange(min=1), default=None,
              help="Background set size")
@click.option("--mode", type=click.Choice(["absolute", "signed"]), default=None,
              help="Contribution aggregation")
@click.option("--classes", default=None, help="Comma-separated class codes to explain (default all)")
def explain(config_path, seed, out, jobs, manifest, fs, nsteps, leads, folds,
            checkpoint_path, record_selection, mc_samples, background_size, mode, classes):
    """Expected-gradients attributions per record, plus class x lead contribution rates."""
    overrides = base_overrides(seed, out, jobs, manifest, fs, nsteps, leads, folds)
    set_override(overrides, "explain.mc_samples", mc_samples)
    set_override(overrides, "explain.background_size", background_size)
    set_override(overrides, "explain.mode", mode)
    config = load_run_config(config_path, overrides)
    class_indices = parse_classes(classes)
    settings = config.explain

    net, meta = load_checkpoint(checkpoint_path)
    model_cfg = net.config
    input_leads = meta.lead_names or model_cfg.input_leads
    _, records, _ = load_dataset(config)

    if record_selection.strip().lower() == "all":
        selected = records
    else:
        wanted = parse_list(record_selection)
        by_id = {r.record_id: r for r in records}
        missing = [rid for rid in wanted if rid not in by_id]
        if missing:
            raise DataValidationError(f"unknown record id(s): {missing[:5]}")
        selected = [by_id[rid] for rid in wanted]

    pool = background_records(records, selected, meta, config.data.folds)
    x_pool, _ = stack_records(pool, model_cfg.nsteps, input_leads)
    background = sample_background(x_pool, settings.background_size, seed=config.seed)
    x, _ = stack_records(selected, model_cfg.nsteps, input_leads)
    ids = [r.record_id for r in selected]
    svs = explain_batch(net, x, background, ids, input_leads, n_samples=settings.mc_samples,
                        seed=config.seed, classes=class_indices, jobs=config.jobs)
    probs = net.predict_proba(x)

    out_dir = config.out_dir
    write_resolved_config(config)
    patient_dir = out_dir / "patients"
    patient_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec, sv, p in zip(selected, svs, probs):
        # restrict the top-class choice to explained outputs
        masked = np.full_like(p, -np.inf)
        masked[sv.classes] = p[sv.classes]
        pe = patient_explanation(sv, masked)
        shown = select_leads(preprocess_fix_length(rec, model_cfg.nsteps), input_leads)
        window = min(settings.window_seconds, shown.duration_seconds)
        if window < settings.window_seconds:
            logger.warning(f"{rec.record_id}: showing {window:.2f} s, the record is shorter than "
                           f"{settings.window_seconds} s")
        svg = render_explanation_svg(shown, pe.submatrix, leads_to_show=settings.leads_to_show,
                                     window_seconds=window, highlight_percentile=settings.highlight_percentile,
                                     title=f"{rec.record_id}: {pe.top_code} (p={p[pe.top_class]:.2f})")
        (patient_dir / f"{rec.record_id}.svg").write_text(svg, encoding="utf-8")
        rows.append({"record_id": rec.record_id, "top_class": pe.top_code,
                     "probability": float(p[pe.top_class]), "lead_ranking": " ".join(pe.lead_ranking)})
    pd.DataFrame(rows).to_csv(out_dir / "patients.csv", index=False, lineterminator="\n")

    contrib = lead_contributions(svs, mode=settings.mode)
    csv_path, _ = population_report(contrib, out_dir)
    click.echo(str(csv_path))
