"""
SVG rendering for ECGLens
Patient explanations, lead contribution heat maps, confusion matrices and baseline comparisons
"""
import io
import logging
from typing import TYPE_CHECKING, Optional, Sequence

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from .errors import ShapeError
from .schemas import CLASS_CODES, EcgRecord

if TYPE_CHECKING:
    from .explain import LeadContribution

logger = logging.getLogger(__name__)

TRACE_COLOR = "#1f4e79"
HIGHLIGHT_COLOR = "#d62728"

# Fixed id salt and no timestamp keep SVG output byte-stable across runs.
SVG_RC = {"svg.hashsalt": "ecglens", "svg.fonttype": "none"}


def figure_to_svg(fig: Figure) -> str:
    buffer = io.StringIO()
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def render_explanation_svg(rec: EcgRecord, sv_l: np.ndarray, leads_to_show: int = 2,
                           window_seconds: float = 10.0, highlight_percentile: float = 95.0,
                           title: Optional[str] = None) -> str:
    """
    Plot the last window of the most influential leads with salient samples highlighted.

    Leads are ranked by total |attribution|. A sample is highlighted when its
    |attribution| exceeds the given percentile of that lead's |attributions|.
    Each trace group has id `lead-trace-<lead>` and each highlight group
    `lead-highlight-<lead>`.

    Args:
        rec: Record that was explained (already length-fixed)
        sv_l: [nsteps, leads] attributions for the displayed class
        leads_to_show: Number of leads (clamped to the record's lead count)
        window_seconds: Trailing window to display
        highlight_percentile: Highlight cutoff percentile
        title: Optional figure title

    Returns:
        SVG document as a string

    Raises:
        ShapeError: sv_l does not match the record, or the window is longer than the record
    """
    sv_l = np.asarray(sv_l, dtype=np.float64)
    if sv_l.shape != (rec.n_samples, rec.n_leads):
        raise ShapeError(f"attributions {sv_l.shape} do not match record ({rec.n_samples}, {rec.n_leads})")
    window = int(round(window_seconds * rec.fs))
    if window > rec.n_samples:
        raise ShapeError(
            f"window of {window_seconds} s ({window} samples) is longer than the record ({rec.n_samples} samples)"
        )
    if window < 1:
        raise ShapeError(f"window of {window_seconds} s contains no samples at {rec.fs} Hz")

    magnitude = np.abs(sv_l)
    ranking = np.argsort(-magnitude.sum(axis=0), kind="stable")[: min(leads_to_show, rec.n_leads)]
    start = rec.n_samples - window
    t = (start + np.arange(window)) / rec.fs

    fig = Figure(figsize=(10, 2.4 * len(ranking)))
    axes = fig.subplots(len(ranking), 1, squeeze=False)[:, 0]
    for ax, k in zip(axes, ranking):
        name = rec.lead_names[k]
        trace = rec.signal[k, start:]
        (line,) = ax.plot(t, trace, color=TRACE_COLOR, linewidth=0.8)
        line.set_gid(f"lead-trace-{name}")
        cutoff = np.percentile(magnitude[:, k], highlight_percentile)
        mask = magnitude[start:, k] > cutoff
        if mask.any():
            points = ax.scatter(t[mask], trace[mask], color=HIGHLIGHT_COLOR, s=6, zorder=3)
            points.set_gid(f"lead-highlight-{name}")
        ax.set_ylabel("Amplitude (mV)")
        ax.set_title(f"Lead {name}", fontsize=9, loc="left")
    axes[-1].set_xlabel("Time (s)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return figure_to_svg(fig)


def _annotated_grid(ax, grid: np.ndarray, fmt: str = "{:.2f}"):
    mesh = ax.pcolormesh(np.ma.masked_invalid(grid), cmap="viridis", vmin=0.0, vmax=max(1e-12, np.nanmax(grid)))
    for (i, j), value in np.ndenumerate(grid):
        label = "n/a" if np.isnan(value) else fmt.format(value)
        ax.text(j + 0.5, i + 0.5, label, ha="center", va="center", fontsize=7, color="white")
    ax.invert_yaxis()
    return mesh


def render_population_svg(contrib: "LeadContribution") -> str:
    """Heat map of contribution rates: one row per class plus the AVG row."""
    grid = np.vstack([contrib.r, contrib.r_bar[None, :]])
    rows = list(contrib.class_names) + ["AVG"]
    fig = Figure(figsize=(1.0 + 0.7 * len(contrib.lead_names), 1.0 + 0.45 * len(rows)))
    ax = fig.subplots()
    mesh = _annotated_grid(ax, grid)
    mesh.set_gid("contribution-heatmap")
    ax.set_xticks(np.arange(len(contrib.lead_names)) + 0.5, labels=contrib.lead_names)
    ax.set_yticks(np.arange(len(rows)) + 0.5, labels=rows)
    ax.set_xlabel("Lead")
    ax.set_title(f"Lead contribution rate ({contrib.mode}, {contrib.n_patients} records)")
    fig.colorbar(mesh, ax=ax)
    fig.tight_layout()
    return figure_to_svg(fig)


def render_confusion_svg(matrices: np.ndarray, class_names: Sequence[str] = CLASS_CODES,
                         title: Optional[str] = None) -> str:
    """One row-normalized 2x2 panel per class (truth rows, prediction columns); empty rows show n/a."""
    n = len(matrices)
    cols = min(n, 5)
    rows = int(np.ceil(n / cols))
    fig = Figure(figsize=(2.2 * cols, 2.3 * rows))
    axes = np.atleast_1d(fig.subplots(rows, cols, squeeze=False).ravel())
    for ax, matrix, name in zip(axes, matrices, class_names):
        mesh = _annotated_grid(ax, matrix)
        mesh.set_gid(f"confusion-{name}")
        ax.set_xticks([0.5, 1.5], labels=["pred 0", "pred 1"], fontsize=7)
        ax.set_yticks([0.5, 1.5], labels=["true 0", "true 1"], fontsize=7)
        ax.set_title(name, fontsize=9)
    for ax in axes[n:]:
        ax.set_visible(False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return figure_to_svg(fig)


def render_comparison_svg(comparison: pd.DataFrame) -> str:
    """Grouped bars of per-class F1, one bar group per class and one color per model."""
    table = comparison.pivot(index="class", columns="model", values="f1")
    table = table.reindex([c for c in comparison["class"].drop_duplicates()])
    models = list(comparison["model"].drop_duplicates())
    fig = Figure(figsize=(1.0 + 0.9 * len(table), 3.5))
    ax = fig.subplots()
    width = 0.8 / max(len(models), 1)
    x = np.arange(len(table))
    for i, model in enumerate(models):
        ax.bar(x + i * width - 0.4 + width / 2, table[model].to_numpy(), width, label=model)
    ax.set_xticks(x, labels=list(table.index))
    ax.set_ylim(0, 1)
    ax.set_ylabel("F1")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return figure_to_svg(fig)
