"""
Expected-gradients attribution for ECGLens
Patient-level explanations and population-level lead contribution rates
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator

from . import flags
from .autodiff import Tensor, no_grad
from .errors import ContributionError, DataValidationError, ShapeError
from .layers import Module
from .render import render_population_svg
from .schemas import CLASS_CODES, LEAD_NAMES
from .utils import chunks, spawn_rng

logger = logging.getLogger(__name__)

Scorer = Callable[[Tensor], Tensor]


class ShapMatrix(BaseModel):
    """Attributions for one input: values[class, timestep, lead]."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    record_id: str = ""
    lead_names: List[str]
    classes: List[int] = Field(..., description="Model output index of each values row")
    background: str = ""
    n_mc_samples: int = Field(..., ge=1)

    @field_validator("values")
    @classmethod
    def _finite_3d(cls, v):
        if v.ndim != 3:
            raise ValueError(f"values must be [classes, nsteps, leads], got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("attributions contain NaN or Inf")
        return v

    def for_class(self, class_index: int) -> np.ndarray:
        """[nsteps, leads] submatrix for a model output index."""
        if class_index not in self.classes:
            raise KeyError(f"class {class_index} was not explained (have {self.classes})")
        return self.values[self.classes.index(class_index)]


class PatientExplanation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    top_class: int
    top_code: str
    submatrix: np.ndarray
    lead_ranking: List[str]
    lead_mass: List[float]


class LeadContribution(BaseModel):
    """Per-class lead sums (c), normalized rates (r) and per-lead average rate (r_bar)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    c: np.ndarray
    r: np.ndarray
    r_bar: np.ndarray
    lead_names: List[str]
    class_names: List[str]
    mode: Literal["absolute", "signed"]
    n_patients: int
    degenerate_classes: List[str] = Field(default_factory=list)


@contextmanager
def frozen(model) -> Iterator[None]:
    """Stop parameter gradients (and put modules in eval mode) while explaining."""
    params = model.parameters() if isinstance(model, Module) else []
    previous = [p.requires_grad for p in params]
    was_training = isinstance(model, Module) and model.training
    if isinstance(model, Module):
        model.eval()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, previous):
            p.requires_grad = flag
        if was_training:
            model.train()


def expected_gradients(model: Scorer, x: np.ndarray, background: np.ndarray, n_samples: int = 200,
                       seed: int = 0, stream_keys: Sequence[int] = (),
                       classes: Optional[Sequence[int]] = None, batch_size: Optional[int] = None,
                       record_id: str = "", lead_names: Optional[Sequence[str]] = None) -> ShapMatrix:
    """
    Monte Carlo expected-gradients attributions for one input.

    For each sample m a reference x'_m is drawn uniformly from the background
    and alpha_m uniformly from (0, 1); the attribution is the mean over m of
    (x - x'_m) * grad f_i evaluated at x'_m + alpha_m (x - x'_m).

    Args:
        model: Callable mapping Tensor [B, leads, nsteps] to Tensor [B, n_out]
        x: Input [leads, nsteps]
        background: Reference inputs [Nb, leads, nsteps]
        n_samples: Monte Carlo samples M
        seed: Run seed (explain stream)
        stream_keys: Extra stream keys, e.g. the record index
        classes: Output indices to explain (all when None)
        batch_size: Interpolated inputs per forward pass
        record_id: Stored on the result
        lead_names: Stored on the result

    Returns:
        ShapMatrix with values [len(classes), nsteps, leads]

    Raises:
        DataValidationError: Empty background or n_samples < 1
        ShapeError: Background shape differs from x
    """
    x = np.asarray(x, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 3 or len(background) == 0:
        raise DataValidationError(f"background must be a non-empty [N, leads, nsteps] array, got {background.shape}")
    if background.shape[1:] != x.shape:
        raise ShapeError(f"background samples {background.shape[1:]} do not match input {x.shape}")
    if n_samples < 1:
        raise DataValidationError(f"n_samples must be >= 1, got {n_samples}")
    batch_size = batch_size or flags.EXPLAIN_BATCH_SIZE

    rng = spawn_rng(seed, "explain", *stream_keys)
    refs = rng.integers(0, len(background), size=n_samples)
    alphas = rng.uniform(0.0, 1.0, size=n_samples)

    totals = None
    selected: List[int] = []
    with frozen(model):
        for start, stop in chunks(n_samples, batch_size):
            baseline = background[refs[start:stop]]
            delta = x[None] - baseline
            point = Tensor(baseline + alphas[start:stop, None, None] * delta, requires_grad=True)
            out = model(point)
            if totals is None:
                selected = list(range(out.shape[1])) if classes is None else [int(c) for c in classes]
                bad = [c for c in selected if not 0 <= c < out.shape[1]]
                if bad:
                    raise ShapeError(f"class indices {bad} out of range for {out.shape[1]} outputs")
                totals = np.zeros((len(selected),) + x.shape)
            for row, c in enumerate(selected):
                point.grad = None
                out[:, c].sum().backward()
                totals[row] += (delta * point.grad).sum(axis=0)

    values = np.ascontiguousarray((totals / n_samples).transpose(0, 2, 1))
    names = list(lead_names) if lead_names is not None else LEAD_NAMES[: x.shape[0]]
    return ShapMatrix(values=values, record_id=record_id, lead_names=names, classes=selected,
                      background=f"{len(background)} reference inputs", n_mc_samples=n_samples)


def model_outputs(model: Scorer, x: np.ndarray, batch_size: Optional[int] = None) -> np.ndarray:
    """Forward pass without a tape, in chunks; modules run in eval mode."""
    batch_size = batch_size or flags.EVAL_BATCH_SIZE
    with frozen(model), no_grad():
        parts = [model(Tensor(x[start:stop])).data for start, stop in chunks(len(x), batch_size)]
    return np.concatenate(parts, axis=0)


def output_shift(model: Scorer, x: np.ndarray, background: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    """f(x) - mean background f for the given output indices."""
    fx = model_outputs(model, np.asarray(x)[None])[0]
    fb = model_outputs(model, np.asarray(background)).mean(axis=0)
    return (fx - fb)[list(classes)]


def completeness_gap(model: Scorer, x: np.ndarray, background: np.ndarray, sv: ShapMatrix) -> np.ndarray:
    """
    Sum of attributions minus (f(x) - mean background f), per explained class.

    Returns:
        Array [len(sv.classes)]
    """
    return sv.values.sum(axis=(1, 2)) - output_shift(model, x, background, sv.classes)


def sample_background(x_pool: np.ndarray, size: int, seed: int = 0) -> np.ndarray:
    """Draw up to size reference inputs uniformly without replacement (background stream)."""
    if len(x_pool) == 0:
        raise DataValidationError("background pool is empty")
    rng = spawn_rng(seed, "background")
    idx = rng.choice(len(x_pool), size=min(size, len(x_pool)), replace=False)
    return x_pool[idx]


def explain_batch(model: Scorer, x: np.ndarray, background: np.ndarray, record_ids: Sequence[str],
                  lead_names: Sequence[str], n_samples: int = 200, seed: int = 0,
                  classes: Optional[Sequence[int]] = None, jobs: int = 1) -> List[ShapMatrix]:
    """Attribute every record of x; record i uses explain stream key i."""
    if len(record_ids) != len(x):
        raise ShapeError(f"{len(record_ids)} record ids for {len(x)} inputs")
    results = Parallel(n_jobs=jobs)(
        delayed(expected_gradients)(model, x[i], background, n_samples=n_samples, seed=seed,
                                    stream_keys=(i,), classes=classes, record_id=record_ids[i],
                                    lead_names=lead_names)
        for i in range(len(x))
    )
    logger.info(f"Explained {len(results)} records with {n_samples} samples each")
    return list(results)


def patient_explanation(sv: ShapMatrix, probs: np.ndarray) -> PatientExplanation:
    """
    Top predicted class (ties to the smallest index) and its lead influence ranking.

    Leads are ranked by the sum over time of |attribution|, descending; equal
    mass keeps lead order.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    top = int(np.argmax(probs))
    sub = sv.for_class(top)
    mass = np.abs(sub).sum(axis=0)
    order = np.argsort(-mass, kind="stable")
    code = CLASS_CODES[top] if len(probs) == len(CLASS_CODES) else str(top)
    return PatientExplanation(
        top_class=top,
        top_code=code,
        submatrix=sub,
        lead_ranking=[sv.lead_names[k] for k in order],
        lead_mass=[float(mass[k]) for k in order],
    )


def lead_contributions(svs: Sequence[ShapMatrix],
                       mode: Literal["absolute", "signed"] = "absolute") -> LeadContribution:
    """
    Aggregate attributions over patients into lead contribution rates.

    c[i, k] sums v(sv[i, j, k]) over patients and timesteps, with v the
    identity (signed) or |.| (absolute); r normalizes each class row over
    leads; r_bar is the per-lead mean of r over classes. Classes whose row
    sum is zero get a NaN row, are listed in degenerate_classes and are left
    out of r_bar.

    Raises:
        ContributionError: No matrices, or every class row is degenerate
        ShapeError: Matrices disagree on classes or leads
    """
    if not svs:
        raise ContributionError("no attribution matrices to aggregate")
    if mode not in ("absolute", "signed"):
        raise ValueError(f"mode must be 'absolute' or 'signed', got {mode!r}")
    first = svs[0]
    for sv in svs[1:]:
        if sv.classes != first.classes or sv.lead_names != first.lead_names:
            raise ShapeError(f"attribution matrix {sv.record_id!r} disagrees on classes or leads")

    transform = np.abs if mode == "absolute" else (lambda a: a)
    c = np.zeros((len(first.classes), len(first.lead_names)))
    for sv in svs:
        c += transform(sv.values).sum(axis=1)

    class_names = [CLASS_CODES[i] if i < len(CLASS_CODES) else str(i) for i in first.classes]
    row_sums = c.sum(axis=1)
    degenerate = row_sums == 0
    if degenerate.all():
        raise ContributionError(f"every class has zero total attribution in {mode} mode")
    r = np.full_like(c, np.nan)
    r[~degenerate] = c[~degenerate] / row_sums[~degenerate, None]
    names = [class_names[i] for i in np.flatnonzero(degenerate)]
    if names:
        logger.warning(f"Zero attribution sum for {', '.join(names)}; contribution rates undefined")

    return LeadContribution(
        c=c, r=r, r_bar=r[~degenerate].mean(axis=0), lead_names=list(first.lead_names),
        class_names=class_names, mode=mode, n_patients=len(svs), degenerate_classes=names,
    )


def population_table(contrib: LeadContribution) -> pd.DataFrame:
    """Class x lead grid of r plus a final AVG row holding r_bar."""
    table = pd.DataFrame(contrib.r, index=contrib.class_names, columns=contrib.lead_names)
    table.loc["AVG"] = contrib.r_bar
    table.index.name = "class"
    return table


def population_report(contrib: LeadContribution, out_dir: Union[str, Path],
                      stem: str = "population") -> Tuple[Path, Path]:
    """
    Write the contribution grid as CSV (header `class,<leads>`) and as an SVG heat map.

    Returns:
        Tuple (csv path, svg path)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    population_table(contrib).to_csv(csv_path, lineterminator="\n")
    svg_path = out_dir / f"{stem}.svg"
    svg_path.write_text(render_population_svg(contrib), encoding="utf-8")
    logger.info(f"Population report written to {csv_path} and {svg_path}")
    return csv_path, svg_path
