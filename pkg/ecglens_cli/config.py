"""
Run configuration for the ECGLens CLI
Config file, explicit flags and ECGLENS_* environment variables merged into one RunConfig
"""
import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import click
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from ecglens.schemas import AugmentConfig, BaselineConfig, ExplainConfig
from ecglens.utils import deep_merge, dump_yaml, load_yaml

from .models import DataSection, ModelSection, SynthSection, TrainSection

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "run_config.yaml"


class RunConfig(BaseSettings):
    """Fully resolved settings for one command invocation"""

    model_config = SettingsConfigDict(
        env_prefix="ECGLENS_",
        env_nested_delimiter="__",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    seed: int = 0
    jobs: int = Field(1, ge=1)
    out: str = "runs"

    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    explain: ExplainConfig = Field(default_factory=ExplainConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    synth: SynthSection = Field(default_factory=SynthSection)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def set_override(overrides: Dict[str, Any], dotted: str, value: Any):
    """Place a flag value at a dotted key ("data.folds"); None means the flag was not given."""
    if value is None:
        return
    node = overrides
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def load_run_config(config_path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve the run configuration.

    Explicit flags win over the config file; environment variables fill
    whatever neither sets; model defaults cover the rest.

    Args:
        config_path: Optional YAML file with the RunConfig sections
        overrides: Nested dict built from explicitly passed flags

    Returns:
        RunConfig

    Raises:
        click.UsageError: Unknown keys or invalid values
    """
    file_values: Dict[str, Any] = {}
    if config_path is not None:
        try:
            file_values = load_yaml(config_path)
        except (OSError, ValueError) as e:
            raise click.UsageError(f"cannot read config file {config_path}: {e}")
        unknown = sorted(set(file_values) - set(RunConfig.model_fields))
        if unknown:
            raise click.UsageError(f"unknown config section(s) in {config_path}: {', '.join(unknown)}")
    merged = deep_merge(file_values, overrides or {})
    try:
        config = RunConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise click.UsageError(f"invalid configuration value for {location}: {first['msg']}")
    logger.debug(f"Resolved run config: {config.model_dump()}")
    return config


def write_resolved_config(config: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> Path:
    """Write the resolved settings next to the outputs so the run can be repeated with --config."""
    out_dir = Path(out_dir) if out_dir is not None else config.out_dir
    return dump_yaml(config.model_dump(mode="json"), out_dir / RESOLVED_CONFIG_NAME)


def common_options(func: Callable) -> Callable:
    """Flags shared by every sub-command: --config, --seed, --out, --jobs."""
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="YAML run configuration; explicit flags override it")
    @click.option("--seed", type=int, default=None, help="Run seed (all randomness derives from it)")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory")
    @click.option("--jobs", type=click.IntRange(min=1), default=None, help="Parallel workers")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)
    return wrapper


def data_options(func: Callable) -> Callable:
    """Flags describing the input data: --data, --fs, --nsteps, --leads, --folds."""
    @click.option("--data", "manifest", type=click.Path(dir_okay=False), default=None,
                  help="Dataset manifest CSV")
    @click.option("--fs", type=click.FloatRange(min=0, min_open=True), default=None,
                  help="Sampling rate for records without an fs manifest column")
    @click.option("--nsteps", type=click.IntRange(min=1), default=None, help="Samples fed to the network")
    @click.option("--leads", default=None, help="Comma-separated lead subset, e.g. I,II")
    @click.option("--folds", type=click.IntRange(min=3), default=None, help="Cross-validation folds")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)
    return wrapper


def base_overrides(seed=None, out=None, jobs=None, manifest=None, fs=None, nsteps=None,
                   leads=None, folds=None) -> Dict[str, Any]:
    """Nested override dict for the shared flags."""
    overrides: Dict[str, Any] = {}
    set_override(overrides, "seed", seed)
    set_override(overrides, "out", out)
    set_override(overrides, "jobs", jobs)
    set_override(overrides, "data.manifest", manifest)
    set_override(overrides, "data.fs", fs)
    set_override(overrides, "data.nsteps", nsteps)
    set_override(overrides, "data.leads", leads)
    set_override(overrides, "data.folds", folds)
    return overrides


def require_manifest(config: RunConfig) -> Path:
    if not config.data.manifest:
        raise click.UsageError("no dataset given: pass --data or set data.manifest in the config file")
    return Path(config.data.manifest)
