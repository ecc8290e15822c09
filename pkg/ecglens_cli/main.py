"""
ECGLens command-line entry point
Synthetic data, training, evaluation, explanation and baselines from one click group
"""
import logging

import click

from ecglens import __version__, flags
from ecglens.errors import EcgLensError

from .commands.baseline import baseline
from .commands.describe import describe
from .commands.evaluate import evaluate
from .commands.explain import explain
from .commands.sweep_leads import sweep_leads
from .commands.synth import synth
from .commands.train import train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class EcgLensGroup(click.Group):
    """Maps runtime failures to exit code 1 with the message on stderr; usage errors keep exit 2."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except (EcgLensError, OSError, ValueError, KeyError) as e:
            logger.debug("Command failed", exc_info=True)
            raise click.ClickException(str(e))


@click.group(cls=EcgLensGroup)
@click.version_option(__version__, prog_name="ecglens")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
def cli(verbose: bool):
    """Explainable multi-label ECG classification."""
    logging.basicConfig(
        level=logging.DEBUG if verbose or flags.DEBUG_MODE else logging.INFO,
        format=LOG_FORMAT,
    )


cli.add_command(synth)
cli.add_command(train)
cli.add_command(evaluate)
cli.add_command(explain)
cli.add_command(baseline)
cli.add_command(describe)
cli.add_command(sweep_leads)


def main():
    cli()


if __name__ == "__main__":
    main()
