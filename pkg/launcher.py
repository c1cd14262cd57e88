# Core Imports
import os
import sys
from typing import Optional, Tuple

# Third Party Packages
import click
import dotenv

# Local Imports
from core.errors import CommittorError, ConfigError
from utils.manifest import format_report, report

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


@click.group()
def cli() -> None:
    """Neural committor experiments"""
    # Load our dotenv file
    dotenv.load_dotenv()


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option(
    "--set", "overrides", multiple=True, metavar="KEY=VALUE",
    help="Override a config key, e.g. --set dastr.N_adaptive=2",
)
@click.option(
    "--resume", "resume", default=None, type=click.Path(file_okay=False), metavar="RUN_DIR",
    help="Continue after the last stage checkpoint saved in RUN_DIR",
)
def run(config: str, overrides: Tuple[str, ...], resume: Optional[str]) -> None:
    """Run the experiment described by CONFIG"""
    # Imported here so `report` works without loading the experiments
    from runner import ExperimentRunner

    runner = ExperimentRunner()
    try:
        if resume is not None:
            overrides = (*overrides, f"dastr.resume_from={runner.latest_checkpoint(resume)}")
        manifest = runner.run(config, overrides)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except CommittorError as e:
        click.echo(f"run failed: {e}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(manifest.directory)


@cli.command(name="report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(file_okay=False))
def report_command(run_dirs: Tuple[str, ...]) -> None:
    """Mean and SD of the summary metrics over RUN_DIRS"""
    try:
        rows = report(run_dirs)
    except CommittorError as e:
        click.echo(f"report failed: {e}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(format_report(rows))


@cli.command()
@click.option("--pytest-args", default="", help="Extra arguments passed to pytest")
def selftest(pytest_args: str) -> None:
    """Run the invariant test suites"""
    import pytest

    tests = os.path.join(os.path.dirname(os.path.abspath(__file__)), "tests")
    sys.exit(pytest.main([tests, "-m", "invariant", *pytest_args.split()]))


if __name__ == "__main__":
    cli()
