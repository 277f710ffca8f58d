import logging
import platform
import sys
from pathlib import Path
from typing import Callable, List, Optional, TypeVar

import click
from rich.logging import RichHandler
from rich.pretty import pprint

from ._version import __version__
from .config import ExperimentConfig, load_config
from .errors import Error, console
from .report import FORMATS, dumps_json, print_summary, write_text
from .runner import Runner
from .synthetic import generate_synthetic_suite, write_suite

T = TypeVar("T")


class DefaultGroup(click.Group):
    def resolve_command(self, ctx: click.Context, args: List[str]):
        if args and args[0] in self.commands:
            cmd_name = args[0]
            cmd = self.commands[cmd_name]
            return cmd_name, cmd, args[1:]
        if args:
            return "_default", self.commands["_default"], args
        return None, None, []


def setup_logging(verbose: bool = False) -> None:
    handler = RichHandler(console=console, show_path=False, markup=False)
    root = logging.getLogger("hypelab")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def guarded(fn: Callable[..., T], *args, **kwargs) -> T:
    """Run `fn`, turning hypelab errors into a rendered message and exit code."""
    try:
        return fn(*args, **kwargs)
    except Error as e:
        e.show()
        sys.exit(e.exit_code)


def parse_formats(ctx: click.Context, param: click.Parameter, value: Optional[str]):
    if value is None:
        return None
    formats = tuple(f.strip() for f in value.split(",") if f.strip())
    bad = [f for f in formats if f not in FORMATS]
    if bad or not formats:
        raise click.BadParameter(f"expected a comma-separated subset of {', '.join(FORMATS)}")
    return formats


def prepare(
    path: str, out: Optional[str], formats: Optional[tuple[str, ...]], seed: Optional[int]
) -> ExperimentConfig:
    config = load_config(path)
    if seed is not None:
        config = config.with_seed(seed)
    return config.with_output(out, formats)


@click.group(cls=DefaultGroup, context_settings=dict(ignore_unknown_options=True))
@click.version_option(
    version=__version__,
    prog_name="hypelab",
    message=f"%(prog)s, version %(version)s (Python {platform.python_version()})",
)
@click.pass_context
def cli(ctx: click.Context) -> None:
    """Transformer fine-tuning lab for hidden-representation perturbation."""
    pass


@cli.command(
    name="_default",
    context_settings=dict(ignore_unknown_options=False, allow_interspersed_args=True),
)
@click.option(
    "-c",
    "--config",
    "config_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, readable=True),
    help="Experiment config file.",
)
@click.option(
    "--out",
    envvar="HYPELAB_OUT",
    default=None,
    type=click.Path(file_okay=False),
    help="Output directory (overrides [output] dir, env HYPELAB_OUT).",
)
@click.option(
    "--format",
    "formats",
    default=None,
    callback=parse_formats,
    help="Report formats, comma-separated: json,csv.",
)
@click.option("--seed-override", default=None, type=click.IntRange(min=0), help="Pin every seed of the run.")
@click.option(
    "-t",
    "--threads",
    default=1,
    show_default=True,
    type=click.IntRange(min=1),
    help="Parallel workers for grid cells.",
)
@click.option("-v", "--verbose", is_flag=True, default=False, help="Log debug records.")
def default(
    config_path: str,
    out: Optional[str],
    formats: Optional[tuple[str, ...]],
    seed_override: Optional[int],
    threads: int,
    verbose: bool,
) -> None:
    """Run the command of an experiment config."""
    setup_logging(verbose)
    config = guarded(prepare, config_path, out, formats, seed_override)
    report = guarded(Runner(config, threads).run)
    print_summary(report)
    console.print(f"[blue]report written to[/blue] {config.output.dir}")


@cli.command()
@click.option(
    "-c",
    "--config",
    "config_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, readable=True),
    help="Experiment config file.",
)
@click.option(
    "-o",
    "--output",
    type=click.Path(dir_okay=False, writable=True),
    default=None,
    help="Write the resolved config as JSON to this file.",
)
@click.option(
    "-p",
    is_flag=True,
    help="Pretty print the resolved config instead of printing JSON.",
    default=False,
)
def resolve(config_path: str, output: Optional[str], p: bool) -> None:
    """Parse a config and show it with every default filled in."""
    config = guarded(load_config, config_path)
    resolved = config.to_dict()
    if p:
        pprint(resolved, console=console, expand_all=True)
    elif output:
        guarded(write_text, Path(output), dumps_json(resolved))
        click.echo(f"Resolved config saved to {output}")
    else:
        click.echo(dumps_json(resolved), nl=False)


@cli.command()
@click.option(
    "--out",
    required=True,
    type=click.Path(file_okay=False),
    help="Directory for corpus.txt and the task splits.",
)
@click.option("-s", "--seed", default=0, show_default=True, type=click.IntRange(min=0), help="Suite seed.")
@click.option(
    "-f",
    "--format",
    "fmt",
    default="jsonl",
    show_default=True,
    type=click.Choice(["jsonl", "tsv"]),
    help="Dataset file format.",
)
@click.option("--n-train", default=4000, show_default=True, type=click.IntRange(min=1), help="Training examples per task.")
@click.option("--n-dev", default=600, show_default=True, type=click.IntRange(min=1), help="Dev examples per task.")
@click.option(
    "--corpus-size", default=20000, show_default=True, type=click.IntRange(min=1), help="Pretraining corpus sentences."
)
def suite(out: str, seed: int, fmt: str, n_train: int, n_dev: int, corpus_size: int) -> None:
    """Write the synthetic benchmark suite to disk."""
    data = guarded(generate_synthetic_suite, seed, n_train, n_dev, corpus_size)
    written = guarded(write_suite, data, out, fmt)
    click.echo(f"Wrote {len(written)} files to {out}")
