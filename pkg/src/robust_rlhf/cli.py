"""Command line entry point: ``robust-rlhf run CONFIG`` and ``robust-rlhf diagnose CONFIG``."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .contamination import ATTACK_ALIASES
from .experiment import THREADS_ENV, default_threads, diagnose, run_experiment
from .io import ConfigError, load_config
from .pipelines import ORACLES

__all__ = ["main"]


def _load(config_path, oracle, attack):
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None
    if oracle is not None:
        cfg.oracle = oracle
    if attack is not None:
        cfg.attack = attack
    return cfg


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress and per-cell failures.")
def main(verbose):
    """Corruption-robust offline RLHF experiments on finite linear MDPs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--oracle", type=click.Choice(ORACLES), default=None, help="Override the config's oracle.")
@click.option("--attack", type=click.Choice(sorted(ATTACK_ALIASES)), default=None, help="Override the config's attack.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path; the sidecar JSON goes next to it.")
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    default=None,
    help=f"Worker threads (default: config value, then ${THREADS_ENV}, then 1).",
)
def run(config, oracle, attack, out, threads):
    """Run every (epsilon, seed) cell of CONFIG and write CSV plus sidecar JSON."""
    cfg = _load(config, oracle, attack)
    if threads is None and cfg.threads is None:
        try:
            threads = default_threads()
        except ValueError as exc:
            raise click.ClickException(str(exc)) from None
    out_path = Path(out) if out is not None else Path(cfg.output)
    records = run_experiment(cfg, out_path, threads)
    failed = sum(1 for r in records if r.error)
    click.echo(f"wrote {len(records)} rows to {out_path} ({failed} failed cells)")


@main.command("diagnose")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--oracle", type=click.Choice(ORACLES), default=None, help="Accepted for symmetry with run.")
@click.option("--attack", type=click.Choice(sorted(ATTACK_ALIASES)), default=None, help="Accepted for symmetry with run.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Also write the report as JSON here.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Unused; accepted for symmetry with run.")
def diagnose_cmd(config, oracle, attack, out, threads):
    """Print coverage constants and rate bounds for the instance in CONFIG."""
    cfg = _load(config, oracle, attack)
    report = diagnose(cfg)
    text = json.dumps(report, indent=2)
    click.echo(text)
    if out is not None:
        Path(out).write_text(text + "\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
