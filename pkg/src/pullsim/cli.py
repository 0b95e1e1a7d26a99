"""Command-line entry point: ``pullsim generate|train|eval-sim|control|infer``."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import harness
from .control.mpc import JacobianError
from .nets import DivergenceError
from .surrogate import SurrogateError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _common(fn):
    fn = click.option("--out", "out", required=True, type=click.Path(file_okay=False),
                      help="Output directory shared by all commands.")(fn)
    fn = click.option("--seed", default=0, show_default=True, type=click.IntRange(min=0),
                      help="Master seed.")(fn)
    fn = click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
                      help="Experiment JSON.")(fn)
    return fn


def _load(config: str, hidden: int | None = None) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(config)
    return cfg.with_hidden(hidden) if hidden else cfg


def _echo_json(data) -> None:
    click.echo(json.dumps(data, indent=1, sort_keys=True))


@click.group()
def cli():
    """Physics-informed simulation and control of a soft-actuator coin-pulling task."""


@cli.command()
@_common
@click.option("--setup", "setups", multiple=True, help="Only these setups (repeatable).")
def generate(config, seed, out, setups):
    """Simulate the surrogate and write one dataset CSV per setup."""
    counts = harness.generate(_load(config), out, list(setups) or None)
    _echo_json(counts)


@cli.command()
@_common
@click.option("--rotation", "rotations", multiple=True, type=click.IntRange(min=1),
              help="1-based rotation to train (repeatable); default all.")
@click.option("--hidden", type=click.IntRange(min=1), default=None,
              help="Width of every hidden layer (default from config).")
@click.option("--what", type=click.Choice(["all", "sim", "control"]), default="all",
              show_default=True, help="Rotation models, control models, or both.")
def train(config, seed, out, rotations, hidden, what):
    """Fit the physics-informed models and baselines."""
    cfg = _load(config, hidden)
    timing = {}
    if what in ("all", "sim"):
        chosen = [r - 1 for r in rotations] or range(len(cfg.rotations))
        for k in chosen:
            if k >= len(cfg.rotations):
                raise harness.ConfigError(f"rotation {k + 1} not in config")
            start = time.perf_counter()
            harness.train_rotation(cfg, out, k, seed)
            timing[f"rotation{k + 1}_s"] = time.perf_counter() - start
            click.echo(f"rotation {k + 1} trained")
    if what in ("all", "control"):
        start = time.perf_counter()
        harness.train_control_models(cfg, out, seed)
        timing["control_s"] = time.perf_counter() - start
        click.echo("control models trained")
    harness.write_json(Path(out) / "models" / "timing.json", timing)


@cli.command("eval-sim")
@_common
@click.option("--rotation", "rotations", multiple=True, type=click.IntRange(min=1),
              help="1-based rotation to evaluate (repeatable); default all.")
def eval_sim(config, seed, out, rotations):
    """Roll out trained models on their test setups and report errors."""
    cfg = _load(config)
    _, summary = harness.eval_sim(cfg, out, [r - 1 for r in rotations] or None)
    _echo_json(summary)


@cli.command()
@_common
@click.option("--policy", type=click.Choice(harness.POLICIES), required=True)
@click.option("--setup", required=True, help="Test setup, e.g. C1.")
@click.option("--episodes", type=click.IntRange(min=1), default=None)
@click.option("--sigma-obs", type=click.FloatRange(min=0.0), default=None,
              help="Observation noise in metres (default from config).")
@click.option("--max-iters", type=click.IntRange(min=1), default=None)
def control(config, seed, out, policy, setup, episodes, sigma_obs, max_iters):
    """Closed-loop control episodes of one policy."""
    summary = harness.run_control(_load(config), out, policy, setup, seed, episodes,
                                  sigma_obs, max_iters)
    _echo_json(summary)


@cli.command()
@_common
@click.option("--setup", required=True, help="Test setup, e.g. C1.")
@click.option("--episodes", type=click.IntRange(min=1), default=None)
@click.option("--sigma-obs", type=click.FloatRange(min=0.0), default=None,
              help="Observation noise in metres (default from config).")
@click.option("--max-iters", type=click.IntRange(min=1), default=None)
def infer(config, seed, out, setup, episodes, sigma_obs, max_iters):
    """Infer coin mass and ground friction online under MPC."""
    summary = harness.run_inference(_load(config), out, setup, seed, episodes, sigma_obs,
                                    max_iters)
    _echo_json(summary)


def main(argv=None) -> int:
    """Run the CLI, mapping failures to exit codes (2 config, 3 numerical)."""
    try:
        cli.main(args=argv, prog_name="pullsim", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except (harness.ConfigError, FileNotFoundError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except (FloatingPointError, DivergenceError, JacobianError, SurrogateError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
