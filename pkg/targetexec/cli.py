"""Command line entry point: run presets, emit configs, list presets."""

from __future__ import annotations

import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path

import click
import pandas as pd

from targetexec import __version__
from targetexec.config import ConfigError, RunConfig, emit_config, parse_config, with_overrides
from targetexec.presets import PRESETS, run_preset
from targetexec.stats_experiments import ExperimentReport

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def _write_outputs(outputs: dict, out_dir: Path, written: list[Path]) -> None:
    for name, item in outputs.items():
        if isinstance(item, ExperimentReport):
            written.extend(item.write(out_dir, name))
        elif isinstance(item, pd.DataFrame):
            path = out_dir / f"{name}.csv"
            item.to_csv(path, index=False)
            written.append(path)
        else:
            raise TypeError(f"cannot write output {name!r} of type {type(item).__name__}")


def run_experiment(config: RunConfig) -> list[Path]:
    """Run the configured preset and write its files plus a manifest.

    On failure every file written so far is removed and the error re-raised.
    """
    out_dir = Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    start = time.perf_counter()
    try:
        outputs = run_preset(config)
        _write_outputs(outputs, out_dir, written)
        manifest = {
            "preset": config.preset,
            "inputs": config.model_dump(mode="json"),
            "master_seed": config.run.master_seed,
            "version": __version__,
            "wall_time_seconds": round(time.perf_counter() - start, 3),
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "files": sorted(p.name for p in written),
        }
        path = out_dir / MANIFEST
        path.write_text(json.dumps(manifest, indent=2))
        written.append(path)
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        logger.error(f"Preset {config.preset} failed, removed {len(written)} partial outputs")
        raise
    logger.info(f"Wrote {len(written)} files to {out_dir}")
    return written


def load_config(config_path: Path | None, preset: str | None) -> RunConfig:
    text = config_path.read_text() if config_path is not None else ""
    return parse_config(text, preset)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose: bool):
    """Simulate target-based liquidation strategies."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="YAML config document.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Preset providing defaults (overrides the document's own).")
@click.option("--paths", "n_paths", type=int, default=None, help="Number of simulated paths.")
@click.option("--dt", type=float, default=None, help="Euler time step.")
@click.option("--seed", "master_seed", type=int, default=None, help="Master seed.")
@click.option("--out", "directory", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--threads", type=int, default=None, help="Worker processes; results do not depend on it.")
@click.option("--strategy", type=str, default=None, help="Strategy label, e.g. p1, p0, ac, constant:0.5, external:rates.csv.")
def run(config_path, preset, n_paths, dt, master_seed, directory, threads, strategy):
    """Run an experiment preset and write CSV/JSON outputs."""
    try:
        config = load_config(config_path, preset)
        config = with_overrides(
            config,
            run={"n_paths": n_paths, "dt": dt, "master_seed": master_seed, "threads": threads, "strategy": strategy},
            output={"directory": directory},
        )
        written = run_experiment(config)
    except ConfigError as e:
        raise click.ClickException(str(e)) from e
    except ValueError as e:
        raise click.ClickException(f"experiment failed: {e}") from e
    click.echo(f"{config.preset}: wrote {len(written)} files to {config.output.directory}")


@main.command("emit-config")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="YAML config document.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Preset providing defaults.")
def emit_config_cmd(config_path, preset):
    """Print the fully resolved config document."""
    try:
        config = load_config(config_path, preset)
    except ConfigError as e:
        raise click.ClickException(str(e)) from e
    click.echo(emit_config(config), nl=False)


@main.command("list-presets")
def list_presets():
    """List the experiment presets."""
    for name, preset in PRESETS.items():
        click.echo(f"{name:<10} {preset.description}")


if __name__ == "__main__":
    main()
