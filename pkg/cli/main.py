#!/usr/bin/env python
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Optional

import click
import numpy as np

from config.settings import NOISE_MODELS, PRESETS, RunConfig
from core.errors import ConfigError, DatasetError, EstimationError, EvaluationError, FusionError
from core.io.dataset import DATASET_FILE, TRUTH_FILE, read_dataset, write_simulation
from core.io.diagnostics import DiagnosticsLog
from core.io.trajectory_file import TrajectoryWriter, read_trajectory
from core.pipeline import FusionPipeline
from core.simulator.evaluation import ATTITUDE, AXES, evaluate
from core.simulator.generator import generate
from core.simulator.scenario import Scenario

TRAJECTORY_FILE = "trajectory.csv"
DIAGNOSTICS_FILE = "diagnostics.jsonl"

EXIT_USAGE_ERROR = 1
EXIT_DATA_ERROR = 2
EXIT_ESTIMATION_ERROR = 3


# Custom JSON encoder for NumPy values
class NumpyEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.generic):
            return obj.item()
        return json.JSONEncoder.default(self, obj)


def _fail(message: str, code: int, debug: bool = False) -> None:
    click.secho(f"Error: {message}", fg='red', err=True)
    if debug:
        click.echo("\nDetailed error information:", err=True)
        click.echo(traceback.format_exc(), err=True)
    sys.exit(code)


class FusionGroup(click.Group):
    """Command group that reports usage errors with their own exit code."""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE_ERROR
            raise

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE_ERROR
            raise


@click.group(cls=FusionGroup)
@click.option('--verbose', is_flag=True, help='Enable debug logging')
@click.pass_context
def cli(ctx: click.Context, verbose: bool):
    """Radar / IMU / GNSS tightly coupled fusion"""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option('--scenario', 'scenario_path', required=True, type=click.Path(dir_okay=False), help='Scenario JSON file')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory')
@click.option('--seed', type=int, help='Override the scenario seed')
@click.pass_context
def simulate(ctx: click.Context, scenario_path: str, out_dir: str, seed: Optional[int]):
    """Generate a synthetic dataset and its ground truth."""
    debug = ctx.obj.get("verbose", False)
    try:
        scenario = Scenario.from_file(scenario_path)
        if seed is not None:
            scenario = scenario.with_seed(seed)
        click.echo(f"Simulating '{scenario.name}' ({scenario.duration:g} s, seed {scenario.seed})...")
        counts = write_simulation(out_dir, generate(scenario))
    except (ConfigError, DatasetError) as e:
        _fail(str(e), EXIT_DATA_ERROR, debug)
    except OSError as e:
        _fail(f"Cannot write to {out_dir}: {e}", EXIT_DATA_ERROR, debug)

    click.echo(f"Dataset written to {Path(out_dir) / DATASET_FILE}")
    click.echo(f"Ground truth written to {Path(out_dir) / TRUTH_FILE}")
    for kind in sorted(counts):
        click.echo(f"  {kind}: {counts[kind]}")


def _load_config(config_path: Optional[str]) -> RunConfig:
    if config_path:
        return RunConfig.from_file(config_path)
    return RunConfig.from_env()


@cli.command()
@click.option('--data', 'data_path', required=True, type=click.Path(), help='Dataset directory or file')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='Run configuration JSON file')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory')
@click.option('--preset', type=click.Choice(sorted(PRESETS)), help='Named ablation configuration')
@click.option('--noise-model', type=click.Choice(NOISE_MODELS), help='Override the pseudorange noise model')
@click.option('--no-radar', is_flag=True, help='Disable radar velocity factors')
@click.option('--no-tdcp', is_flag=True, help='Disable TDCP factors')
@click.pass_context
def fuse(ctx: click.Context, data_path: str, config_path: Optional[str], out_dir: str,
         preset: Optional[str], noise_model: Optional[str], no_radar: bool, no_tdcp: bool):
    """Run the fusion pipeline over a dataset."""
    debug = ctx.obj.get("verbose", False)
    try:
        config = _load_config(config_path)
        # Override configuration with command-line options if provided
        if preset:
            config.ablation.preset = preset
        if noise_model:
            config.ablation.noise_model = noise_model
        if no_radar:
            config.ablation.enable_radar = False
        if no_tdcp:
            config.ablation.enable_tdcp = False

        dataset = Path(data_path)
        if dataset.is_dir():
            dataset = dataset / DATASET_FILE
        out = Path(out_dir)
        writer = TrajectoryWriter(out / TRAJECTORY_FILE)
        diagnostics = DiagnosticsLog(config.diagnostics_path or str(out / DIAGNOSTICS_FILE), reset=True)

        ablation = config.ablation
        click.echo(
            f"Fusing {dataset} (radar {'on' if ablation.radar_enabled else 'off'}, "
            f"TDCP {'on' if ablation.tdcp_enabled else 'off'}, noise model {ablation.resolved_noise_model})"
        )
        pipeline = FusionPipeline(config, sink=writer.write, diagnostics=diagnostics)
        summary = pipeline.run(read_dataset(dataset))
    except EstimationError as e:
        _fail(str(e), EXIT_ESTIMATION_ERROR, debug)
    except (FusionError, ValueError) as e:
        _fail(str(e), EXIT_DATA_ERROR, debug)
    except OSError as e:
        _fail(f"Cannot access {e.filename}: {e.strerror}", EXIT_DATA_ERROR, debug)

    if summary.deferred_epochs:
        click.secho(f"Warning: initialization deferred {summary.deferred_epochs} times", fg='yellow')
    if summary.dropped_epochs:
        click.secho(f"Warning: {summary.dropped_epochs} GNSS epochs dropped", fg='yellow')
    click.echo(f"Processed {summary.epochs_processed} epochs, wrote {summary.states_written} states")
    click.echo(f"Rejected TDCP measurements: {summary.rejected_tdcp}")
    click.echo(f"Trajectory written to {out / TRAJECTORY_FILE}")
    click.echo(f"Diagnostics written to {diagnostics.log_path}")


def _metric_lines(metrics) -> list:
    lines = [{"metric": "matched_epochs", "value": metrics.matched}]
    for name in ("mae", "rmse"):
        for axis in AXES:
            lines.append({"metric": name, "component": axis, "value": getattr(metrics, name)[axis], "unit": "m"})
    lines.append({"metric": "rmse", "component": "horizontal", "value": metrics.horizontal_rmse, "unit": "m"})
    lines.append({"metric": "rmse", "component": "3d", "value": metrics.rmse_3d, "unit": "m"})
    for name, values in (("attitude_mae", metrics.attitude_mae), ("attitude_rmse", metrics.attitude_rmse)):
        for angle in ATTITUDE:
            lines.append({"metric": name, "component": angle, "value": values[angle], "unit": "deg"})
    return lines


@cli.command(name="evaluate")
@click.option('--estimate', 'estimate_path', required=True, type=click.Path(dir_okay=False), help='Estimated trajectory CSV')
@click.option('--truth', 'truth_path', required=True, type=click.Path(dir_okay=False), help='Ground-truth trajectory CSV')
@click.option('--format', 'output_format', type=click.Choice(['text', 'json-lines']), default='text', help='Report format')
@click.pass_context
def evaluate_command(ctx: click.Context, estimate_path: str, truth_path: str, output_format: str):
    """Compare an estimated trajectory with ground truth."""
    debug = ctx.obj.get("verbose", False)
    try:
        metrics = evaluate(read_trajectory(estimate_path), read_trajectory(truth_path))
    except (DatasetError, EvaluationError) as e:
        _fail(str(e), EXIT_DATA_ERROR, debug)

    if output_format == 'json-lines':
        for line in _metric_lines(metrics):
            click.echo(json.dumps(line, cls=NumpyEncoder))
        return

    click.echo("\nTrajectory accuracy:")
    click.echo("-" * 40)
    click.echo(f"Matched epochs: {metrics.matched}")
    click.echo(f"{'Axis':<8}{'MAE [m]':>14}{'RMSE [m]':>14}")
    for axis in AXES:
        click.echo(f"{axis:<8}{metrics.mae[axis]:>14.6f}{metrics.rmse[axis]:>14.6f}")
    click.echo(f"Horizontal RMSE: {metrics.horizontal_rmse:.6f} m")
    click.echo(f"3D RMSE: {metrics.rmse_3d:.6f} m")
    click.echo(f"{'Angle':<8}{'MAE [deg]':>14}{'RMSE [deg]':>14}")
    for angle in ATTITUDE:
        click.echo(f"{angle:<8}{metrics.attitude_mae[angle]:>14.6f}{metrics.attitude_rmse[angle]:>14.6f}")
    click.echo("-" * 40)


@cli.command()
@click.option('--diagnostics', 'diagnostics_path', required=True, type=click.Path(dir_okay=False), help='Diagnostics file of a fuse run')
def stats(diagnostics_path: str):
    """Display statistics of a fusion run."""
    if not Path(diagnostics_path).exists():
        _fail(f"Diagnostics file not found: {diagnostics_path}", EXIT_DATA_ERROR)
    try:
        summary = DiagnosticsLog(diagnostics_path).summary()
    except json.JSONDecodeError as e:
        _fail(f"{diagnostics_path}: malformed diagnostics ({e.msg})", EXIT_DATA_ERROR)

    click.echo("\nFusion Statistics:")
    click.echo("-" * 40)
    click.echo(f"Total epochs: {summary['total_epochs']}")
    if summary["mean_iterations"] is not None:
        click.echo(f"Mean LM iterations: {summary['mean_iterations']:.2f}")
    click.echo(f"Rejected TDCP measurements: {summary['total_rejected_tdcp']}")
    click.echo("-" * 40)


if __name__ == '__main__':
    cli()
