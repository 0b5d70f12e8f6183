"""CLI for ampmest."""

from __future__ import annotations

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Iterator

import click
import numpy as np

from . import __version__
from .amp import amp_run, analytic_schedule, fixed_point_check
from .baseline import m_estimate
from .duality import duality_check
from .experiment import run_experiment
from .instance import generate, generate_from_config
from .loss import parse_loss
from .noise import parse_noise
from .output_renderer import (
    AMP_COLUMNS,
    SE_COLUMNS,
    OutputRenderer,
    emit_plotdata,
    render_json,
    se_rows,
)
from .parameters import ExperimentConfig, load_config
from .state_evolution import (
    fixed_point,
    fixed_point_slope,
    lower_bounds,
    predict,
    se_run,
    variance_map_curve,
)

DebugCmd = Callable[[str], None]

#: points of the variance map written next to simulation results
CURVE_POINTS = 101


@contextmanager
def report_errors() -> Iterator[None]:
    """Print solver and input errors in red and exit with status 1."""
    try:
        yield
    except (ValueError, RuntimeError, OSError) as error:
        click.secho(str(error), fg="red", err=True)
        sys.exit(1)


def get_debug_cmd(ctx: click.Context) -> DebugCmd | None:
    """Debug callback echoing to stderr when --debug was given.

    Args:
        ctx: the click context of the running command

    Returns:
        the callback or None
    """

    def print_debug(info: str) -> None:
        click.echo(info, err=True)

    debug_cmd = None
    if ctx.find_root().params.get("debug"):
        debug_cmd = print_debug
    return debug_cmd


def model_options(func: Callable) -> Callable:
    """Loss and noise options shared by the SE commands."""
    func = click.option(
        "--noise", default="cn:0.05,10", show_default=True, help="Noise law spec"
    )(func)
    return click.option(
        "--loss", default="huber:3.0", show_default=True, help="Loss spec"
    )(func)


def instance_options(func: Callable) -> Callable:
    """Options describing one random problem instance."""
    options = [
        click.option("--config", "config_path", default=None, help="Config file"),
        click.option("--n", type=int, default=None, help="Observations [1000]"),
        click.option("--p", type=int, default=None, help="Coefficients [200]"),
        click.option("--loss", default=None, help="Loss spec [huber:3.0]"),
        click.option("--noise", default=None, help="Noise law spec [cn:0.05,10]"),
        click.option(
            "--theta0-norm", type=float, default=None, help="||theta0|| / sqrt(p) [6]"
        ),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_config(config_path: str | None, **overrides: Any) -> ExperimentConfig:
    """Config from an optional file with command line overrides.

    Args:
        config_path: config file, or None for defaults
        overrides: field values, None entries ignored

    Returns:
        the validated config
    """
    if config_path:
        return load_config(config_path, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


@click.group()
@click.option(
    "--debug", default=False, is_flag=True, help="Print solver iterations to stderr"
)
@click.version_option(version=__version__)
def main(debug: bool) -> None:  # noqa: ARG001, FBT001
    """Approximate message passing and state evolution for M-estimation."""


@main.command("se-fixed-point")
@model_options
@click.option("--delta", type=float, required=True, help="Sampling ratio n / p")
@click.option("--tol", type=float, default=1e-10, show_default=True)
@click.pass_context
def se_fixed_point_cmd(
    ctx: click.Context, loss: str, noise: str, delta: float, tol: float
) -> None:
    """Solve for (tau*^2, b*) and the predicted risk."""
    with report_errors():
        loss_function, model = parse_loss(loss), parse_noise(noise)
        point = fixed_point(
            loss_function, model, delta, tol=tol, debug_cmd=get_debug_cmd(ctx)
        )
        report = predict(point, loss_function, model)
        output = {
            "fixed_point": point,
            "mse": report.mse,
            "mae": report.mae,
            "rmse": report.mse**0.5,
            "stability_slope": fixed_point_slope(point, loss_function, model),
            "residual_law": report.residual_law.describe(),
        }
        click.echo(render_json(output))


@main.command("se-run")
@model_options
@click.option("--delta", type=float, required=True, help="Sampling ratio n / p")
@click.option("--tau0-sq", type=float, required=True, help="Initial tau^2")
@click.option("--iters", type=int, default=50, show_default=True)
@click.option("--tol", type=float, default=1e-10, show_default=True)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["json", "csv"]),
    default="json",
    show_default=True,
)
@click.option("--columns", default="", help="CSV columns, NAME[%PRECISION],...")
@click.pass_context
def se_run_cmd(
    ctx: click.Context,
    loss: str,
    noise: str,
    delta: float,
    tau0_sq: float,
    iters: int,
    tol: float,
    output_format: str,
    columns: str,
) -> None:
    """Iterate state evolution from tau0^2."""
    with report_errors():
        trajectory = se_run(
            tau0_sq,
            parse_loss(loss),
            parse_noise(noise),
            delta,
            max_iters=iters,
            tol=tol,
            debug_cmd=get_debug_cmd(ctx),
        )
        if output_format == "csv":
            renderer = OutputRenderer(SE_COLUMNS, columns)
            click.echo(renderer.format_rows(se_rows(trajectory)), nl=False)
        else:
            click.echo(render_json({"trajectory": se_rows(trajectory)}))


@main.command("amp-solve")
@instance_options
@click.option(
    "--mode",
    type=click.Choice(["empirical", "analytic"]),
    default=None,
    help="How b_t is chosen [empirical]",
)
@click.option("--iters", type=int, default=None, help="AMP iteration budget [20]")
@click.option("--tol", type=float, default=None, help="AMP step tolerance [1e-8]")
@click.option("--trajectory-csv", default=None, help="Also write rows to this file")
@click.option("--columns", default="", help="CSV columns, NAME[%PRECISION],...")
@click.pass_context
def amp_solve_cmd(
    ctx: click.Context,
    config_path: str | None,
    seed: int,
    mode: str | None,
    iters: int | None,
    tol: float | None,
    trajectory_csv: str | None,
    columns: str,
    **kwargs: Any,
) -> None:
    """Run AMP on one random instance, next to its Newton M-estimate."""
    with report_errors():
        config = build_config(
            config_path, mode=mode, amp_iters=iters, amp_tol=tol, **kwargs
        )
        instance = generate_from_config(config, seed)
        loss = config.loss_function
        debug_cmd = get_debug_cmd(ctx)
        newton = m_estimate(
            instance, loss, config.newton_tol, config.newton_iters, debug_cmd=debug_cmd
        )
        schedule = None
        if config.mode == "analytic":
            schedule = analytic_schedule(
                instance, loss, config.noise_model, iters=config.amp_iters + 1
            )
        report = amp_run(
            instance,
            loss,
            max_iters=config.amp_iters,
            tol=config.amp_tol,
            b_schedule=schedule,
            reference=newton.theta,
            debug_cmd=debug_cmd,
        )
        if trajectory_csv:
            renderer = OutputRenderer(AMP_COLUMNS, columns)
            Path(trajectory_csv).write_text(
                renderer.format_rows(report.rows), encoding="utf-8"
            )
        output = {
            "converged": report.converged,
            "iterations": report.iterations,
            "mode": report.mode,
            "fixed_point_check": fixed_point_check(report.theta, instance, loss),
            "rows": report.rows,
        }
        click.echo(render_json(output))


@main.command("m-estimate")
@instance_options
@click.option("--tol", type=float, default=None, help="Gradient tolerance [1e-10]")
@click.pass_context
def m_estimate_cmd(
    ctx: click.Context,
    config_path: str | None,
    seed: int,
    tol: float | None,
    **kwargs: Any,
) -> None:
    """Solve one random instance with damped Newton."""
    with report_errors():
        config = build_config(config_path, newton_tol=tol, **kwargs)
        instance = generate_from_config(config, seed)
        estimate = m_estimate(
            instance,
            config.loss_function,
            config.newton_tol,
            config.newton_iters,
            debug_cmd=get_debug_cmd(ctx),
        )
        error = estimate.theta - instance.theta0
        output = {
            "estimate": estimate,
            "rmse_truth": float(np.linalg.norm(error) / instance.p**0.5),
        }
        click.echo(render_json(output))


@main.command("simulate")
@click.option("--config", "config_path", default=None, help="Config file")
@click.option("--reps", type=int, default=None, help="Replications [10]")
@click.option("--workers", type=int, default=None, help="Threads [1]")
@click.option("--output", default=None, help="Directory for results and plot data")
@click.pass_context
def simulate_cmd(
    ctx: click.Context,
    config_path: str | None,
    reps: int | None,
    workers: int | None,
    output: str | None,
) -> None:
    """Replicate AMP against state evolution and summarize."""
    with report_errors():
        config = build_config(
            config_path, replications=reps, workers=workers, output=output
        )
        records, summary = run_experiment(config, debug_cmd=get_debug_cmd(ctx))
        result = render_json(
            {"config": config, "records": records, "summary": summary}
        )
        if config.output:
            point = summary.fixed_point
            grid = np.linspace(0.0, 4 * max(point.tau_star_sq, 0.25), CURVE_POINTS)
            curve = variance_map_curve(
                config.loss_function, config.noise_model, config.delta, grid
            )
            emit_plotdata(
                records, summary.se_trajectory, curve, config.output, summary
            )
            target = Path(config.output) / "results.json"
            target.write_text(result + "\n", encoding="utf-8")
        click.echo(result)


@main.command("duality-check")
@click.option("--n", type=int, default=60, show_default=True)
@click.option("--p", type=int, default=12, show_default=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--noise", default="cn:0.05,10", show_default=True)
@click.option("--theta0-norm", type=float, default=6.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_context
def duality_check_cmd(
    ctx: click.Context,
    n: int,
    p: int,
    lam: float,
    noise: str,
    theta0_norm: float,
    seed: int,
) -> None:
    """Compare Huber regression with its dual Lasso."""
    with report_errors():
        instance = generate(n, p, parse_noise(noise), seed, theta0_norm)
        report = duality_check(instance, lam, debug_cmd=get_debug_cmd(ctx))
        click.echo(render_json(report))


@main.command("bounds")
@click.option("--noise", default="normal:0,1", show_default=True)
@click.option("--delta", type=float, required=True, help="Sampling ratio n / p")
@click.option("--t", "iteration", type=int, default=None, help="Iteration index")
def bounds_cmd(noise: str, delta: float, iteration: int | None) -> None:
    """Fisher information lower bounds on tau^2."""
    with report_errors():
        click.echo(render_json(lower_bounds(parse_noise(noise), delta, iteration)))
