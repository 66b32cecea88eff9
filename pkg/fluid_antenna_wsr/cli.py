#!/usr/bin/env python3
"""
Command line front end: solve one scenario, run experiment sweeps,
verify invariant suites and summarize decentralized message logs.
"""
from fluid_antenna_wsr.errors import FawError, InvalidArgument
from fluid_antenna_wsr.harness import (
    BASELINES,
    CENTRALIZED,
    MODES,
    TRFA,
    baseline_config,
    baseline_layout,
    run_preset,
    run_solver,
)
from fluid_antenna_wsr.messages import read_rows, summarize_rows
from fluid_antenna_wsr.report import emit_outputs, emit_solve, experiment_summary, render
from fluid_antenna_wsr.run_config import BEAMFORMERS, RunConfig
from fluid_antenna_wsr.scenario import load_scenario
from fluid_antenna_wsr.suites import run_suites, select_suites

import attr
import click
import functools
import json
import logging
import os
import typing

logging.basicConfig(level=logging.INFO)
log = logging.getLogger("faw")

HERE = os.path.dirname(os.path.realpath(__file__))
SAMPLE_SCENARIO = f"{HERE}/data/sample_scenario.json"

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITERATIONS, EXIT_USAGE = 0, 1, 2, 64

FIGURES = ("power", "users", "rho", "robust-ang", "robust-prm", "convergence", "miso")
BOTH = "both"


class FawGroup(click.Group):
    """click group whose usage errors exit with EXIT_USAGE"""

    def parse_args(self, ctx, args):
        try:
            return super().parse_args(ctx, args)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise


click_option_output = click.option(
    "--output", default=None, type=click.Choice(["json", "yaml"], case_sensitive=False)
)
click_option_out = click.option(
    "--out", default=None, help="output directory (default $FAW_OUTPUT_DIR or ./faw-out)"
)


def print_summary(command: str, **fields):
    """final single-line machine readable summary"""
    click.echo(json.dumps(dict(fields, command=command), sort_keys=True))


def print_report(kind: str, obj: dict, output: typing.Optional[str]):
    text = "".join(render(kind, obj, report_format=output))
    click.echo(text.rstrip("\n"))


def handle_errors(func):
    """map package errors onto exit codes, still ending with a summary line"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        command = click.get_current_context().info_name
        try:
            return func(*args, **kwargs)
        except InvalidArgument as exc:
            click.secho(f"Error: {exc}", fg="red", err=True)
            click.echo(click.get_current_context().get_usage(), err=True)
            print_summary(command, exit_code=EXIT_USAGE, error=str(exc))
            raise click.exceptions.Exit(EXIT_USAGE)
        except (FawError, OSError) as exc:
            click.secho(f"Error: {exc}", fg="red", err=True)
            print_summary(command, exit_code=EXIT_ERROR, error=str(exc))
            raise click.exceptions.Exit(EXIT_ERROR)

    return wrapper


@click.group(cls=FawGroup, invoke_without_command=True)
@click.option("--debug", "-d", is_flag=True)
@click.option("--working-dir", "-C", default=None, help="change to this directory ")
@click.pass_context
def faw(ctx, debug, working_dir):
    """Fluid antenna weighted sum rate optimizer"""
    if debug:
        log.setLevel(logging.DEBUG)
    if working_dir:
        os.chdir(working_dir)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        raise click.exceptions.Exit(EXIT_OK)


@faw.command(name="solve")
@click.option(
    "--scenario",
    "scenario_path",
    default=SAMPLE_SCENARIO,
    type=click.Path(exists=True, dir_okay=False),
    help="scenario JSON file (default: bundled sample)",
)
@click.option("--mode", default=CENTRALIZED, type=click.Choice(MODES))
@click.option("--clusters", default=None, type=click.IntRange(min=1), help="DU count")
@click.option("--baseline", default=TRFA, type=click.Choice(BASELINES))
@click.option("--seed", default=None, type=click.IntRange(0, 2 ** 64 - 1))
@click.option("--max-outer", default=None, type=click.IntRange(min=1))
@click.option("--tol", default=None, type=float, help="relative WSR change to stop at")
@click.option(
    "--beamformer",
    default=None,
    type=click.Choice(BEAMFORMERS),
    help="centralized beamformer update; decentralized runs are always inverse-free",
)
@click_option_out
@click_option_output
@handle_errors
def faw_solve(
    scenario_path: str,
    mode: str,
    clusters: typing.Optional[int],
    baseline: str,
    seed: typing.Optional[int],
    max_outer: typing.Optional[int],
    tol: typing.Optional[float],
    beamformer: typing.Optional[str],
    out: typing.Optional[str],
    output: typing.Optional[str],
):
    """optimize beamformers and antenna positions for one scenario"""
    overrides = {"max_outer": max_outer, "tol_outer": tol, "seed": seed, "beamformer": beamformer}
    config = RunConfig.load_from_files(
        solver_overrides={k: v for k, v in overrides.items() if v is not None},
        output_dir=out,
    )
    scenario = load_scenario(scenario_path)
    if seed is not None:
        scenario = scenario.evolve(seed=seed)
    if clusters is not None:
        scenario = scenario.evolve(dims=attr.evolve(scenario.dims, C=clusters))
    scenario = scenario.evolve(layout=baseline_layout(baseline, scenario))
    report = run_solver(scenario, baseline_config(baseline, config.solver, mode), mode)
    files = emit_solve(report, config.output_dir)

    obj = report.to_dict()
    obj.update(mode=mode, clusters=scenario.dims.C, baseline=baseline, files=files)
    print_report("solve", obj, output)
    exit_code = EXIT_OK if report.converged else EXIT_MAX_ITERATIONS
    print_summary(
        "solve",
        mode=mode,
        baseline=baseline,
        stop_reason=report.stop_reason,
        iterations=report.iterations,
        final_wsr_bits=report.final_wsr_bits,
        exit_code=exit_code,
    )
    if exit_code:
        raise click.exceptions.Exit(exit_code)


@faw.command(name="experiment")
@click.option("--table2", "preset", flag_value="table2", help="baseline comparison table")
@click.option("--table3", "preset", flag_value="table3", help="decentralized time saved")
@click.option("--fig", "figure", default=None, type=click.Choice(FIGURES))
@click.option("--realizations", default=None, type=click.IntRange(min=1))
@click.option("--mode", default=CENTRALIZED, type=click.Choice(MODES + (BOTH,)))
@click.option("--workers", default=1, type=click.IntRange(min=1))
@click.option("--seed", default=None, type=click.IntRange(0, 2 ** 64 - 1))
@click_option_out
@click_option_output
@handle_errors
def faw_experiment(
    preset: typing.Optional[str],
    figure: typing.Optional[str],
    realizations: typing.Optional[int],
    mode: str,
    workers: int,
    seed: typing.Optional[int],
    out: typing.Optional[str],
    output: typing.Optional[str],
):
    """run a Monte Carlo sweep and write its tables"""
    if bool(preset) == bool(figure):
        raise click.UsageError("choose exactly one of --table2, --table3 or --fig")
    name = preset or figure
    overrides = {"realizations": realizations, "seed": seed}
    config = RunConfig.load_from_files(
        scenario_overrides={k: v for k, v in overrides.items() if v is not None},
        output_dir=out,
    )
    modes = MODES if mode == BOTH else (mode,)
    result = run_preset(name, config.scenario, config.solver, modes=modes, workers=workers)
    files = emit_outputs(result, config.output_dir)

    obj = experiment_summary(result)
    obj.update(time_saved=result.extras.get("time_saved", []), files=files)
    print_report("experiment", obj, output)
    solves = sum(len(results) for _, results in result.results)
    exit_code = EXIT_ERROR if solves and result.failures == solves else EXIT_OK
    print_summary(
        "experiment",
        experiment=name,
        modes=list(result.modes),
        rows=len(result.rows),
        failures=result.failures,
        exit_code=exit_code,
    )
    if exit_code:
        raise click.exceptions.Exit(exit_code)


@faw.command(name="verify")
@click.option("--suite", default=None, multiple=True, help="suite name glob")
@click.option("--seed", default=0, type=click.IntRange(0, 2 ** 64 - 1))
@click_option_output
@handle_errors
def faw_verify(suite: typing.List[str], seed: int, output: typing.Optional[str]):
    """run invariant suites on seeded random instances"""
    results = run_suites(select_suites(suite), seed=seed)
    print_report("verify", {"suites": [attr.asdict(r) for r in results]}, output)
    passed = all(r.passed for r in results)
    exit_code = EXIT_OK if passed else EXIT_ERROR
    print_summary(
        "verify",
        passed=passed,
        suites={r.name: r.passed for r in results},
        exit_code=exit_code,
    )
    if exit_code:
        raise click.exceptions.Exit(exit_code)


@faw.command(name="log")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click_option_output
@handle_errors
def faw_log(path: str, output: typing.Optional[str]):
    """summarize a decentralized message log CSV"""
    summary = summarize_rows(read_rows(path))
    print_report("log", summary, output)
    exit_code = EXIT_ERROR if summary["sequence_errors"] else EXIT_OK
    print_summary(
        "log",
        messages=summary["messages"],
        total_bytes=summary["total_bytes"],
        sequence_errors=len(summary["sequence_errors"]),
        exit_code=exit_code,
    )
    if exit_code:
        raise click.exceptions.Exit(exit_code)


if __name__ == "__main__":
    faw()
