from functools import partial
import logging
import os
import pytest
from unittest import mock
import json

import click.testing
import tomlkit

from fluid_antenna_wsr.cli import EXIT_MAX_ITERATIONS, EXIT_USAGE, faw
from fluid_antenna_wsr import harness
from fluid_antenna_wsr.harness import ExperimentResult
from fluid_antenna_wsr.run_config import INVERSE_FREE, ScenarioSpec, SolverConfig
from fluid_antenna_wsr.suites import MUL_EQUIVALENCE, SuiteResult

HERE = os.path.dirname(os.path.realpath(__file__))
PROJECT_DIR = os.path.realpath(HERE + "/../")


@pytest.mark.skip("only tests virtual environment, not code")
def test_version():
    from fluid_antenna_wsr import __version__

    with open(f"{PROJECT_DIR}/pyproject.toml") as fp:
        doc = tomlkit.parse(fp.read())
    toml_version = doc["tool"]["poetry"]["version"]
    assert __version__ == toml_version


@pytest.fixture
def faw_runner(tmp_path, monkeypatch):
    monkeypatch.setattr("fluid_antenna_wsr.run_config.RunConfig.user_conf_path", "/nonexistent")
    monkeypatch.delenv("FAW_OUTPUT_DIR", raising=False)
    monkeypatch.chdir(tmp_path)
    runner = click.testing.CliRunner()
    return partial(runner.invoke, faw)


def summary_line(result) -> dict:
    return json.loads(result.stdout.splitlines()[-1])


@mock.patch("fluid_antenna_wsr.cli.log", autospec=True)
@mock.patch("fluid_antenna_wsr.cli.run_suites", autospec=True)
@mock.patch("fluid_antenna_wsr.cli.run_preset", autospec=True)
@mock.patch("fluid_antenna_wsr.cli.run_solver", autospec=True)
def test_faw_no_args(run_solver, run_preset, run_suites, log, faw_runner):
    result = faw_runner()
    assert result.exit_code == 0
    assert "Usage:" in result.output
    log.setLevel.assert_not_called()
    run_solver.assert_not_called()
    run_preset.assert_not_called()
    run_suites.assert_not_called()


@mock.patch("fluid_antenna_wsr.cli.log", autospec=True)
@mock.patch("fluid_antenna_wsr.cli.run_solver", autospec=True)
def test_solve_missing_scenario(run_solver, log, faw_runner):
    result = faw_runner(["-d", "solve", "--scenario", "nowhere.json"])
    assert result.exit_code == EXIT_USAGE
    assert "Usage:" in result.output
    log.setLevel.assert_called_once_with(logging.DEBUG)
    run_solver.assert_not_called()


@mock.patch("fluid_antenna_wsr.cli.run_solver", autospec=True)
def test_solve_unknown_option(run_solver, faw_runner):
    result = faw_runner(["solve", "--frobnicate"])
    assert result.exit_code == EXIT_USAGE
    run_solver.assert_not_called()


@pytest.mark.parametrize(
    "args",
    [
        ["experiment", "--fig", "power", "--realizations", "0"],
        ["experiment"],
        ["experiment", "--table2", "--fig", "power"],
        ["experiment", "--fig", "nope"],
        ["experiment", "--table3", "--mode", "x"],
    ],
    ids=["zero realizations", "no preset", "two presets", "unknown figure", "bad mode"],
)
@mock.patch("fluid_antenna_wsr.cli.run_preset", autospec=True)
def test_experiment_usage_errors(run_preset, args, faw_runner):
    result = faw_runner(args)
    assert result.exit_code == EXIT_USAGE
    run_preset.assert_not_called()


@mock.patch("fluid_antenna_wsr.cli.emit_outputs", autospec=True)
@mock.patch("fluid_antenna_wsr.cli.run_preset", autospec=True)
def test_experiment_table2(run_preset, emit_outputs, faw_runner):
    run_preset.return_value = ExperimentResult(
        name="table2", spec=ScenarioSpec(), config=SolverConfig(), modes=("c",)
    )
    emit_outputs.return_value = ["faw-out/table2.json"]
    result = faw_runner(["experiment", "--table2", "--realizations", "3", "--workers", "2"])
    assert result.exit_code == 0
    assert "Experiment table2: 0 failed realizations" in result.stdout
    run_preset.assert_called_once_with(
        "table2", ScenarioSpec(realizations=3), SolverConfig(), modes=("c",), workers=2
    )
    emit_outputs.assert_called_once_with(run_preset.return_value, "./faw-out")
    assert summary_line(result) == {
        "command": "experiment",
        "experiment": "table2",
        "modes": ["c"],
        "rows": 0,
        "failures": 0,
        "exit_code": 0,
    }


@mock.patch("fluid_antenna_wsr.cli.emit_outputs", autospec=True)
@mock.patch("fluid_antenna_wsr.cli.run_preset", autospec=True)
def test_experiment_both_modes(run_preset, emit_outputs, faw_runner):
    run_preset.return_value = ExperimentResult(
        name="power", spec=ScenarioSpec(), config=SolverConfig(), modes=("c", "d")
    )
    emit_outputs.return_value = []
    result = faw_runner(["experiment", "--fig", "power", "--mode", "both", "--output", "json"])
    assert result.exit_code == 0
    run_preset.assert_called_once_with(
        "power", ScenarioSpec(), SolverConfig(), modes=("c", "d"), workers=1
    )
    report = json.loads("\n".join(result.stdout.splitlines()[:-1]))
    assert report["experiment"] == "power"
    assert report["time_saved"] == []


@mock.patch("fluid_antenna_wsr.cli.run_suites", autospec=True)
def test_verify_unknown_suite(run_suites, faw_runner):
    result = faw_runner(["verify", "--suite", "nosuch"])
    assert result.exit_code == EXIT_USAGE
    assert summary_line(result)["exit_code"] == EXIT_USAGE
    run_suites.assert_not_called()


@mock.patch("fluid_antenna_wsr.cli.run_suites", autospec=True)
def test_verify_reports_failures(run_suites, faw_runner):
    run_suites.return_value = [SuiteResult(MUL_EQUIVALENCE, "max_rel_error", 1e-3, 1e-12, 100, False)]
    result = faw_runner(["verify", "--suite", "mul-*", "--seed", "4"])
    assert result.exit_code == 1
    assert "FAIL mul-equivalence" in result.stdout
    run_suites.assert_called_once_with([MUL_EQUIVALENCE], seed=4)
    assert summary_line(result)["suites"] == {MUL_EQUIVALENCE: False}


def test_verify_runs_a_suite(faw_runner):
    result = faw_runner(["verify", "--suite", "mul-equivalence", "--output", "yaml"])
    assert result.exit_code == 0
    assert summary_line(result) == {
        "command": "verify",
        "passed": True,
        "suites": {MUL_EQUIVALENCE: True},
        "exit_code": 0,
    }


def test_solve_sample_scenario(faw_runner):
    result = faw_runner(["solve", "--baseline", "fpa", "--out", "run"])
    assert result.exit_code == 0, result.output
    assert "Solved in centralized mode." in result.stdout
    summary = summary_line(result)
    assert summary["command"] == "solve"
    assert summary["stop_reason"] == "converged"
    assert summary["final_wsr_bits"] > 0
    assert sorted(os.listdir("run")) == ["report.json", "trace.csv"]


@mock.patch("fluid_antenna_wsr.cli.run_solver", autospec=True, side_effect=harness.run_solver)
def test_solve_beamformer_choice(run_solver, faw_runner):
    args = ["solve", "--baseline", "fpa", "--max-outer", "1", "--tol", "1e-300"]
    result = faw_runner(args + ["--beamformer", "inverse_free"])
    assert result.exit_code == EXIT_MAX_ITERATIONS, result.output
    config = run_solver.call_args[0][1]
    assert config.beamformer == INVERSE_FREE
    assert not config.optimize_tx and not config.optimize_rx

    result = faw_runner(args + ["--beamformer", "newton"])
    assert result.exit_code == EXIT_USAGE
    assert run_solver.call_count == 1


def test_solve_iteration_cap(faw_runner):
    result = faw_runner(["solve", "--max-outer", "1", "--tol", "1e-300"])
    assert result.exit_code == EXIT_MAX_ITERATIONS
    assert summary_line(result)["stop_reason"] == "max_iterations"


def test_decentralized_solve_and_log(faw_runner):
    args = ["solve", "--mode", "d", "--clusters", "2", "--max-outer", "3", "--tol", "1e-300"]
    result = faw_runner(args + ["--out", "dec"])
    assert result.exit_code == EXIT_MAX_ITERATIONS
    assert "over 2 DUs" in result.stdout
    assert os.path.exists("dec/messages.csv")

    result = faw_runner(["log", "dec/messages.csv"])
    assert result.exit_code == 0
    assert "Sequence numbers increase on every link." in result.stdout
    summary = summary_line(result)
    assert summary["sequence_errors"] == 0
    assert summary["messages"] > 0


def test_log_missing_columns(faw_runner):
    with open("bad.csv", "w") as fp:
        fp.write("round,label\n")
    result = faw_runner(["log", "bad.csv"])
    assert result.exit_code == 1
    assert summary_line(result)["exit_code"] == 1
