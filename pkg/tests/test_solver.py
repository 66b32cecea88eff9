import numpy as np
import pytest

from fluid_antenna_wsr.errors import NumericalFailure
from fluid_antenna_wsr.harness import FPA, TRFA, baseline_layout, sample_scenario
from fluid_antenna_wsr.run_config import INVERSE_FREE, ScenarioSpec, SolverConfig
from fluid_antenna_wsr.solver import (
    BLOCKS,
    CONVERGED,
    MAX_ITERATIONS,
    BcaSolver,
    SolverReport,
    initialize,
    relative_change,
    should_restart,
    solve,
)

SMALL = ScenarioSpec(M=4, N=2, K=2, d=1, C=2, paths=2, realizations=1, seed=3)


def _scenario(kind=TRFA, spec=SMALL, index=0):
    scenario = sample_scenario(spec, index)
    return scenario.evolve(layout=baseline_layout(kind, scenario, index))


def _assert_monotone(trace, slack=1e-8):
    trace = np.asarray(trace)
    assert np.all(np.diff(trace) >= -slack * np.abs(trace[:-1]))


@pytest.mark.parametrize("index", range(3))
def test_bisection_solver_is_monotone(index):
    report = solve(_scenario(index=index), SolverConfig(max_outer=30))
    _assert_monotone(report.wsr_trace)
    assert report.iterations == len(report.wsr_trace) - 1
    assert report.final_wsr <= report.r_max
    assert report.state.layout.contains()
    assert report.powers[-1] <= report.state.beams.P_max * (1 + 1e-9)
    for block in BLOCKS:
        assert len(report.block_times[block]) == report.iterations
    assert len(report.bisection_iterations) == report.iterations
    assert len(report.mm_iterations_tx) == report.iterations


@pytest.mark.parametrize("index", range(3))
def test_inverse_free_solver_is_monotone(index):
    config = SolverConfig(max_outer=30, beamformer=INVERSE_FREE)
    report = solve(_scenario(index=index), config)
    _assert_monotone(report.wsr_trace)
    assert report.bisection_iterations == []


def test_fixed_positions_do_not_move():
    scenario = _scenario(kind=FPA)
    config = SolverConfig(max_outer=10, optimize_tx=False, optimize_rx=False)
    report = solve(scenario, config)
    np.testing.assert_array_equal(report.state.layout.T, scenario.layout.T)
    np.testing.assert_array_equal(report.state.layout.R, scenario.layout.R)
    assert report.mm_iterations_tx == [] and report.mm_iterations_rx == []
    assert all(t == 0.0 for t in report.block_times["tx_positions"])


def test_stop_reasons():
    report = solve(_scenario(), SolverConfig(max_outer=1, tol_outer=1e-300))
    assert report.stop_reason == MAX_ITERATIONS
    assert not report.converged
    report = solve(_scenario(), SolverConfig(max_outer=200, tol_outer=1e-3))
    assert report.stop_reason == CONVERGED
    assert report.converged


def test_step_by_step_matches_solve():
    scenario, config = _scenario(), SolverConfig(max_outer=5, tol_outer=1e-300)
    solver = initialize(scenario, config)
    values = [solver.step() for _ in range(5)]
    np.testing.assert_allclose(values, solve(scenario, config).wsr_trace[1:], rtol=1e-12)


def test_rate_ceiling_violation_is_reported():
    solver = BcaSolver(_scenario(), SolverConfig(max_outer=3))
    solver.initialize()
    solver.report.r_max = 0.0
    with pytest.raises(NumericalFailure, match="outer iteration 1"):
        solver.solve()


def test_report_dict():
    report = solve(_scenario(), SolverConfig(max_outer=3))
    summary = report.to_dict()
    assert summary["iterations"] == report.iterations
    assert summary["final_wsr_bits"] == pytest.approx(report.final_wsr_bits)
    assert len(summary["wsr_bits_trace"]) == report.iterations + 1
    assert set(summary["block_time_s"]) == set(BLOCKS)
    assert "messages" not in summary
    rows = list(report.trace_rows())
    assert len(rows) == report.iterations + 1
    assert rows[0][0] == 0 and len(rows[0]) == 3 + len(BLOCKS)
    assert SolverReport().iterations == 0


def test_helpers():
    assert relative_change(1.1, 1.0) == pytest.approx(0.1)
    assert should_restart(0.9, 1.0)
    assert not should_restart(1.0, 1.0)
    assert not should_restart(1.1, 1.0)
