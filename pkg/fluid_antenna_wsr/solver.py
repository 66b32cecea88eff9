"""Block coordinate ascent over (Gamma, Phi), W, T and R."""
import logging
import time
from typing import Dict, List, Optional

import attr
import numpy as np

from fluid_antenna_wsr.channel import RX, TX
from fluid_antenna_wsr.errors import NumericalFailure, PreconditionViolation
from fluid_antenna_wsr.fp_core import (
    extrapolation_weight,
    nonhomogeneous_eta,
    remember,
    update_auxiliaries,
    update_w_bisection,
    update_w_inverse_free,
)
from fluid_antenna_wsr.mm_position import PositionState, mm_loop
from fluid_antenna_wsr.objective import f_quad, r_max_bound, to_bits, wsr
from fluid_antenna_wsr.run_config import BISECTION, SolverConfig
from fluid_antenna_wsr.scenario import Scenario

log = logging.getLogger("faw")

AUX, BEAM, TX_POS, RX_POS = "aux", "beamformer", "tx_positions", "rx_positions"
BLOCKS = (AUX, BEAM, TX_POS, RX_POS)

CONVERGED, MAX_ITERATIONS = "converged", "max_iterations"

TIGHTNESS_TOL = 1e-8
RESTART_MARGIN = 1e-12


def relative_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), 1e-300)


def should_restart(f_new: float, f_old: float) -> bool:
    """True when an extrapolated beamformer step lowered f_quad."""
    return f_new < f_old - RESTART_MARGIN * (1 + abs(f_old))


@attr.s(slots=True, eq=False)
class SolverReport:
    wsr_trace: List[float] = attr.ib(factory=list)
    f_quad_trace: List[float] = attr.ib(factory=list)
    block_times: Dict[str, List[float]] = attr.ib(factory=lambda: {b: [] for b in BLOCKS})
    bisection_iterations: List[int] = attr.ib(factory=list)
    multipliers: List[float] = attr.ib(factory=list)
    powers: List[float] = attr.ib(factory=list)
    mm_iterations_tx: List[int] = attr.ib(factory=list)
    mm_iterations_rx: List[int] = attr.ib(factory=list)
    restarts: int = attr.ib(default=0)
    stop_reason: Optional[str] = attr.ib(default=None)
    r_max: Optional[float] = attr.ib(default=None)
    state: Optional[PositionState] = attr.ib(default=None)
    node_times: Dict[str, float] = attr.ib(factory=dict)
    message_log = attr.ib(default=None)

    @property
    def iterations(self) -> int:
        return max(len(self.wsr_trace) - 1, 0)

    @property
    def converged(self) -> bool:
        return self.stop_reason == CONVERGED

    @property
    def wsr_bits_trace(self) -> List[float]:
        return [to_bits(v) for v in self.wsr_trace]

    @property
    def final_wsr(self) -> float:
        return self.wsr_trace[-1]

    @property
    def final_wsr_bits(self) -> float:
        return to_bits(self.final_wsr)

    @property
    def cpu_time(self) -> float:
        if self.node_times:
            du = [v for k, v in self.node_times.items() if k != "CU"]
            return self.node_times.get("CU", 0.0) + (max(du) if du else 0.0)
        return float(sum(sum(v) for v in self.block_times.values()))

    def _mean(self, values) -> float:
        return float(np.mean(values)) if values else 0.0

    def trace_rows(self):
        """(iteration, wsr_bits, f_quad, block times in ms...) per outer iteration."""
        for i, value in enumerate(self.wsr_trace):
            times = [
                1e3 * self.block_times[b][i - 1] if 0 < i <= len(self.block_times[b]) else 0.0
                for b in BLOCKS
            ]
            f_q = self.f_quad_trace[i] if i < len(self.f_quad_trace) else float("nan")
            yield [i, to_bits(value), f_q] + times

    def to_dict(self) -> dict:
        summary = self._summary()
        if self.message_log is not None:
            messages = self.message_log.summary()
            summary["messages"] = messages["messages"]
            summary["message_bytes"] = messages["total_bytes"]
        return summary

    def _summary(self) -> dict:
        return {
            "stop_reason": self.stop_reason,
            "iterations": self.iterations,
            "final_wsr_nats": self.final_wsr,
            "final_wsr_bits": self.final_wsr_bits,
            "r_max_nats": self.r_max,
            "wsr_bits_trace": self.wsr_bits_trace,
            "f_quad_trace": list(self.f_quad_trace),
            "mean_bisection_iterations": self._mean(self.bisection_iterations),
            "mean_mm_iterations_tx": self._mean(self.mm_iterations_tx),
            "mean_mm_iterations_rx": self._mean(self.mm_iterations_rx),
            "momentum_restarts": self.restarts,
            "cpu_time_s": self.cpu_time,
            "block_time_s": {b: float(sum(v)) for b, v in self.block_times.items()},
            "node_time_s": dict(self.node_times),
            "final_power_w": self.powers[-1] if self.powers else None,
        }


class BcaSolver:
    """centralized joint beamforming and position optimizer"""

    __slots__ = ("scenario", "config", "state", "report", "iteration")

    def __init__(self, scenario: Scenario, config: SolverConfig = None):
        self.scenario = scenario
        self.config = config or SolverConfig()
        self.state: Optional[PositionState] = None
        self.report = SolverReport()
        self.iteration = 0

    def initialize(self) -> PositionState:
        scenario = self.scenario
        beams = scenario.initial_beams()
        channels = scenario.channels()
        aux = update_auxiliaries(channels, beams)
        aux = aux.evolve(W_prev=beams.W, W_prev2=beams.W)
        self.state = PositionState(
            geometries=scenario.geometries,
            layout=scenario.layout,
            channels=channels,
            beams=beams,
            aux=aux,
        )
        self.report = SolverReport(r_max=r_max_bound(scenario.dims, scenario.geometries, beams))
        initial = wsr(channels, beams)
        self.report.wsr_trace.append(initial)
        self.report.f_quad_trace.append(self.state.f_quad())
        self.report.powers.append(beams.power)
        self.iteration = 0
        log.debug("initial wsr=%r nats", initial)
        return self.state

    def _timed(self, block, func):
        start = time.thread_time()
        result = func()
        self.report.block_times[block].append(time.thread_time() - start)
        return result

    def run_auxiliary(self):
        state = self.state
        aux = update_auxiliaries(state.channels, state.beams, previous=state.aux)
        self.state = state.evolve(aux=aux)
        if self.config.check_invariants:
            current = self.report.wsr_trace[-1]
            value = self.state.f_quad()
            if abs(value - current) > TIGHTNESS_TOL * (1 + abs(current)):
                raise NumericalFailure(
                    f"f_quad={value!r} is not tight against wsr={current!r} after the "
                    "auxiliary update"
                )

    def run_beamformer(self):
        state, config = self.state, self.config
        if config.beamformer == BISECTION:
            outcome = update_w_bisection(
                state.channels,
                state.aux,
                state.beams,
                tol=config.bisection_tol,
                max_iter=config.bisection_max_iter,
                max_doublings=config.bisection_max_doublings,
            )
            beams = outcome.beams
            self.report.bisection_iterations.append(outcome.iterations)
            self.report.multipliers.append(outcome.mu)
        else:
            eta = nonhomogeneous_eta(state.channels, state.aux)
            if eta <= 0:
                log.debug("iteration %d: zero non-homogeneous bound, W kept", self.iteration)
                return
            aux = state.aux.evolve(eta=eta)
            beams = update_w_inverse_free(state.channels, aux, state.beams, self.iteration)
            if config.momentum_restart and extrapolation_weight(self.iteration) > 0:
                before = f_quad(state.channels, state.beams, aux.gamma, aux.phi)
                after = f_quad(state.channels, beams, aux.gamma, aux.phi)
                if should_restart(after, before):
                    log.debug("iteration %d: momentum restart", self.iteration)
                    self.report.restarts += 1
                    beams = update_w_inverse_free(
                        state.channels, aux, state.beams, self.iteration, nu=0.0
                    )
            state = state.evolve(aux=aux)
        self.state = state.evolve(beams=beams, aux=remember(state.aux, beams.W))
        self.report.powers.append(beams.power)

    def run_tx_positions(self):
        result = mm_loop(
            TX,
            self.state,
            tol=self.config.tol_inner,
            max_iter=self.config.max_inner,
            delta_rule=self.config.delta_tx_rule,
        )
        self.state = result.state
        self.report.mm_iterations_tx.append(result.iterations)

    def run_rx_positions(self):
        result = mm_loop(RX, self.state, tol=self.config.tol_inner, max_iter=self.config.max_inner)
        self.state = result.state
        self.report.mm_iterations_rx.append(result.iterations)

    def step(self) -> float:
        """one outer iteration, blocks in fixed order"""
        self.iteration += 1
        self._timed(AUX, self.run_auxiliary)
        self._timed(BEAM, self.run_beamformer)
        if self.config.optimize_tx:
            self._timed(TX_POS, self.run_tx_positions)
        else:
            self.report.block_times[TX_POS].append(0.0)
        if self.config.optimize_rx:
            self._timed(RX_POS, self.run_rx_positions)
        else:
            self.report.block_times[RX_POS].append(0.0)
        value = wsr(self.state.channels, self.state.beams)
        self.report.wsr_trace.append(value)
        self.report.f_quad_trace.append(self.state.f_quad())
        if self.config.check_invariants:
            self.check_invariants(value)
        return value

    def check_invariants(self, value: float):
        if not self.state.layout.contains():
            raise NumericalFailure("an antenna left its movable region")
        if value > self.report.r_max:
            raise NumericalFailure(f"wsr={value!r} exceeds the rate ceiling {self.report.r_max!r}")

    def solve(self) -> SolverReport:
        if self.state is None:
            self.initialize()
        config = self.config
        log.info(
            "solve: M=%d K=%d beamformer=%s tx=%s rx=%s",
            self.scenario.dims.M,
            self.scenario.dims.K,
            config.beamformer,
            config.optimize_tx,
            config.optimize_rx,
        )
        self.report.stop_reason = MAX_ITERATIONS
        while self.iteration < config.max_outer:
            previous = self.report.wsr_trace[-1]
            try:
                value = self.step()
            except (NumericalFailure, PreconditionViolation) as exc:
                raise NumericalFailure(f"outer iteration {self.iteration}: {exc}") from exc
            log.debug("iteration %d: wsr=%r bits", self.iteration, to_bits(value))
            if relative_change(value, previous) < config.tol_outer:
                self.report.stop_reason = CONVERGED
                break
        if not self.report.converged:
            log.warning("solve stopped after %d iterations without converging", self.iteration)
        self.report.state = self.state
        log.info(
            "solve: %s after %d iterations, wsr=%.6g bps/Hz",
            self.report.stop_reason,
            self.iteration,
            self.report.final_wsr_bits,
        )
        return self.report


def initialize(scenario: Scenario, config: SolverConfig = None) -> BcaSolver:
    solver = BcaSolver(scenario, config)
    solver.initialize()
    return solver


def solve(scenario: Scenario, config: SolverConfig = None) -> SolverReport:
    return BcaSolver(scenario, config).solve()
