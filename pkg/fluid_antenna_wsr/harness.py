"""Seeded Monte Carlo experiments: baselines, sweeps, robustness and timing.

Every random draw comes from ``numpy.random.default_rng([seed, index, stream])``
so a realization's channels never depend on which baselines or sweep points
run alongside it.
"""
import logging
import math
import multiprocessing
from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np

from fluid_antenna_wsr.channel import (
    AntennaLayout,
    PathGeometry,
    assemble_channels,
    db_to_linear,
    pathloss,
)
from fluid_antenna_wsr.dbp import dec_solve
from fluid_antenna_wsr.errors import FawError, InvalidArgument
from fluid_antenna_wsr.objective import to_bits, wsr
from fluid_antenna_wsr.run_config import INVERSE_FREE, ScenarioSpec, SolverConfig
from fluid_antenna_wsr.scenario import Scenario
from fluid_antenna_wsr.solver import solve

log = logging.getLogger("faw")

# constants used for enums herein
FPA, RPA, TFA, RFA, TRFA = "fpa", "rpa", "tfa", "rfa", "trfa"
BASELINES = (FPA, RPA, TFA, RFA, TRFA)
CENTRALIZED, DECENTRALIZED = "c", "d"
MODES = (CENTRALIZED, DECENTRALIZED)

GEOMETRY_STREAM, LAYOUT_STREAM, PERTURBATION_STREAM = 0, 1, 2

TARGET_WSR_BITS = 2.0


def rng_for(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index), int(stream)])


def _non_negative_float(instance, attribute, value):
    if not (math.isfinite(value) and value >= 0):
        raise InvalidArgument(f"{attribute.name} must be a finite value >= 0: {value!r}")


@attr.s(slots=True, frozen=True)
class PerturbationSpec:
    """CSI error model: uniform angle offsets and relative CSCG path-gain errors."""

    angle_error = attr.ib(default=0.0, converter=float, validator=_non_negative_float)
    prm_error = attr.ib(default=0.0, converter=float, validator=_non_negative_float)

    @property
    def is_null(self) -> bool:
        return self.angle_error == 0.0 and self.prm_error == 0.0


def sample_geometry(spec: ScenarioSpec, rng: np.random.Generator) -> Tuple[PathGeometry, float]:
    L = spec.paths
    aod = rng.uniform(0.0, math.pi, size=(L, 2))
    aoa = rng.uniform(0.0, math.pi, size=(L, 2))
    distance = math.sqrt(rng.uniform(spec.d_min ** 2, spec.d_max ** 2))
    kappa = pathloss(distance, spec.pathloss_exp, db_to_linear(spec.ref_loss_db), spec.ref_distance)
    gains = math.sqrt(kappa / L / 2.0) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    geometry = PathGeometry(aod=aod, aoa=aoa, prm=np.diag(gains), wavelength=spec.wavelength)
    return geometry, distance


def sample_scenario(spec: ScenarioSpec, index: int) -> Scenario:
    """Channel realization ``index`` of ``spec``; identical for identical (seed, index)."""
    rng = rng_for(spec.seed, index, GEOMETRY_STREAM)
    geometries, distances = [], []
    for _ in range(spec.K):
        geometry, distance = sample_geometry(spec, rng)
        geometries.append(geometry)
        distances.append(distance)
    return Scenario(
        dims=spec.dims,
        geometries=geometries,
        distances=distances,
        rho=spec.rho,
        min_sep=spec.min_sep,
        noise_dbm=spec.noise_dbm,
        power_dbm=spec.power_dbm,
        weights=np.ones(spec.K),
        seed=spec.seed,
    )


def apply_perturbation(geometry: PathGeometry, perturbation: PerturbationSpec, seed) -> PathGeometry:
    """Estimated copy of ``geometry``; ``seed`` may be an int or a Generator."""
    if perturbation.is_null:
        return geometry
    rng = np.random.default_rng(seed)
    mu = perturbation.angle_error
    aod = geometry.aod + rng.uniform(-mu, mu, size=geometry.aod.shape)
    aoa = geometry.aoa + rng.uniform(-mu, mu, size=geometry.aoa.shape)
    shape = geometry.prm.shape
    error = math.sqrt(perturbation.prm_error / 2.0) * (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )
    prm = geometry.prm + np.abs(geometry.prm) * error
    return geometry.evolve(aod=aod, aoa=aoa, prm=prm)


def random_layout(scenario: Scenario, rng: np.random.Generator) -> AntennaLayout:
    """Box-mode regions with every antenna dropped uniformly inside its own box."""
    layout = AntennaLayout.box_mode(scenario.dims, scenario.wavelength, scenario.rho, scenario.min_sep)
    lo_tx, hi_tx = layout.boxes_tx[:, 0], layout.boxes_tx[:, 1]
    lo_rx, hi_rx = layout.boxes_rx[..., 0, :], layout.boxes_rx[..., 1, :]
    return attr.evolve(
        layout,
        T=rng.uniform(lo_tx, hi_tx),
        R=rng.uniform(lo_rx, hi_rx),
    )


def baseline_layout(kind: str, scenario: Scenario, index: int = 0) -> AntennaLayout:
    dims, wavelength = scenario.dims, scenario.wavelength
    if kind == TRFA:
        return AntennaLayout.box_mode(dims, wavelength, scenario.rho, scenario.min_sep)
    if kind == RPA:
        return random_layout(scenario, rng_for(scenario.seed, index, LAYOUT_STREAM))
    if kind in (FPA, TFA, RFA):
        return AntennaLayout.fixed_upa(
            dims,
            wavelength,
            scenario.rho,
            scenario.min_sep,
            fix_tx=kind in (FPA, RFA),
            fix_rx=kind in (FPA, TFA),
        )
    raise InvalidArgument(f"unknown baseline {kind!r}")


def baseline_config(kind: str, config: SolverConfig, mode: str = CENTRALIZED) -> SolverConfig:
    if kind not in BASELINES:
        raise InvalidArgument(f"unknown baseline {kind!r}")
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}")
    changes = {
        "optimize_tx": kind in (TFA, TRFA),
        "optimize_rx": kind in (RFA, TRFA),
    }
    if mode == DECENTRALIZED:
        changes["beamformer"] = INVERSE_FREE
    return config.evolve(**changes)


def run_solver(scenario: Scenario, config: SolverConfig, mode: str = CENTRALIZED):
    if mode == DECENTRALIZED:
        return dec_solve(scenario, config)
    return solve(scenario, config)


@attr.s(slots=True, frozen=True)
class RealizationResult:
    index: int = attr.ib()
    baseline: str = attr.ib()
    mode: str = attr.ib()
    wsr_bits: float = attr.ib(default=float("nan"))
    iterations: int = attr.ib(default=0)
    converged: bool = attr.ib(default=False)
    bisection_iterations: float = attr.ib(default=0.0)
    mm_iterations_tx: float = attr.ib(default=0.0)
    mm_iterations_rx: float = attr.ib(default=0.0)
    restarts: int = attr.ib(default=0)
    cpu_time: float = attr.ib(default=0.0)
    trace: tuple = attr.ib(default=())
    error: Optional[str] = attr.ib(default=None)

    @property
    def failed(self) -> bool:
        return self.error is not None


@attr.s(slots=True, frozen=True)
class RealizationTask:
    spec: ScenarioSpec = attr.ib()
    baseline: str = attr.ib()
    mode: str = attr.ib()
    config: SolverConfig = attr.ib()
    perturbation: PerturbationSpec = attr.ib(factory=PerturbationSpec)
    index: int = attr.ib(default=0)


def run_realization(task: RealizationTask) -> RealizationResult:
    """Optimize on the (possibly perturbed) estimate, score on the true channels."""
    truth = sample_scenario(task.spec, task.index)
    try:
        layout = baseline_layout(task.baseline, truth, task.index)
        truth = truth.evolve(layout=layout)
        estimate = truth
        if not task.perturbation.is_null:
            rng = rng_for(task.spec.seed, task.index, PERTURBATION_STREAM)
            estimate = truth.evolve(
                geometries=[apply_perturbation(geo, task.perturbation, rng) for geo in truth.geometries]
            )
        config = baseline_config(task.baseline, task.config, task.mode)
        report = run_solver(estimate, config, task.mode)
        state = report.state
        if task.perturbation.is_null:
            value = report.final_wsr
        else:
            value = wsr(assemble_channels(truth.geometries, state.layout), state.beams)
    except FawError as exc:
        log.warning(
            "realization %d (%s, %s) failed: %s", task.index, task.baseline, task.mode, exc
        )
        return RealizationResult(task.index, task.baseline, task.mode, error=str(exc))
    summary = report.to_dict()
    return RealizationResult(
        index=task.index,
        baseline=task.baseline,
        mode=task.mode,
        wsr_bits=to_bits(value),
        iterations=report.iterations,
        converged=report.converged,
        bisection_iterations=summary["mean_bisection_iterations"],
        mm_iterations_tx=summary["mean_mm_iterations_tx"],
        mm_iterations_rx=summary["mean_mm_iterations_rx"],
        restarts=report.restarts,
        cpu_time=report.cpu_time,
        trace=tuple(report.wsr_bits_trace),
    )


def map_tasks(tasks: Sequence[RealizationTask], workers: int = 1) -> List[RealizationResult]:
    """Run tasks in a process pool; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [run_realization(task) for task in tasks]
    with multiprocessing.Pool(processes=workers) as pool:
        return list(pool.imap(run_realization, tasks))


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def _stderr(values) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


@attr.s(slots=True, frozen=True)
class SummaryRow:
    """Averages over the realizations of one (sweep point, baseline, mode)."""

    sweep: str = attr.ib()
    value: float = attr.ib()
    baseline: str = attr.ib()
    mode: str = attr.ib()
    realizations: int = attr.ib()
    failures: int = attr.ib()
    wsr_bits_mean: float = attr.ib()
    wsr_bits_stderr: float = attr.ib()
    iterations_mean: float = attr.ib()
    converged: int = attr.ib()
    bisection_iterations_mean: float = attr.ib()
    mm_iterations_tx_mean: float = attr.ib()
    mm_iterations_rx_mean: float = attr.ib()
    restarts_mean: float = attr.ib()
    cpu_time_mean: float = attr.ib()


def summarize(sweep: str, value: float, results: Sequence[RealizationResult]) -> List[SummaryRow]:
    groups: Dict[Tuple[str, str], List[RealizationResult]] = {}
    for result in results:
        groups.setdefault((result.baseline, result.mode), []).append(result)
    rows = []
    for (baseline, mode), group in groups.items():
        ok = [r for r in group if not r.failed]
        rows.append(
            SummaryRow(
                sweep=sweep,
                value=float(value),
                baseline=baseline,
                mode=mode,
                realizations=len(group),
                failures=len(group) - len(ok),
                wsr_bits_mean=_mean([r.wsr_bits for r in ok]),
                wsr_bits_stderr=_stderr([r.wsr_bits for r in ok]),
                iterations_mean=_mean([r.iterations for r in ok]),
                converged=sum(r.converged for r in ok),
                bisection_iterations_mean=_mean([r.bisection_iterations for r in ok]),
                mm_iterations_tx_mean=_mean([r.mm_iterations_tx for r in ok]),
                mm_iterations_rx_mean=_mean([r.mm_iterations_rx for r in ok]),
                restarts_mean=_mean([r.restarts for r in ok]),
                cpu_time_mean=_mean([r.cpu_time for r in ok]),
            )
        )
    return rows


def time_saved(rows: Sequence[SummaryRow]) -> List[dict]:
    """Percentage of centralized CPU time saved by the decentralized run, per point."""
    table = {(r.sweep, r.value, r.baseline, r.mode): r for r in rows}
    out = []
    for (sweep, value, baseline, mode), row in table.items():
        if mode != DECENTRALIZED:
            continue
        central = table.get((sweep, value, baseline, CENTRALIZED))
        if central is None or not central.cpu_time_mean > 0:
            continue
        out.append(
            {
                "sweep": sweep,
                "value": value,
                "baseline": baseline,
                "centralized_s": central.cpu_time_mean,
                "decentralized_s": row.cpu_time_mean,
                "time_saved_pct": 100.0 * (1.0 - row.cpu_time_mean / central.cpu_time_mean),
            }
        )
    return out


def power_for_target(powers_dbm, wsr_bits, target: float = TARGET_WSR_BITS) -> Optional[float]:
    """Power at which an averaged WSR-vs-power curve first reaches ``target``."""
    powers = np.asarray(powers_dbm, float)
    values = np.asarray(wsr_bits, float)
    order = np.argsort(powers)
    powers, values = powers[order], values[order]
    for i in range(len(powers)):
        if values[i] >= target:
            if i == 0:
                return float(powers[0]) if values[0] == target else None
            lo, hi = values[i - 1], values[i]
            return float(powers[i - 1] + (target - lo) * (powers[i] - powers[i - 1]) / (hi - lo))
    return None


def power_saving(rows: Sequence[SummaryRow], target: float = TARGET_WSR_BITS) -> List[dict]:
    """Power each baseline needs to reach ``target`` and the dB saved against FPA."""
    curves: Dict[Tuple[str, str], List[SummaryRow]] = {}
    for row in rows:
        curves.setdefault((row.baseline, row.mode), []).append(row)
    needed = {
        key: power_for_target([r.value for r in curve], [r.wsr_bits_mean for r in curve], target)
        for key, curve in curves.items()
    }
    out = []
    for (baseline, mode), power in needed.items():
        reference = needed.get((FPA, mode))
        saving = None
        if power is not None and reference is not None:
            saving = reference - power
        out.append(
            {
                "baseline": baseline,
                "mode": mode,
                "target_wsr_bits": target,
                "power_dbm": power,
                "power_saving_db": saving,
            }
        )
    return out


@attr.s(slots=True, frozen=True)
class SweepPoint:
    sweep: str = attr.ib()
    value: float = attr.ib()
    spec: ScenarioSpec = attr.ib()
    baselines: tuple = attr.ib(converter=tuple)
    perturbation: PerturbationSpec = attr.ib(factory=PerturbationSpec)


def _users_spec(spec: ScenarioSpec, K: int) -> ScenarioSpec:
    return spec.evolve(K=K, d=min(spec.d, spec.N, spec.M))


def _points_table2(spec, baselines):
    return [SweepPoint("power_dbm", p, spec.evolve(power_dbm=p), baselines) for p in (30.0, 40.0)]


def _points_power(spec, baselines):
    return [
        SweepPoint("power_dbm", p, spec.evolve(power_dbm=p), baselines)
        for p in (25.0, 30.0, 35.0, 40.0)
    ]


def _points_users(spec, baselines):
    return [SweepPoint("K", K, _users_spec(spec, K), baselines) for K in (2, 4, 6, 8)]


def _points_rho(spec, baselines):
    return [SweepPoint("rho", r, spec.evolve(rho=r), baselines) for r in (0.5, 1.0, 2.0, 3.0)]


def _points_robust_ang(spec, baselines):
    return [
        SweepPoint("angle_error", mu, spec, baselines, PerturbationSpec(angle_error=mu))
        for mu in (0.0, 0.02, 0.05)
    ]


def _points_robust_prm(spec, baselines):
    return [
        SweepPoint("prm_error", eps, spec, baselines, PerturbationSpec(prm_error=eps))
        for eps in (0.0, 0.25, 0.5, 1.0)
    ]


def _points_miso(spec, baselines):
    miso = spec.evolve(K=1, d=1, N=1)
    return [SweepPoint("power_dbm", p, miso.evolve(power_dbm=p), baselines) for p in (20.0, 30.0, 40.0)]


def _points_table3(spec, baselines):
    points = []
    for C in (4, 16):
        if C <= spec.M and spec.M % C == 0:
            points.append(SweepPoint("C", C, spec.evolve(C=C), baselines))
    if not points:
        raise InvalidArgument(f"M={spec.M} splits into neither 4 nor 16 clusters")
    return points


def _points_convergence(spec, baselines):
    return [SweepPoint("power_dbm", spec.power_dbm, spec, baselines)]


@attr.s(slots=True, frozen=True)
class Preset:
    name: str = attr.ib()
    points = attr.ib()
    baselines: tuple = attr.ib(converter=tuple)
    description: str = attr.ib()


PRESETS = {
    preset.name: preset
    for preset in (
        Preset("table2", _points_table2, BASELINES, "WSR of every baseline at 30 and 40 dBm"),
        Preset("power", _points_power, BASELINES, "WSR versus transmit power budget"),
        Preset("users", _points_users, BASELINES, "WSR versus number of users"),
        Preset("rho", _points_rho, (FPA, TRFA), "WSR versus movable-region size"),
        Preset("robust-ang", _points_robust_ang, BASELINES, "WSR versus AoA/AoD error"),
        Preset("robust-prm", _points_robust_prm, BASELINES, "WSR versus path-response error"),
        Preset("convergence", _points_convergence, BASELINES, "WSR per outer iteration"),
        Preset("miso", _points_miso, (FPA, TRFA), "single-user single-stream special case"),
        Preset("table3", _points_table3, (FPA, TFA, RFA, TRFA), "decentralized CPU time saved"),
    )
}


@attr.s(slots=True)
class ExperimentResult:
    name: str = attr.ib()
    spec: ScenarioSpec = attr.ib()
    config: SolverConfig = attr.ib()
    modes: tuple = attr.ib(converter=tuple)
    results: List[Tuple[SweepPoint, List[RealizationResult]]] = attr.ib(factory=list)
    rows: List[SummaryRow] = attr.ib(factory=list)
    extras: dict = attr.ib(factory=dict)

    @property
    def failures(self) -> int:
        return sum(row.failures for row in self.rows)

    def realization_rows(self):
        for point, results in self.results:
            for r in results:
                yield point, r

    def convergence_rows(self):
        """(iteration, baseline, mode, mean WSR in bits); short traces hold their last value."""
        groups: Dict[Tuple[str, str], List[tuple]] = {}
        for _, r in self.realization_rows():
            if not r.failed and r.trace:
                groups.setdefault((r.baseline, r.mode), []).append(r.trace)
        for (baseline, mode), traces in groups.items():
            length = max(len(t) for t in traces)
            padded = np.array([list(t) + [t[-1]] * (length - len(t)) for t in traces])
            for i, value in enumerate(padded.mean(axis=0)):
                yield i, baseline, mode, float(value)


def run_experiment(
    spec: ScenarioSpec,
    baselines: Sequence[str],
    config: SolverConfig,
    modes: Sequence[str] = (CENTRALIZED,),
    perturbation: Optional[PerturbationSpec] = None,
    workers: int = 1,
    name: str = "experiment",
    points: Optional[Sequence[SweepPoint]] = None,
) -> ExperimentResult:
    """Average every (baseline, mode) over ``spec.realizations`` channel draws.

    Failed realizations are recorded and counted, never fatal.
    """
    for mode in modes:
        if mode not in MODES:
            raise InvalidArgument(f"unknown mode {mode!r}")
    if points is None:
        points = [
            SweepPoint("power_dbm", spec.power_dbm, spec, baselines, perturbation or PerturbationSpec())
        ]
    result = ExperimentResult(name=name, spec=spec, config=config, modes=modes)
    for point in points:
        tasks = [
            RealizationTask(point.spec, baseline, mode, config, point.perturbation, index)
            for baseline in point.baselines
            for mode in modes
            for index in range(point.spec.realizations)
        ]
        log.info("%s: %s=%r, %d solves", name, point.sweep, point.value, len(tasks))
        results = map_tasks(tasks, workers)
        result.results.append((point, results))
        result.rows.extend(summarize(point.sweep, point.value, results))
    if result.failures:
        log.warning("%s: %d realizations failed", name, result.failures)
    return result


def run_preset(
    name: str,
    spec: ScenarioSpec,
    config: SolverConfig,
    modes: Sequence[str] = (CENTRALIZED,),
    workers: int = 1,
    baselines: Optional[Sequence[str]] = None,
) -> ExperimentResult:
    try:
        preset = PRESETS[name]
    except KeyError:
        raise InvalidArgument(f"unknown experiment {name!r}") from None
    if name == "table3":
        modes = MODES
    points = preset.points(spec, tuple(baselines or preset.baselines))
    result = run_experiment(spec, preset.baselines, config, modes, workers=workers, name=name, points=points)
    if name == "power":
        result.extras["power_saving"] = power_saving(result.rows)
    if DECENTRALIZED in modes and CENTRALIZED in modes:
        result.extras["time_saved"] = time_saved(result.rows)
    return result
