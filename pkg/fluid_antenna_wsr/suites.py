"""Invariant suites run by ``faw verify`` on seeded random instances."""
import fnmatch
import logging
import math
import re
from typing import Callable, Dict, List

import attr
import numpy as np

from fluid_antenna_wsr.channel import (
    AntennaLayout,
    PathGeometry,
    SystemDims,
    assemble_channels,
    wavelength_for,
)
from fluid_antenna_wsr.dbp import (
    ClusterPlan,
    ReducedBlocks,
    dec_eta,
    dec_grad_delta_tx,
    dec_objective,
    dec_rx_derivative,
    dec_update_aux,
    dec_update_w,
    local_products,
    local_tx_rows,
    mul_reduce,
    reduce_blocks,
    sigma_hat_tx,
)
from fluid_antenna_wsr.errors import InvalidArgument
from fluid_antenna_wsr.fp_core import (
    nonhomogeneous_eta,
    update_auxiliaries,
    update_w_inverse_free,
)
from fluid_antenna_wsr.mm_position import (
    EXACT,
    PositionState,
    delta_rx,
    delta_tx,
    grad_rx,
    grad_tx,
    move_rx,
    move_tx,
    rx_coefficients,
    rx_derivatives,
    tx_coefficients,
    tx_derivatives,
)
from fluid_antenna_wsr.objective import BeamformerSet, f_lag, f_quad, r_max_bound, wsr

log = logging.getLogger("faw")

# constants used for enums herein
GRAD_TX, GRAD_RX = "grad-tx", "grad-rx"
MAJORIZATION, DELTA_DOMINANCE = "majorization", "delta-dominance"
TIGHTNESS, MUL_EQUIVALENCE, DEC_EQUIVALENCE = "tightness", "mul-equivalence", "dec-equivalence"

VERIFY_DIMS = SystemDims(M=4, N=2, K=2, d=2, C=2)
VERIFY_PATHS = 3
VERIFY_POWER = 10.0
FD_STEP = 1e-6  # in wavelengths


class NameRegexFilter:
    """Regex Filter Callable"""

    __slots__ = ("regex",)

    def __init__(self, regexp):
        self.regex = re.compile(regexp)

    @staticmethod
    def from_glob_list(globs):
        return NameRegexFilter("|".join(map(fnmatch.translate, globs)))

    def __call__(self, name):
        return self.regex.match(name) is not None

    def __repr__(self):
        return f"{self.__class__.__name__}<{repr(self.regex)[11:-1]}>"


@attr.s(slots=True, frozen=True)
class SuiteResult:
    name: str = attr.ib()
    metric: str = attr.ib()
    value: float = attr.ib(converter=float)
    limit: float = attr.ib(converter=float)
    cases: int = attr.ib(converter=int)
    passed: bool = attr.ib(converter=bool)


def _crandn(rng, *shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def random_geometry(rng, paths: int, wavelength: float) -> PathGeometry:
    return PathGeometry(
        aod=rng.uniform(0.0, math.pi, (paths, 2)),
        aoa=rng.uniform(0.0, math.pi, (paths, 2)),
        prm=np.diag(_crandn(rng, paths)),
        wavelength=wavelength,
    )


def random_positions(layout: AntennaLayout, rng) -> AntennaLayout:
    return attr.evolve(
        layout,
        T=rng.uniform(layout.boxes_tx[:, 0], layout.boxes_tx[:, 1]),
        R=rng.uniform(layout.boxes_rx[..., 0, :], layout.boxes_rx[..., 1, :]),
    )


def random_beams(rng, dims: SystemDims, P_max: float, fill: float = 0.8) -> BeamformerSet:
    W = [_crandn(rng, dims.M, dims.d) for _ in range(dims.K)]
    scale = math.sqrt(fill * P_max / sum(np.vdot(w, w).real for w in W))
    return BeamformerSet(
        W=[scale * w for w in W],
        P_max=P_max,
        weights=rng.uniform(0.5, 1.5, dims.K),
        noise=np.ones(dims.K),
    )


def random_state(seed: int, index: int, dims: SystemDims = VERIFY_DIMS, paths: int = VERIFY_PATHS):
    """Unit-gain paths, random positions inside box-mode regions, random beamformers."""
    rng = np.random.default_rng([int(seed), int(index)])
    wavelength = wavelength_for(28e9)
    geometries = [random_geometry(rng, paths, wavelength) for _ in range(dims.K)]
    layout = AntennaLayout.box_mode(dims, wavelength, 2.0, wavelength / 2.0)
    layout = random_positions(layout, rng)
    channels = assemble_channels(geometries, layout)
    beams = random_beams(rng, dims, VERIFY_POWER)
    aux = update_auxiliaries(channels, beams)
    return PositionState(geometries, layout, channels, beams, aux)


def shard_state(state: PositionState, plan: ClusterPlan):
    """(G, W, H) shards per cluster, each a list over users."""
    G, W, H = [], [], []
    for rows in plan.slices():
        G.append([g[:, rows] for g in state.channels.G])
        W.append([w[rows] for w in state.beams.W])
        H.append([h[:, rows] for h in state.channels.H])
    return G, W, H


def central_difference(fun: Callable, x, h: float) -> np.ndarray:
    x = np.asarray(x, float).reshape(-1)
    out = []
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        out.append((np.asarray(fun(x + step)) - np.asarray(fun(x - step))) / (2.0 * h))
    return np.array(out)


def relative_error(actual, expected) -> float:
    actual, expected = np.asarray(actual), np.asarray(expected)
    return float(np.linalg.norm(actual - expected) / max(np.linalg.norm(expected), 1e-300))


def _hessian_norm(gradient: Callable, x, h: float) -> float:
    hess = central_difference(gradient, x, h)
    return float(np.abs(np.linalg.eigvalsh((hess + hess.T) / 2.0)).max())


def _tx_gradient_at(state):
    def gradient(x):
        moved = move_tx(state, x.reshape(-1, 3))
        return grad_tx(moved.channels, moved.beams, moved.aux, moved.geometries)

    return gradient


def _rx_gradient_at(state, k):
    def gradient(x):
        moved = move_rx(state, x.reshape(-1, 3), k)
        return grad_rx(moved.channels, moved.beams, moved.aux, moved.geometries, k)

    return gradient


def suite_grad_tx(seed: int = 0, cases: int = 20) -> SuiteResult:
    worst = 0.0
    for index in range(cases):
        state = random_state(seed, index)
        h = FD_STEP * state.geometries[0].wavelength
        analytic = grad_tx(state.channels, state.beams, state.aux, state.geometries)
        numeric = central_difference(
            lambda x: move_tx(state, x.reshape(-1, 3)).f_quad(), state.layout.T, h
        )
        worst = max(worst, relative_error(analytic, numeric))
    return SuiteResult(GRAD_TX, "max_rel_error", worst, 1e-5, cases, worst <= 1e-5)


def suite_grad_rx(seed: int = 0, cases: int = 20) -> SuiteResult:
    worst = 0.0
    for index in range(cases):
        state = random_state(seed, index)
        h = FD_STEP * state.geometries[0].wavelength
        for k in range(len(state.geometries)):
            analytic = grad_rx(state.channels, state.beams, state.aux, state.geometries, k)
            numeric = central_difference(
                lambda x: move_rx(state, x.reshape(-1, 3), k).f_quad(), state.layout.R[k], h
            )
            worst = max(worst, relative_error(analytic, numeric))
    return SuiteResult(GRAD_RX, "max_rel_error", worst, 1e-5, cases, worst <= 1e-5)


def suite_majorization(seed: int = 0, cases: int = 5, points: int = 100) -> SuiteResult:
    """Surrogates stay below f_quad at random feasible points and touch it at the anchor."""
    worst = math.inf
    for index in range(cases):
        state = random_state(seed, index)
        rng = np.random.default_rng([int(seed), int(index), 1])
        layout = state.layout
        coeffs = tx_coefficients(state, delta_tx(state.channels, state.beams, state.aux, state.geometries))
        worst = min(worst, -abs(coeffs.surrogate(layout.T) - coeffs.value))
        for _ in range(points):
            T = rng.uniform(layout.boxes_tx[:, 0], layout.boxes_tx[:, 1])
            value = move_tx(state, T).f_quad()
            worst = min(worst, (value - coeffs.surrogate(T)) / (1 + abs(value)))
        for k in range(len(state.geometries)):
            delta = delta_rx(state.channels, state.beams, state.aux, state.geometries, k)
            coeffs = rx_coefficients(state, delta, k)
            for _ in range(points):
                R_k = rng.uniform(layout.boxes_rx[k, :, 0], layout.boxes_rx[k, :, 1])
                value = move_rx(state, R_k, k).f_quad()
                worst = min(worst, (value - coeffs.surrogate(R_k)) / (1 + abs(value)))
    return SuiteResult(MAJORIZATION, "min_slack", worst, -1e-9, cases, worst >= -1e-9)


def suite_delta_dominance(seed: int = 0, cases: int = 20) -> SuiteResult:
    """Curvature bounds over the finite-difference Hessian norm, and decentralized over centralized."""
    worst = math.inf
    for index in range(cases):
        state = random_state(seed, index)
        h = FD_STEP * state.geometries[0].wavelength
        central = delta_tx(state.channels, state.beams, state.aux, state.geometries, EXACT)
        worst = min(worst, central / _hessian_norm(_tx_gradient_at(state), state.layout.T, h))
        plan = ClusterPlan.for_dims(VERIFY_DIMS)
        G, W, _ = shard_state(state, plan)
        _, decentral = dec_grad_delta_tx(
            W, G, state.aux, state.geometries, state.channels.F, state.beams.weights
        )
        worst = min(worst, decentral / central)
        for k in range(len(state.geometries)):
            bound = delta_rx(state.channels, state.beams, state.aux, state.geometries, k)
            worst = min(worst, bound / _hessian_norm(_rx_gradient_at(state, k), state.layout.R[k], h))
    return SuiteResult(DELTA_DOMINANCE, "min_bound_ratio", worst, 1.0, cases, worst >= 1.0 - 1e-12)


def suite_tightness(seed: int = 0, cases: int = 50, draws: int = 1000) -> SuiteResult:
    """f_quad = f_lag = WSR right after the auxiliary update; WSR under the ceiling."""
    worst = 0.0
    for index in range(cases):
        state = random_state(seed, index)
        aux = state.aux
        rate = wsr(state.channels, state.beams)
        lag = f_lag(state.channels, state.beams, aux.gamma)
        quad = f_quad(state.channels, state.beams, aux.gamma, aux.phi)
        worst = max(worst, abs(quad - lag) / (1 + abs(rate)), abs(lag - rate) / (1 + abs(rate)))
    bounded = True
    for index in range(draws):
        state = random_state(seed, cases + index)
        rate = wsr(state.channels, state.beams)
        if rate > r_max_bound(VERIFY_DIMS, state.geometries, state.beams):
            log.warning("draw %d: wsr=%r above the rate ceiling", index, rate)
            bounded = False
    return SuiteResult(TIGHTNESS, "max_gap", worst, 1e-8, cases, bounded and worst <= 1e-8)


def suite_mul_equivalence(seed: int = 0, cases: int = 100) -> SuiteResult:
    rng = np.random.default_rng([int(seed), 7])
    worst = 0.0
    for _ in range(cases):
        M = int(rng.choice([4, 8, 12, 16]))
        C = int(rng.choice([c for c in (1, 2, 4) if M % c == 0]))
        plan = ClusterPlan(C=C, M_c=M // C)
        A = _crandn(rng, M, int(rng.integers(1, 5)))
        B = _crandn(rng, M, int(rng.integers(1, 5)))
        worst = max(worst, relative_error(mul_reduce(plan.shard(A), plan.shard(B)), A.conj().T @ B))
    return SuiteResult(MUL_EQUIVALENCE, "max_rel_error", worst, 1e-12, cases, worst <= 1e-12)


def suite_dec_equivalence(seed: int = 0, cases: int = 10) -> SuiteResult:
    """Decentralized objective, auxiliaries, eta, beamformer step and derivatives."""
    plan = ClusterPlan.for_dims(VERIFY_DIMS)
    worst = 0.0
    for index in range(cases):
        state = random_state(seed, index)
        channels, beams, aux, geos = state.channels, state.beams, state.aux, state.geometries
        G, W, H = shard_state(state, plan)
        g_tilde = reduce_blocks([local_products(G_c, W_c) for G_c, W_c in zip(G, W)])
        reduced = ReducedBlocks(g_tilde, 0)
        objective = dec_objective(reduced, geos, channels.F, beams.noise, beams.weights, aux=aux)
        errors = [
            relative_error(objective.wsr, wsr(channels, beams)),
            relative_error(objective.f_quad, f_quad(channels, beams, aux.gamma, aux.phi)),
            relative_error(dec_eta(H, aux), nonhomogeneous_eta(channels, aux)),
        ]
        fresh = dec_update_aux(reduced, geos, channels.F, beams.noise, beams.weights)
        central_aux = update_auxiliaries(channels, beams)
        for k in range(len(geos)):
            errors.append(relative_error(fresh.phi[k], central_aux.phi[k]))
            errors.append(relative_error(fresh.gamma[k], central_aux.gamma[k]))

        rng = np.random.default_rng([int(seed), int(index), 2])
        before = random_beams(rng, VERIFY_DIMS, beams.P_max).W
        memory = aux.evolve(W_prev=beams.W, W_prev2=before)
        central_w = update_w_inverse_free(channels, memory, beams, iteration=5).W
        before_shards = [[w[rows] for w in before] for rows in plan.slices()]
        shards, _ = dec_update_w(W, before_shards, H, aux, beams.weights, beams.P_max, 5)
        for k in range(len(geos)):
            errors.append(relative_error(plan.assemble([s[k] for s in shards]), central_w[k]))

        deriv = tx_derivatives(channels, beams, aux, geos)
        s_hat = sigma_hat_tx(geos, channels.F, aux)
        for c, rows in enumerate(plan.slices()):
            D, _ = local_tx_rows(W[c], aux, geos, channels.F, beams.weights, g_tilde, s_hat)
            errors.extend(relative_error(D[k], deriv.D[k][rows]) for k in range(len(geos)))
        for k, geo in enumerate(geos):
            D_rx, _, _, _ = dec_rx_derivative(
                g_tilde[k], aux, geo, channels.F[k], beams.weights[k], k
            )
            errors.append(relative_error(D_rx, rx_derivatives(channels, beams, aux, geos, k).D[0]))
        worst = max(worst, max(errors))
    return SuiteResult(DEC_EQUIVALENCE, "max_rel_error", worst, 1e-10, cases, worst <= 1e-10)


SUITES: Dict[str, Callable[..., SuiteResult]] = {
    GRAD_TX: suite_grad_tx,
    GRAD_RX: suite_grad_rx,
    MAJORIZATION: suite_majorization,
    DELTA_DOMINANCE: suite_delta_dominance,
    TIGHTNESS: suite_tightness,
    MUL_EQUIVALENCE: suite_mul_equivalence,
    DEC_EQUIVALENCE: suite_dec_equivalence,
}


def select_suites(globs) -> List[str]:
    """Suite names matching any glob; every glob must match at least one suite."""
    if not globs:
        return list(SUITES)
    for glob in globs:
        if not any(NameRegexFilter.from_glob_list([glob])(name) for name in SUITES):
            raise InvalidArgument(f"no verify suite matches {glob!r}")
    matches = NameRegexFilter.from_glob_list(globs)
    return [name for name in SUITES if matches(name)]


def run_suites(names, seed: int = 0) -> List[SuiteResult]:
    results = []
    for name in names:
        log.info("verify: running %s", name)
        result = SUITES[name](seed=seed)
        log.debug("verify: %r", result)
        results.append(result)
    return results
