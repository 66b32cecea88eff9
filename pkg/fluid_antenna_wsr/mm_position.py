"""Parallel majorization-maximization over antenna positions.

With the beamformers and FP auxiliaries frozen, f_quad is a smooth function
of each antenna coordinate. A scalar curvature bound ``delta`` turns the
first-order expansion into a concave quadratic surrogate that lower-bounds
f_quad everywhere and touches it at the anchor, so all antennas on one side
move in a single projected step ``x = proj(x_anchor + grad / delta)``.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
import scipy.linalg

from fluid_antenna_wsr.channel import (
    RX,
    TX,
    AntennaLayout,
    ChannelSet,
    PathGeometry,
    receive_frm,
    transmit_frms,
    with_receive_frm,
    with_transmit_frms,
)
from fluid_antenna_wsr.errors import InvalidArgument, PreconditionViolation
from fluid_antenna_wsr.objective import (
    AuxiliaryState,
    BeamformerSet,
    f_quad,
    hermitian,
    identity_plus,
)

log = logging.getLogger("faw")

EXACT, SEPARABLE = "exact", "separable"
DELTA_RULES = frozenset([EXACT, SEPARABLE])


@attr.s(slots=True, frozen=True, eq=False)
class PositionState:
    """Everything the position blocks read; positions and channels change together."""

    geometries: Tuple[PathGeometry, ...] = attr.ib(converter=tuple)
    layout: AntennaLayout = attr.ib()
    channels: ChannelSet = attr.ib()
    beams: BeamformerSet = attr.ib()
    aux: AuxiliaryState = attr.ib()

    def evolve(self, **changes) -> "PositionState":
        return attr.evolve(self, **changes)

    def f_quad(self) -> float:
        return f_quad(self.channels, self.beams, self.aux.gamma, self.aux.phi)


@attr.s(slots=True, frozen=True, eq=False)
class DerivativeMatrices:
    """First-order derivative of f_quad w.r.t. the field-response matrices of one side.

    For the transmit side ``D`` holds one M x L_tx matrix per user and
    ``aggregate`` is sum_k W_k W_k^H; for the receive side of user k, ``D`` holds
    the single N x L_rx matrix and ``aggregate`` is Phi_k (I + Gamma_k) Phi_k^H.
    ``offset`` is the part of D that does not depend on the positions being moved.
    """

    side: str = attr.ib()
    D: List[np.ndarray] = attr.ib()
    aggregate: np.ndarray = attr.ib()
    sigma_hat: List[np.ndarray] = attr.ib()
    offset: List[np.ndarray] = attr.ib()
    xi: List[np.ndarray] = attr.ib()


@attr.s(slots=True, frozen=True, eq=False)
class SurrogateCoeffs:
    grad: np.ndarray = attr.ib()
    delta: float = attr.ib()
    anchor: np.ndarray = attr.ib()
    value: Optional[float] = attr.ib(default=None)

    def __attrs_post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise InvalidArgument("non-finite surrogate gradient")

    def surrogate(self, positions: np.ndarray) -> float:
        """Quadratic lower bound h(x | anchor); needs ``value`` = f_quad(anchor)."""
        step = np.asarray(positions, float).reshape(-1) - self.anchor.reshape(-1)
        return float(self.value + self.grad @ step - 0.5 * self.delta * step @ step)


def phase_gradient(D, frm, directions, wavenumber) -> Tuple[np.ndarray, np.ndarray]:
    """-2c sum_q |D_iq| sin(xi_iq) u_q for every antenna i, with xi = angle(D) + c u_q.x_i."""
    xi = np.angle(D) + np.angle(frm.T)
    return -2.0 * wavenumber * (np.abs(D) * np.sin(xi)) @ directions, xi


def tx_derivatives(
    channels: ChannelSet,
    beams: BeamformerSet,
    aux: AuxiliaryState,
    geometries: Sequence[PathGeometry],
) -> DerivativeMatrices:
    W_hat = hermitian(sum(w @ w.conj().T for w in beams.W))
    D, sigma_hat, offset, xi = [], [], [], []
    for k, geo in enumerate(geometries):
        A = identity_plus(aux.gamma[k])
        back = channels.F[k] @ aux.phi[k]  # L_rx x d
        s_hat = hermitian(geo.prm.conj().T @ back @ A @ back.conj().T @ geo.prm)
        b_k = math.sqrt(beams.weights[k]) * beams.W[k] @ A @ back.conj().T @ geo.prm
        d_k = b_k - W_hat @ channels.G[k].conj().T @ s_hat
        D.append(d_k)
        sigma_hat.append(s_hat)
        offset.append(b_k)
        xi.append(np.angle(d_k) + np.angle(channels.G[k].T))
    return DerivativeMatrices(TX, D, W_hat, sigma_hat, offset, xi)


def rx_derivatives(
    channels: ChannelSet,
    beams: BeamformerSet,
    aux: AuxiliaryState,
    geometries: Sequence[PathGeometry],
    k: int,
) -> DerivativeMatrices:
    geo = geometries[k]
    A = identity_plus(aux.gamma[k])
    P_k = hermitian(aux.phi[k] @ A @ aux.phi[k].conj().T)
    W_hat = sum(w @ w.conj().T for w in beams.W)
    forward = geo.prm @ channels.G[k]  # L_rx x M
    s_hat = hermitian(forward @ W_hat @ forward.conj().T)
    c_k = math.sqrt(beams.weights[k]) * aux.phi[k] @ A @ (forward @ beams.W[k]).conj().T
    d_k = c_k - P_k @ channels.F[k].conj().T @ s_hat
    xi = np.angle(d_k) + np.angle(channels.F[k].T)
    return DerivativeMatrices(RX, [d_k], P_k, [s_hat], [c_k], [xi])


def grad_tx(channels, beams, aux, geometries) -> np.ndarray:
    """Gradient of f_quad w.r.t. the M x 3 transmit positions, flattened row-major."""
    deriv = tx_derivatives(channels, beams, aux, geometries)
    grad = np.zeros((beams.M, 3))
    for k, geo in enumerate(geometries):
        g_k, _ = phase_gradient(deriv.D[k], channels.G[k], geo.directions(TX), geo.wavenumber)
        grad += g_k
    return grad.reshape(-1)


def grad_rx(channels, beams, aux, geometries, k: int) -> np.ndarray:
    """Gradient of f_quad w.r.t. user k's N x 3 receive positions, flattened."""
    geo = geometries[k]
    deriv = rx_derivatives(channels, beams, aux, geometries, k)
    grad, _ = phase_gradient(deriv.D[0], channels.F[k], geo.directions(RX), geo.wavenumber)
    return grad.reshape(-1)


def delta_rows(
    row_abs_sum: np.ndarray,
    row_norm: np.ndarray,
    count: int,
    sigma_norms: Sequence[float],
    offset_row_norms: Sequence[np.ndarray],
    paths: Sequence[int],
    wavenumbers: Sequence[float],
) -> np.ndarray:
    """Per-antenna curvature bound, summed over the users in the given lists.

    For antenna i: sum_k 6 c_k^2 L_k [(sum_j |A_ij| + sqrt(count) ||A_i||) ||S_k||_2
    + ||B_k[i]|| / sqrt(L_k)], with A the aggregate, S_k the path-domain
    curvature and B_k the position-independent derivative term.
    """
    rows = np.zeros_like(np.asarray(row_abs_sum, float))
    structural = np.asarray(row_abs_sum) + math.sqrt(count) * np.asarray(row_norm)
    for s_norm, b_rows, L, c in zip(sigma_norms, offset_row_norms, paths, wavenumbers):
        rows = rows + 6.0 * c * c * L * (structural * s_norm + np.asarray(b_rows) / math.sqrt(L))
    return rows


def spectral_norm(a: np.ndarray) -> float:
    return float(max(scipy.linalg.eigvalsh(hermitian(a)).max(), 0.0))


def separable_row_sums(W: Sequence[np.ndarray]) -> np.ndarray:
    """sum_t ||[W_t]_i|| sum_j ||[W_t]_j||, an upper bound on sum_j |[sum_t W_t W_t^H]_ij|."""
    norms = np.stack([np.linalg.norm(w, axis=1) for w in W])  # K x M
    return norms.T @ norms.sum(axis=1)


def delta_tx(
    channels: ChannelSet,
    beams: BeamformerSet,
    aux: AuxiliaryState,
    geometries: Sequence[PathGeometry],
    rule: str = EXACT,
) -> float:
    """Scalar bound on the transmit-position Hessian spectrum, valid for every T."""
    if rule not in DELTA_RULES:
        raise InvalidArgument(f"unknown delta rule {rule!r}")
    deriv = tx_derivatives(channels, beams, aux, geometries)
    W_hat = deriv.aggregate
    if rule == EXACT:
        row_abs = np.abs(W_hat).sum(axis=1)
    else:
        row_abs = separable_row_sums(beams.W)
    rows = delta_rows(
        row_abs,
        np.linalg.norm(W_hat, axis=1),
        beams.M,
        [spectral_norm(s) for s in deriv.sigma_hat],
        [np.linalg.norm(b, axis=1) for b in deriv.offset],
        [geo.L_tx for geo in geometries],
        [geo.wavenumber for geo in geometries],
    )
    return float(rows.max())


def delta_rx(
    channels: ChannelSet,
    beams: BeamformerSet,
    aux: AuxiliaryState,
    geometries: Sequence[PathGeometry],
    k: int,
) -> float:
    geo = geometries[k]
    deriv = rx_derivatives(channels, beams, aux, geometries, k)
    P_k = deriv.aggregate
    rows = delta_rows(
        np.abs(P_k).sum(axis=1),
        np.linalg.norm(P_k, axis=1),
        P_k.shape[0],
        [spectral_norm(deriv.sigma_hat[0])],
        [np.linalg.norm(deriv.offset[0], axis=1)],
        [geo.L_rx],
        [geo.wavenumber],
    )
    return float(rows.max())


def _step(anchor: np.ndarray, coeffs: SurrogateCoeffs) -> np.ndarray:
    if coeffs.delta <= 0:
        if np.any(coeffs.grad != 0):
            raise PreconditionViolation("zero curvature bound with a nonzero gradient")
        return np.array(anchor)
    return anchor + coeffs.grad.reshape(anchor.shape) / coeffs.delta


def mm_step_tx(layout: AntennaLayout, coeffs: SurrogateCoeffs) -> np.ndarray:
    return layout.project_tx(_step(layout.T, coeffs))


def mm_step_rx(layout: AntennaLayout, coeffs: SurrogateCoeffs, k: int) -> np.ndarray:
    return layout.project_rx(_step(layout.R[k], coeffs), k)


def tx_coefficients(state: PositionState, delta: float) -> SurrogateCoeffs:
    grad = grad_tx(state.channels, state.beams, state.aux, state.geometries)
    return SurrogateCoeffs(grad=grad, delta=delta, anchor=np.array(state.layout.T), value=state.f_quad())


def rx_coefficients(state: PositionState, delta: float, k: int) -> SurrogateCoeffs:
    grad = grad_rx(state.channels, state.beams, state.aux, state.geometries, k)
    return SurrogateCoeffs(
        grad=grad, delta=delta, anchor=np.array(state.layout.R[k]), value=state.f_quad()
    )


def move_tx(state: PositionState, T: np.ndarray) -> PositionState:
    G = transmit_frms(state.geometries, T)
    return state.evolve(
        layout=state.layout.with_tx(T),
        channels=with_transmit_frms(state.channels, state.geometries, G),
    )


def move_rx(state: PositionState, R_k: np.ndarray, k: int) -> PositionState:
    F_k = receive_frm(state.geometries[k], R_k)
    return state.evolve(
        layout=state.layout.with_rx(R_k, k),
        channels=with_receive_frm(state.channels, state.geometries[k], k, F_k),
    )


@attr.s(slots=True, frozen=True, eq=False)
class MMResult:
    state: PositionState = attr.ib()
    trace: List[float] = attr.ib()
    iterations: int = attr.ib()
    delta: float = attr.ib()


def relative_gain(new: float, old: float) -> float:
    return (new - old) / max(abs(old), 1e-300)


def _loop(state, delta, coefficients, step, move, tol, max_iter):
    trace = [state.f_quad()]
    iterations = 0
    if delta <= 0:
        return state, trace, iterations
    while iterations < max_iter:
        coeffs = coefficients(state, delta)
        state = move(state, step(state.layout, coeffs))
        trace.append(state.f_quad())
        iterations += 1
        if relative_gain(trace[-1], trace[-2]) < tol:
            break
    return state, trace, iterations


def mm_loop(
    side: str,
    state: PositionState,
    tol: float = 1e-5,
    max_iter: int = 50,
    delta_rule: str = EXACT,
    users: Optional[Sequence[int]] = None,
) -> MMResult:
    """Repeat gradient and projected step until f_quad stops improving.

    The curvature bound is computed once; it does not depend on the positions.
    On the receive side every user in ``users`` (default all) runs its own
    loop, since f_quad separates over users in their receive positions.
    """
    if side == TX:
        delta = delta_tx(state.channels, state.beams, state.aux, state.geometries, delta_rule)
        state, trace, iterations = _loop(
            state, delta, tx_coefficients, mm_step_tx, move_tx, tol, max_iter
        )
        log.debug("tx mm: delta=%r, %d steps, f_quad=%r", delta, iterations, trace[-1])
        return MMResult(state, trace, iterations, delta)
    if side != RX:
        raise InvalidArgument(f"unknown side {side!r}")

    trace = [state.f_quad()]
    iterations, delta_max = 0, 0.0
    for k in range(len(state.geometries)) if users is None else users:
        delta = delta_rx(state.channels, state.beams, state.aux, state.geometries, k)
        state, user_trace, count = _loop(
            state,
            delta,
            lambda s, dl, k=k: rx_coefficients(s, dl, k),
            lambda layout, coeffs, k=k: mm_step_rx(layout, coeffs, k),
            lambda s, R_k, k=k: move_rx(s, R_k, k),
            tol,
            max_iter,
        )
        trace.extend(user_trace[1:])
        iterations += count
        delta_max = max(delta_max, delta)
    log.debug("rx mm: %d steps, f_quad=%r", iterations, trace[-1])
    return MMResult(state, trace, iterations, delta_max)


def linearized_separation_check(
    positions: np.ndarray, anchor: np.ndarray, min_sep: float
) -> Tuple[bool, List[Tuple[int, int]]]:
    """Sufficient spacing test linearized at the anchor positions.

    A pair passes when (a_i - a_j).(x_i - x_j) / ||a_i - a_j|| >= min_sep, which
    implies ||x_i - x_j|| >= min_sep by Cauchy-Schwarz.
    """
    positions = np.asarray(positions, float)
    anchor = np.asarray(anchor, float)
    violations = []
    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            gap = anchor[i] - anchor[j]
            norm = float(np.linalg.norm(gap))
            if norm == 0.0:
                raise InvalidArgument(f"anchor positions {i} and {j} coincide")
            if gap @ (positions[i] - positions[j]) / norm < min_sep * (1 - 1e-12):
                violations.append((i, j))
    return not violations, violations
