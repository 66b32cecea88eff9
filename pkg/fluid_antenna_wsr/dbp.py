"""Decentralized baseband processing: one CU driving C DUs over a message fabric.

DU ``c`` owns transmit antennas ``c*M_c .. (c+1)*M_c - 1``: their positions,
boxes, field responses and beamformer rows. Everything that crosses the
fabric is a reduction over clusters whose shape depends on K, N, d and the
path counts only; the fabric asserts this for every message.

One outer iteration (both position blocks on, no momentum restart, one MM
step) runs these rounds; each round is one message per DU::

    broadcast      aux            Gamma, Phi, EVD factors of I + Gamma, F
    gather         p_tilde        (P_k^c)^H P_j^c
    broadcast      eta            eta and the extrapolation weight
    gather         upsilon        H_j^c Upsilon_k^c
    broadcast      upsilon        the reduced H Upsilon blocks
    scalar-reduce  q_power        ||Q^c||_F^2
    broadcast      scale          power scaling factor
    gather         g_tilde        G_k^c W_j^c at the candidate beamformers
    broadcast      commit         accept the candidate or restart
    gather         w_tilde        (W_t^c)^H W_s^c
    scalar-reduce  row_norms      sum_j ||[W_t^c]_j|| per user
    broadcast      t_coeffs       G~, W~, row sums, Sigma hat and its norms
    scalar-reduce  delta_tx       max_m delta_(m,c)
    broadcast      delta          the global curvature bound
    gather         g_tilde_moved  G_k^c W_j^c after the position step

A momentum restart repeats the upsilon .. commit rounds once with zero
extrapolation. The transmit MM runs until the CU sees the relative f_quad gain
fall below ``tol_inner`` (or ``max_inner`` steps); each extra step adds a
``g_tilde_step`` broadcast and a ``g_tilde_moved`` gather. The receive
positions never leave the CU.
"""
import contextlib
import functools
import logging
import math
import queue
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

import attr
import numpy as np

from fluid_antenna_wsr.channel import (
    RX,
    TX,
    AntennaLayout,
    PathGeometry,
    assemble_channels,
    compose_channel,
    receive_frm,
    transmit_frms,
)
from fluid_antenna_wsr.errors import (
    FawError,
    InvalidArgument,
    NumericalFailure,
    PreconditionViolation,
    ProtocolViolation,
)
from fluid_antenna_wsr.fp_core import (
    auxiliaries_from_products,
    budget_factor,
    evd_factors,
    extrapolate,
    extrapolation_weight,
)
from fluid_antenna_wsr.messages import (
    BROADCAST,
    CU,
    GATHER,
    SCALAR_REDUCE,
    Message,
    MessageLog,
    check_m_independent,
    du_name,
)
from fluid_antenna_wsr.mm_position import (
    PositionState,
    delta_rows,
    phase_gradient,
    relative_gain,
    spectral_norm,
)
from fluid_antenna_wsr.objective import (
    AuxiliaryState,
    BeamformerSet,
    f_quad_from_products,
    hermitian,
    identity_plus,
    interference_from_products,
    r_max_bound,
    to_bits,
    user_rates_from_products,
)
from fluid_antenna_wsr.run_config import INVERSE_FREE, SolverConfig
from fluid_antenna_wsr.scenario import Scenario
from fluid_antenna_wsr.solver import (
    AUX,
    BEAM,
    CONVERGED,
    MAX_ITERATIONS,
    RX_POS,
    TIGHTNESS_TOL,
    TX_POS,
    SolverReport,
    relative_change,
    should_restart,
)

log = logging.getLogger("faw")

INBOX_DEPTH = 8

ITERATION_ROUNDS = (
    (BROADCAST, "aux"),
    (GATHER, "p_tilde"),
    (BROADCAST, "eta"),
    (GATHER, "upsilon"),
    (BROADCAST, "upsilon"),
    (SCALAR_REDUCE, "q_power"),
    (BROADCAST, "scale"),
    (GATHER, "g_tilde"),
    (BROADCAST, "commit"),
    (GATHER, "w_tilde"),
    (SCALAR_REDUCE, "row_norms"),
    (BROADCAST, "t_coeffs"),
    (SCALAR_REDUCE, "delta_tx"),
    (BROADCAST, "delta"),
    (GATHER, "g_tilde_moved"),
)


def _at_least_one(instance, attribute, value):
    if int(value) < 1:
        raise InvalidArgument(f"{attribute.name} must be at least 1: {value!r}")


@attr.s(slots=True, frozen=True)
class ClusterPlan:
    """Contiguous split of the M transmit antennas into C blocks of M_c."""

    C: int = attr.ib(converter=int, validator=_at_least_one)
    M_c: int = attr.ib(converter=int, validator=_at_least_one)

    @classmethod
    def for_dims(cls, dims) -> "ClusterPlan":
        return cls(C=dims.C, M_c=dims.M_c)

    @property
    def M(self) -> int:
        return self.C * self.M_c

    def rows(self, c: int) -> slice:
        if not 0 <= c < self.C:
            raise InvalidArgument(f"cluster index {c} out of range for C={self.C}")
        return slice(c * self.M_c, (c + 1) * self.M_c)

    def slices(self) -> List[slice]:
        return [self.rows(c) for c in range(self.C)]

    def assignment(self) -> np.ndarray:
        return np.repeat(np.arange(self.C), self.M_c)

    def shard(self, matrix) -> List[np.ndarray]:
        arr = np.asarray(matrix)
        if arr.shape[0] != self.M:
            raise InvalidArgument(f"cannot shard {arr.shape[0]} rows over M={self.M}")
        return [arr[rows] for rows in self.slices()]

    def assemble(self, shards: Sequence[np.ndarray]) -> np.ndarray:
        if len(shards) != self.C:
            raise InvalidArgument(f"{len(shards)} shards for C={self.C}")
        return np.concatenate(shards, axis=0)


def mul_reduce(A_shards: Sequence[np.ndarray], B_shards: Sequence[np.ndarray]) -> np.ndarray:
    """sum_c (A^c)^H B^c, accumulated in cluster-index order."""
    if len(A_shards) != len(B_shards) or not A_shards:
        raise InvalidArgument(f"{len(A_shards)} left shards against {len(B_shards)} right shards")
    total = None
    for c, (a, b) in enumerate(zip(A_shards, B_shards)):
        a, b = np.asarray(a), np.asarray(b)
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise InvalidArgument(f"cluster {c}: shapes {a.shape} and {b.shape} do not align")
        part = a.conj().T @ b
        if total is not None and part.shape != total.shape:
            raise InvalidArgument(f"cluster {c}: column counts differ from cluster 0")
        total = part if total is None else total + part
    return total


def reduce_blocks(parts):
    """Sum per-cluster contributions in cluster order, keeping list nesting."""
    if not parts:
        raise InvalidArgument("nothing to reduce")
    first = parts[0]
    if isinstance(first, (list, tuple)):
        if any(len(p) != len(first) for p in parts):
            raise InvalidArgument("per-cluster contributions differ in length")
        return [reduce_blocks([p[i] for p in parts]) for i in range(len(first))]
    total = np.array(first, copy=True)
    for part in parts[1:]:
        total = total + part
    return total


@attr.s(slots=True, frozen=True, eq=False)
class ReducedBlocks:
    """G~_kj = sum_c G_k^c W_j^c (L_tx x d) stamped with the state version it reflects."""

    g_tilde = attr.ib()
    version: int = attr.ib()


@attr.s(slots=True, frozen=True, eq=False)
class DecentralizedObjective:
    interference: List[np.ndarray] = attr.ib()
    rates: np.ndarray = attr.ib()
    wsr: float = attr.ib()
    f_quad: Optional[float] = attr.ib(default=None)


def local_channels(geometries: Sequence[PathGeometry], F, G_c) -> List[np.ndarray]:
    """H_k^c = F_k^H Sigma_k G_k^c for the antennas of one cluster."""
    return [compose_channel(F[k], geo.prm, G_c[k]) for k, geo in enumerate(geometries)]


def local_products(left, right) -> List[List[np.ndarray]]:
    return [[l @ r for r in right] for l in left]


def products_from_g_tilde(geometries: Sequence[PathGeometry], F, g_tilde) -> np.ndarray:
    """H_k W_j = F_k^H Sigma_k G~_kj as the K x K x N x d product array."""
    return np.stack(
        [
            np.stack([F[k].conj().T @ geo.prm @ g for g in g_tilde[k]])
            for k, geo in enumerate(geometries)
        ]
    )


def _check_version(reduced: ReducedBlocks, expected: Optional[int]):
    if expected is not None and reduced.version != expected:
        raise ProtocolViolation(
            f"stale reduction: version {reduced.version}, expected {expected}"
        )


def dec_objective(
    reduced: ReducedBlocks,
    geometries: Sequence[PathGeometry],
    F,
    noise,
    weights,
    aux: Optional[AuxiliaryState] = None,
    expected_version: Optional[int] = None,
) -> DecentralizedObjective:
    _check_version(reduced, expected_version)
    HW = products_from_g_tilde(geometries, F, reduced.g_tilde)
    interference = [interference_from_products(HW, noise[k], k) for k in range(HW.shape[0])]
    rates = user_rates_from_products(HW, noise)
    value = None
    if aux is not None:
        value = f_quad_from_products(HW, noise, weights, aux.gamma, aux.phi)
    return DecentralizedObjective(
        interference, rates, float(np.dot(weights, rates)), value
    )


def dec_update_aux(
    reduced: ReducedBlocks,
    geometries: Sequence[PathGeometry],
    F,
    noise,
    weights,
    expected_version: Optional[int] = None,
) -> AuxiliaryState:
    _check_version(reduced, expected_version)
    HW = products_from_g_tilde(geometries, F, reduced.g_tilde)
    return auxiliaries_from_products(HW, noise, weights)


def aux_factors(aux: AuxiliaryState):
    return [evd_factors(g) for g in aux.gamma]


def local_p_tilde(H_c, aux: AuxiliaryState, factors) -> List[List[np.ndarray]]:
    P = [
        H_k.conj().T @ phi_k @ xi * np.sqrt(lam)
        for H_k, phi_k, (lam, xi) in zip(H_c, aux.phi, factors)
    ]
    return local_products([p.conj().T for p in P], P)


def eta_from_p_tilde(p_tilde) -> float:
    total = 0.0
    for row in p_tilde:
        for block in row:
            total += float(np.sum(np.abs(block) ** 2))
    return math.sqrt(total)


def dec_eta(H_shards, aux: AuxiliaryState) -> float:
    """Non-homogeneous bound from d x d reductions only."""
    factors = aux_factors(aux)
    return eta_from_p_tilde(reduce_blocks([local_p_tilde(H_c, aux, factors) for H_c in H_shards]))


def local_q(H_c, upsilon_c, aux: AuxiliaryState, weights, y_tilde, eta: float):
    """Rows of Q_k = Upsilon_k + (B_k - L Upsilon_k) / eta held by one cluster."""
    Q = []
    for k, u in enumerate(upsilon_c):
        b = math.sqrt(weights[k]) * H_c[k].conj().T @ aux.phi[k] @ identity_plus(aux.gamma[k])
        curvature = sum(
            H_j.conj().T @ phi_j @ identity_plus(gamma_j) @ phi_j.conj().T @ y_tilde[j][k]
            for j, (H_j, phi_j, gamma_j) in enumerate(zip(H_c, aux.phi, aux.gamma))
        )
        Q.append(u + (b - curvature) / eta)
    return Q


def _power(shard) -> float:
    return float(sum(np.vdot(q, q).real for q in shard))


def dec_update_w(
    W_shards,
    W_before_shards,
    H_shards,
    aux: AuxiliaryState,
    weights,
    P_max: float,
    iteration: int,
    eta: Optional[float] = None,
    nu: Optional[float] = None,
):
    """Inverse-free beamformer step over cluster shards; returns (shards, scale)."""
    if eta is None:
        eta = dec_eta(H_shards, aux)
    if eta <= 0:
        raise PreconditionViolation("non-homogeneous bound is zero; skip the update")
    if nu is None:
        nu = extrapolation_weight(iteration)
    upsilon = [extrapolate(W_c, before, nu) for W_c, before in zip(W_shards, W_before_shards)]
    y_tilde = reduce_blocks([local_products(H_c, U_c) for H_c, U_c in zip(H_shards, upsilon)])
    Q = [
        local_q(H_c, U_c, aux, weights, y_tilde, eta)
        for H_c, U_c in zip(H_shards, upsilon)
    ]
    p_q = 0.0
    for shard in Q:
        p_q += _power(shard)
    factor = budget_factor(p_q, P_max)
    return [[factor * q for q in shard] for shard in Q], factor


def sigma_hat_tx(geometries: Sequence[PathGeometry], F, aux: AuxiliaryState) -> List[np.ndarray]:
    """Sigma_k^H F_k Phi_k (I + Gamma_k) Phi_k^H F_k^H Sigma_k, L_tx x L_tx per user."""
    out = []
    for k, geo in enumerate(geometries):
        back = F[k] @ aux.phi[k]
        out.append(
            hermitian(geo.prm.conj().T @ back @ identity_plus(aux.gamma[k]) @ back.conj().T @ geo.prm)
        )
    return out


def local_row_sums(W_c) -> np.ndarray:
    return np.array([float(np.linalg.norm(w, axis=1).sum()) for w in W_c])


def local_tx_rows(W_c, aux: AuxiliaryState, geometries, F, weights, g_tilde, sigma_hat):
    """This cluster's rows of the transmit derivative D_k and its offset B_k."""
    D, B = [], []
    for k, geo in enumerate(geometries):
        back = F[k] @ aux.phi[k]
        b_k = (
            math.sqrt(weights[k]) * W_c[k] @ identity_plus(aux.gamma[k]) @ back.conj().T @ geo.prm
        )
        coupled = sum(w_j @ g.conj().T for w_j, g in zip(W_c, g_tilde[k]))
        D.append(b_k - coupled @ sigma_hat[k])
        B.append(b_k)
    return D, B


def local_tx_gradient(D, G_c, geometries) -> np.ndarray:
    grad = np.zeros((G_c[0].shape[1], 3))
    for D_k, G_k, geo in zip(D, G_c, geometries):
        g_k, _ = phase_gradient(D_k, G_k, geo.directions(TX), geo.wavenumber)
        grad += g_k
    return grad


def local_delta(W_c, B, w_tilde, row_sums, sigma_norms, geometries, M: int) -> float:
    """Largest curvature bound over this cluster's antennas.

    The aggregate's row norm is exact from the reduced W~ blocks; the absolute
    row sum uses the separable bound, so the result never falls below the
    centralized value.
    """
    norms = np.stack([np.linalg.norm(w, axis=1) for w in W_c])
    row_abs = norms.T @ np.asarray(row_sums)
    V = np.concatenate(W_c, axis=1)
    squared = np.einsum("md,de,me->m", V, np.block(w_tilde), V.conj()).real
    rows = delta_rows(
        row_abs,
        np.sqrt(np.clip(squared, 0.0, None)),
        M,
        sigma_norms,
        [np.linalg.norm(b, axis=1) for b in B],
        [geo.L_tx for geo in geometries],
        [geo.wavenumber for geo in geometries],
    )
    return float(rows.max()) if rows.size else 0.0


def dec_grad_delta_tx(
    W_shards, G_shards, aux: AuxiliaryState, geometries, F, weights, g_tilde=None
):
    """Per-cluster transmit gradients (M_c x 3) and the global curvature bound."""
    M = sum(W_c[0].shape[0] for W_c in W_shards)
    if g_tilde is None:
        g_tilde = reduce_blocks([local_products(G_c, W_c) for G_c, W_c in zip(G_shards, W_shards)])
    w_tilde = reduce_blocks(
        [local_products([w.conj().T for w in W_c], W_c) for W_c in W_shards]
    )
    row_sums = reduce_blocks([local_row_sums(W_c) for W_c in W_shards])
    s_hat = sigma_hat_tx(geometries, F, aux)
    s_norms = [spectral_norm(s) for s in s_hat]
    grads, delta = [], 0.0
    for W_c, G_c in zip(W_shards, G_shards):
        D, B = local_tx_rows(W_c, aux, geometries, F, weights, g_tilde, s_hat)
        grads.append(local_tx_gradient(D, G_c, geometries))
        delta = max(delta, local_delta(W_c, B, w_tilde, row_sums, s_norms, geometries, M))
    return grads, delta


def dec_rx_derivative(g_row, aux: AuxiliaryState, geometry: PathGeometry, F_k, weight, k: int):
    """(D, C, P, S) for user k's receive positions, built from G~_kj alone."""
    A = identity_plus(aux.gamma[k])
    P = hermitian(aux.phi[k] @ A @ aux.phi[k].conj().T)
    forward = [geometry.prm @ g for g in g_row]
    s_hat = hermitian(sum(f @ f.conj().T for f in forward))
    C = math.sqrt(weight) * aux.phi[k] @ A @ forward[k].conj().T
    return C - P @ F_k.conj().T @ s_hat, C, P, s_hat


def dec_delta_rx(C, P, s_hat, geometry: PathGeometry) -> float:
    rows = delta_rows(
        np.abs(P).sum(axis=1),
        np.linalg.norm(P, axis=1),
        P.shape[0],
        [spectral_norm(s_hat)],
        [np.linalg.norm(C, axis=1)],
        [geometry.L_rx],
        [geometry.wavenumber],
    )
    return float(rows.max())


def dec_update_rx(
    g_tilde,
    aux: AuxiliaryState,
    geometries: Sequence[PathGeometry],
    layout: AntennaLayout,
    R_k,
    F_k,
    weight,
    k: int,
    steps: int = 1,
    tol: Optional[float] = None,
    objective: Optional[Callable[[np.ndarray], float]] = None,
):
    """CU-local MM steps for user k; returns (R_k, F_k, delta, steps taken).

    With ``tol`` the loop stops once the relative f_quad gain drops below it and
    ``steps`` is only a cap; ``objective`` maps a candidate F_k to f_quad.
    """
    if tol is not None and objective is None:
        raise InvalidArgument("a stopping tolerance needs an objective")
    geo = geometries[k]
    D, C, P, s_hat = dec_rx_derivative(g_tilde[k], aux, geo, F_k, weight, k)
    delta = dec_delta_rx(C, P, s_hat, geo)
    if delta <= 0:
        return R_k, F_k, delta, 0
    f_prev = objective(F_k) if tol is not None else None
    taken = 0
    while taken < steps:
        if taken:
            D = C - P @ F_k.conj().T @ s_hat
        grad, _ = phase_gradient(D, F_k, geo.directions(RX), geo.wavenumber)
        R_k = layout.project_rx(R_k + grad / delta, k)
        F_k = receive_frm(geo, R_k)
        taken += 1
        if tol is not None:
            f_new = objective(F_k)
            if relative_gain(f_new, f_prev) < tol:
                break
            f_prev = f_new
    return R_k, F_k, delta, taken


class DistributedUnit:
    """One DU; its state changes only through its inbox and its own tasks."""

    __slots__ = (
        "index",
        "name",
        "T",
        "boxes",
        "W",
        "W_prev2",
        "geometries",
        "weights",
        "M",
        "inbox",
        "busy",
        "last_round",
        "_G",
        "_H",
        "_F",
        "_aux",
        "_factors",
        "_eta",
        "_nu",
        "_upsilon",
        "_Q",
        "_candidate",
        "_coeffs",
        "_delta",
    )

    def __init__(self, index, T, boxes, W, geometries, weights, M, depth=INBOX_DEPTH):
        self.index = index
        self.name = du_name(index)
        self.T = np.array(T, dtype=float)
        self.boxes = np.array(boxes, dtype=float)
        self.W = [np.array(w, dtype=complex) for w in W]
        self.W_prev2 = list(self.W)
        self.geometries = tuple(geometries)
        self.weights = weights
        self.M = M
        self.inbox = queue.Queue(maxsize=depth)
        self.busy = 0.0
        self.last_round = 0
        self._G = transmit_frms(self.geometries, self.T)
        self._H = self._F = self._aux = self._factors = None
        self._eta = self._nu = self._delta = 0.0
        self._upsilon = self._Q = self._candidate = self._coeffs = None

    def __repr__(self):
        return f"{self.__class__.__name__}({self.name}, M_c={self.T.shape[0]})"

    def deliver(self, message: Message):
        try:
            self.inbox.put_nowait(message)
        except queue.Full as exc:
            raise ProtocolViolation(f"{self.name}: inbox full at round {message.round}") from exc

    def drain(self):
        while True:
            try:
                message = self.inbox.get_nowait()
            except queue.Empty:
                return
            if message.round <= self.last_round:
                raise ProtocolViolation(
                    f"{self.name}: round {message.round} arrived after round {self.last_round}"
                )
            self.last_round = message.round
            handler = getattr(self, "_on_" + message.label, None)
            if handler is None:
                raise ProtocolViolation(f"{self.name}: unexpected message {message.label!r}")
            handler(message.payload)

    def run(self, task):
        start = time.thread_time()
        try:
            self.drain()
            return task(self)
        finally:
            self.busy += time.thread_time() - start

    # broadcast handlers

    def _on_aux(self, payload):
        self._aux = AuxiliaryState(gamma=payload["gamma"], phi=payload["phi"])
        self._factors = list(zip(payload["lam"], payload["xi"]))
        self._F = payload["F"]
        self._H = local_channels(self.geometries, self._F, self._G)

    def _on_eta(self, payload):
        self._eta = float(payload["eta"])
        self._nu = float(payload["nu"])

    def _on_upsilon(self, payload):
        self._Q = local_q(
            self._H, self._upsilon, self._aux, self.weights, payload["reduced"], self._eta
        )

    def _on_scale(self, payload):
        self._candidate = [payload["factor"] * q for q in self._Q]

    def _on_commit(self, payload):
        if payload["restart"]:
            self._nu = 0.0
        else:
            self.W_prev2, self.W = self.W, self._candidate

    def _on_t_coeffs(self, payload):
        self._coeffs = payload

    def _on_delta(self, payload):
        self._delta = float(payload["delta"])

    def _on_g_tilde_step(self, payload):
        self._coeffs = dict(self._coeffs, g_tilde=payload["g_tilde"])

    # tasks

    def products(self):
        return local_products(self._G, self.W)

    def p_tilde(self):
        return local_p_tilde(self._H, self._aux, self._factors)

    def upsilon(self):
        self._upsilon = extrapolate(self.W, self.W_prev2, self._nu)
        return local_products(self._H, self._upsilon)

    def q_power(self):
        return _power(self._Q)

    def candidate_products(self):
        return local_products(self._G, self._candidate)

    def w_tilde(self):
        return local_products([w.conj().T for w in self.W], self.W)

    def row_norms(self):
        return local_row_sums(self.W)

    def _tx_rows(self):
        coeffs = self._coeffs
        return local_tx_rows(
            self.W, self._aux, self.geometries, self._F, self.weights,
            coeffs["g_tilde"], coeffs["sigma_hat"],
        )

    def delta_tx(self):
        _, B = self._tx_rows()
        coeffs = self._coeffs
        return local_delta(
            self.W, B, coeffs["w_tilde"], coeffs["row_sums"], coeffs["sigma_norms"],
            self.geometries, self.M,
        )

    def move(self):
        if self._delta > 0:
            D, _ = self._tx_rows()
            grad = local_tx_gradient(D, self._G, self.geometries)
            self.T = np.clip(self.T + grad / self._delta, self.boxes[:, 0], self.boxes[:, 1])
            self._G = transmit_frms(self.geometries, self.T)
        return self.products()


class Fabric:
    """Bulk-synchronous rounds between the CU and its DUs.

    A broadcast enqueues one message per DU inbox; a gather or scalar reduce
    runs every DU concurrently, each draining its inbox before its task, and
    returns the replies in cluster order.
    """

    __slots__ = ("units", "log", "round", "inbox", "M", "M_c", "allowed", "_order", "_pool")

    def __init__(self, units, M, allowed, message_log=None, M_c=None):
        self.units = list(units)
        self.log = message_log if message_log is not None else MessageLog()
        self.round = 0
        self.inbox = queue.Queue(maxsize=len(self.units))
        self.M = M
        self.M_c = M_c
        self.allowed = frozenset(allowed)
        self._order = {unit.name: i for i, unit in enumerate(self.units)}
        self._pool = ThreadPoolExecutor(max_workers=len(self.units), thread_name_prefix="faw-du")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._pool.shutdown(wait=True)

    def _next_round(self) -> int:
        self.round += 1
        return self.round

    def broadcast(self, label, payload):
        rnd = self._next_round()
        for unit in self.units:
            message = Message(rnd, label, BROADCAST, CU, unit.name, payload, stamp=rnd)
            check_m_independent(message, self.M, self.allowed, self.M_c)
            self.log.record(message)
            unit.deliver(message)

    def collect(self, label, kind, task) -> list:
        rnd = self._next_round()

        def work(unit):
            try:
                payload = unit.run(task)
            except FawError as exc:
                raise exc.__class__(f"{unit.name}: {exc}") from exc
            self.inbox.put(Message(rnd, label, kind, unit.name, CU, payload, stamp=rnd))

        for _ in self._pool.map(work, self.units):
            pass
        replies = []
        while not self.inbox.empty():
            replies.append(self.inbox.get_nowait())
        if len(replies) != len(self.units):
            raise ProtocolViolation(f"round {rnd}: {len(replies)} replies from {len(self.units)} DUs")
        replies.sort(key=lambda m: self._order[m.src])
        for message in replies:
            if message.stamp != rnd:
                raise ProtocolViolation(
                    f"{message.src}: reply stamped {message.stamp} in round {rnd}"
                )
            check_m_independent(message, self.M, self.allowed, self.M_c)
            self.log.record(message)
        log.debug("round %d: %s %s from %d DUs", rnd, kind, label, len(replies))
        return [m.payload for m in replies]


class CentralUnit:
    """CU side of the decentralized solver; owns R, F and every reduction."""

    __slots__ = (
        "scenario",
        "config",
        "plan",
        "units",
        "fabric",
        "R",
        "F",
        "aux",
        "reduced",
        "version",
        "report",
        "iteration",
        "busy",
        "_beams",
    )

    def __init__(self, scenario: Scenario, config: SolverConfig = None):
        self.scenario = scenario
        self.config = config or SolverConfig(beamformer=INVERSE_FREE)
        self.plan = ClusterPlan.for_dims(scenario.dims)
        self.units: List[DistributedUnit] = []
        self.fabric: Optional[Fabric] = None
        self.R = self.F = self.aux = self.reduced = None
        self.version = 0
        self.report = SolverReport()
        self.iteration = 0
        self.busy = 0.0
        self._beams: Optional[BeamformerSet] = None

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(C={self.plan.C}, M_c={self.plan.M_c}, "
            f"iteration={self.iteration})"
        )

    @property
    def geometries(self):
        return self.scenario.geometries

    def _cu(self, func, *args):
        start = time.thread_time()
        try:
            return func(*args)
        except FawError as exc:
            raise exc.__class__(f"{CU}: {exc}") from exc
        finally:
            self.busy += time.thread_time() - start

    @contextlib.contextmanager
    def _block(self, block):
        start = time.perf_counter()
        yield
        self.report.block_times[block].append(time.perf_counter() - start)

    def _allowed_dims(self):
        dims = self.scenario.dims
        paths = {geo.L_tx for geo in self.geometries} | {geo.L_rx for geo in self.geometries}
        return {dims.K, dims.N, dims.d, dims.C, 1, 3} | paths

    def initialize(self):
        scenario, plan = self.scenario, self.plan
        layout = scenario.layout
        beams = scenario.initial_beams()
        self._beams = beams
        self.R = np.array(layout.R)
        self.F = [receive_frm(geo, layout.R[k]) for k, geo in enumerate(self.geometries)]
        self.units = [
            DistributedUnit(
                c,
                layout.T[rows],
                layout.boxes_tx[rows],
                [w[rows] for w in beams.W],
                self.geometries,
                beams.weights,
                plan.M,
            )
            for c, rows in enumerate(plan.slices())
        ]
        self.fabric = Fabric(self.units, plan.M, self._allowed_dims(), M_c=plan.M_c)
        self.report = SolverReport(
            r_max=r_max_bound(scenario.dims, self.geometries, beams),
            message_log=self.fabric.log,
        )
        self.iteration = 0
        self.version = 0
        parts = self.fabric.collect("g_tilde", GATHER, DistributedUnit.products)
        self._cu(self._install, parts)
        self._cu(self._update_aux, False)
        value = self._cu(self._objective)
        self.report.wsr_trace.append(value.wsr)
        self.report.f_quad_trace.append(value.f_quad)
        self.report.powers.append(beams.power)
        log.debug("initial wsr=%r nats over %d DUs", value.wsr, plan.C)

    def _install(self, parts):
        self.version += 1
        self.reduced = ReducedBlocks(reduce_blocks(parts), self.version)

    def _objective(self) -> DecentralizedObjective:
        return dec_objective(
            self.reduced,
            self.geometries,
            self.F,
            self._beams.noise,
            self._beams.weights,
            aux=self.aux,
            expected_version=self.version,
        )

    def _f_quad_at(self, g_tilde, F=None) -> float:
        HW = products_from_g_tilde(self.geometries, self.F if F is None else F, g_tilde)
        return f_quad_from_products(
            HW, self._beams.noise, self._beams.weights, self.aux.gamma, self.aux.phi
        )

    def _update_aux(self, check=True):
        self.aux = dec_update_aux(
            self.reduced,
            self.geometries,
            self.F,
            self._beams.noise,
            self._beams.weights,
            expected_version=self.version,
        )
        if check and self.config.check_invariants:
            current = self.report.wsr_trace[-1]
            value = self._objective().f_quad
            if abs(value - current) > TIGHTNESS_TOL * (1 + abs(current)):
                raise NumericalFailure(
                    f"f_quad={value!r} is not tight against wsr={current!r} after the "
                    "auxiliary update"
                )

    def _aux_payload(self) -> dict:
        factors = aux_factors(self.aux)
        return {
            "gamma": list(self.aux.gamma),
            "phi": list(self.aux.phi),
            "lam": [lam for lam, _ in factors],
            "xi": [xi for _, xi in factors],
            "F": list(self.F),
        }

    def run_beamformer(self):
        fabric, config, report = self.fabric, self.config, self.report
        p_parts = fabric.collect("p_tilde", GATHER, DistributedUnit.p_tilde)
        eta = self._cu(lambda: eta_from_p_tilde(reduce_blocks(p_parts)))
        nu = extrapolation_weight(self.iteration)
        fabric.broadcast("eta", {"eta": eta, "nu": nu})
        if eta <= 0:
            log.debug("iteration %d: zero non-homogeneous bound, W kept", self.iteration)
            return
        restart_allowed = config.momentum_restart and nu > 0
        f_old = self._cu(self._f_quad_at, self.reduced.g_tilde) if restart_allowed else None
        while True:
            y_parts = fabric.collect("upsilon", GATHER, DistributedUnit.upsilon)
            fabric.broadcast("upsilon", {"reduced": self._cu(reduce_blocks, y_parts)})
            powers = fabric.collect("q_power", SCALAR_REDUCE, DistributedUnit.q_power)
            p_q = 0.0
            for part in powers:
                p_q += part
            factor = budget_factor(p_q, self._beams.P_max)
            fabric.broadcast("scale", {"factor": factor})
            g_parts = fabric.collect("g_tilde", GATHER, DistributedUnit.candidate_products)
            candidate = self._cu(reduce_blocks, g_parts)
            restart = restart_allowed and should_restart(self._cu(self._f_quad_at, candidate), f_old)
            fabric.broadcast("commit", {"restart": restart})
            if not restart:
                break
            log.debug("iteration %d: momentum restart", self.iteration)
            report.restarts += 1
            restart_allowed = False
        self.version += 1
        self.reduced = ReducedBlocks(candidate, self.version)
        report.powers.append(factor * factor * p_q)

    def _t_coefficients(self, w_parts, row_parts) -> dict:
        s_hat = sigma_hat_tx(self.geometries, self.F, self.aux)
        return {
            "g_tilde": self.reduced.g_tilde,
            "w_tilde": reduce_blocks(w_parts),
            "row_sums": reduce_blocks(row_parts),
            "sigma_hat": s_hat,
            "sigma_norms": np.array([spectral_norm(s) for s in s_hat]),
        }

    def run_tx_positions(self):
        fabric = self.fabric
        limit, tol = self.config.mm_budget()
        w_parts = fabric.collect("w_tilde", GATHER, DistributedUnit.w_tilde)
        row_parts = fabric.collect("row_norms", SCALAR_REDUCE, DistributedUnit.row_norms)
        fabric.broadcast("t_coeffs", self._cu(self._t_coefficients, w_parts, row_parts))
        deltas = fabric.collect("delta_tx", SCALAR_REDUCE, DistributedUnit.delta_tx)
        delta = max(deltas)
        fabric.broadcast("delta", {"delta": delta})
        if delta <= 0:
            self.report.mm_iterations_tx.append(0)
            return
        f_prev = self._cu(self._f_quad_at, self.reduced.g_tilde) if tol is not None else None
        taken = 0
        while taken < limit:
            if taken:
                fabric.broadcast("g_tilde_step", {"g_tilde": self.reduced.g_tilde})
            parts = fabric.collect("g_tilde_moved", GATHER, DistributedUnit.move)
            self._cu(self._install, parts)
            taken += 1
            if tol is not None:
                f_new = self._cu(self._f_quad_at, self.reduced.g_tilde)
                if relative_gain(f_new, f_prev) < tol:
                    break
                f_prev = f_new
        log.debug("tx mm: delta=%r, %d steps", delta, taken)
        self.report.mm_iterations_tx.append(taken)

    def _f_quad_with_frm(self, F_k, k: int) -> float:
        F = list(self.F)
        F[k] = F_k
        return self._f_quad_at(self.reduced.g_tilde, F)

    def run_rx_positions(self):
        limit, tol = self.config.mm_budget()
        taken = 0
        for k in range(self.scenario.dims.K):
            R_k, F_k, _, count = dec_update_rx(
                self.reduced.g_tilde,
                self.aux,
                self.geometries,
                self.scenario.layout,
                self.R[k],
                self.F[k],
                self._beams.weights[k],
                k,
                limit,
                tol,
                functools.partial(self._f_quad_with_frm, k=k) if tol is not None else None,
            )
            self.R[k] = R_k
            self.F[k] = F_k
            taken += count
        self.report.mm_iterations_rx.append(taken)

    def step(self) -> float:
        self.iteration += 1
        config = self.config
        with self._block(AUX):
            self._cu(self._update_aux)
            self.fabric.broadcast("aux", self._cu(self._aux_payload))
        with self._block(BEAM):
            self.run_beamformer()
        with self._block(TX_POS):
            if config.optimize_tx:
                self.run_tx_positions()
        with self._block(RX_POS):
            if config.optimize_rx:
                self._cu(self.run_rx_positions)
        value = self._cu(self._objective)
        self.report.wsr_trace.append(value.wsr)
        self.report.f_quad_trace.append(value.f_quad)
        if config.check_invariants:
            self._cu(self.check_invariants, value.wsr)
        return value.wsr

    def check_invariants(self, value: float):
        layout = self.scenario.layout
        R = np.asarray(self.R)
        if np.any(R < layout.boxes_rx[..., 0, :] - 1e-12) or np.any(
            R > layout.boxes_rx[..., 1, :] + 1e-12
        ):
            raise NumericalFailure("a receive antenna left its movable region")
        if value > self.report.r_max:
            raise NumericalFailure(f"wsr={value!r} exceeds the rate ceiling {self.report.r_max!r}")

    def final_state(self) -> PositionState:
        """Collect the DU shards into one state; not part of the message protocol."""
        T = self.plan.assemble([unit.T for unit in self.units])
        W = [
            self.plan.assemble([unit.W[k] for unit in self.units])
            for k in range(self.scenario.dims.K)
        ]
        layout = attr.evolve(self.scenario.layout, T=T, R=self.R)
        return PositionState(
            geometries=self.geometries,
            layout=layout,
            channels=assemble_channels(self.geometries, layout),
            beams=self._beams.with_w(W),
            aux=self.aux,
        )

    def solve(self) -> SolverReport:
        config = self.config
        if config.beamformer != INVERSE_FREE:
            log.debug("decentralized mode always uses the inverse-free beamformer")
        if self.fabric is None:
            self.initialize()
        log.info(
            "dec solve: M=%d K=%d C=%d tx=%s rx=%s",
            self.plan.M,
            self.scenario.dims.K,
            self.plan.C,
            config.optimize_tx,
            config.optimize_rx,
        )
        self.report.stop_reason = MAX_ITERATIONS
        try:
            while self.iteration < config.max_outer:
                previous = self.report.wsr_trace[-1]
                try:
                    value = self.step()
                except FawError as exc:
                    raise exc.__class__(f"outer iteration {self.iteration}: {exc}") from exc
                log.debug("iteration %d: wsr=%r bits", self.iteration, to_bits(value))
                if relative_change(value, previous) < config.tol_outer:
                    self.report.stop_reason = CONVERGED
                    break
        finally:
            self.fabric.close()
        if not self.report.converged:
            log.warning("dec solve stopped after %d iterations without converging", self.iteration)
        self.report.node_times = {CU: self.busy}
        self.report.node_times.update({unit.name: unit.busy for unit in self.units})
        self.report.state = self.final_state()
        log.info(
            "dec solve: %s after %d iterations, wsr=%.6g bps/Hz, %d messages",
            self.report.stop_reason,
            self.iteration,
            self.report.final_wsr_bits,
            len(self.fabric.log),
        )
        return self.report


def dec_solve(scenario: Scenario, config: SolverConfig = None) -> SolverReport:
    return CentralUnit(scenario, config).solve()
