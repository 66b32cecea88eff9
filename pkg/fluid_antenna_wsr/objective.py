"""Weighted sum rate and its fractional-programming reformulations.

Every evaluation is expressed over the cross products ``HW[k, j] = H_k W_j``
(a K x K x N x d array), so the centralized solver and the decentralized CU,
which only ever holds reduced products, share one implementation.
"""
import logging
import math
from typing import Optional, Sequence

import attr
import numpy as np
import scipy.linalg

from fluid_antenna_wsr.channel import ChannelSet, PathGeometry, SystemDims
from fluid_antenna_wsr.errors import InvalidArgument, NumericalFailure

log = logging.getLogger("faw")

LN2 = math.log(2.0)
POWER_SLACK = 1e-9


def _vector(value) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _matrices(value) -> tuple:
    return tuple(np.asarray(w, dtype=complex) for w in value)


@attr.s(slots=True, frozen=True, eq=False)
class BeamformerSet:
    W = attr.ib(converter=_matrices)
    P_max = attr.ib(converter=float)
    weights = attr.ib(converter=_vector)
    noise = attr.ib(converter=_vector)

    def __attrs_post_init__(self):
        if not self.P_max > 0:
            raise InvalidArgument(f"P_max must be positive: {self.P_max!r}")
        if len(self.weights) != self.K or len(self.noise) != self.K:
            raise InvalidArgument(
                f"{self.K} beamformers with {len(self.weights)} weights "
                f"and {len(self.noise)} noise powers"
            )
        if np.any(self.weights <= 0) or np.any(self.noise <= 0):
            raise InvalidArgument("weights and noise powers must be positive")
        power = self.power
        if not math.isfinite(power):
            raise InvalidArgument("non-finite beamformer entries")
        if power > self.P_max * (1 + POWER_SLACK):
            raise InvalidArgument(
                f"transmit power {power!r} W exceeds budget {self.P_max!r} W"
            )

    @property
    def K(self) -> int:
        return len(self.W)

    @property
    def M(self) -> int:
        return self.W[0].shape[0]

    @property
    def d(self) -> int:
        return self.W[0].shape[1]

    @property
    def power(self) -> float:
        return float(sum(np.vdot(w, w).real for w in self.W))

    def with_w(self, W) -> "BeamformerSet":
        return attr.evolve(self, W=W)

    @classmethod
    def initial(cls, dims: SystemDims, P_max: float, weights, noise) -> "BeamformerSet":
        """Every user gets sqrt(P/(K d)) times the first d columns of the identity."""
        scale = math.sqrt(P_max / (dims.K * dims.d))
        w = scale * np.eye(dims.M, dims.d, dtype=complex)
        return cls(W=[w.copy() for _ in range(dims.K)], P_max=P_max, weights=weights, noise=noise)


@attr.s(slots=True, frozen=True, eq=False)
class AuxiliaryState:
    """FP auxiliaries plus the extrapolation memory of the inverse-free update.

    ``W_prev`` is the latest beamformer iterate and doubles as the
    non-homogeneous auxiliary; ``W_prev2`` is the one before it.
    """

    gamma = attr.ib(converter=_matrices)
    phi = attr.ib(converter=_matrices)
    W_prev = attr.ib(default=None)
    W_prev2 = attr.ib(default=None)
    eta: Optional[float] = attr.ib(default=None)

    @property
    def psi(self):
        return self.W_prev

    def evolve(self, **changes) -> "AuxiliaryState":
        return attr.evolve(self, **changes)

    def check_positive_definite(self):
        for k, g in enumerate(self.gamma):
            eig = scipy.linalg.eigvalsh(identity_plus(g))
            if eig.min() <= 0:
                raise NumericalFailure(f"I + Gamma_{k} is not positive definite")


def hermitian(a: np.ndarray) -> np.ndarray:
    return (a + a.conj().T) / 2


def identity_plus(gamma_k: np.ndarray) -> np.ndarray:
    return np.eye(gamma_k.shape[0]) + hermitian(gamma_k)


def logdet_pd(a: np.ndarray) -> float:
    try:
        chol = scipy.linalg.cholesky(hermitian(a), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"matrix is not positive definite: {exc}") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol).real)))


def solve_pd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.solve(hermitian(a), b, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular positive-definite system: {exc}") from exc


def to_bits(nats: float) -> float:
    return nats / LN2


def cross_products(channels: ChannelSet, beams: BeamformerSet) -> np.ndarray:
    H = np.stack(channels.H)
    W = np.stack(beams.W)
    return np.einsum("knm,jmd->kjnd", H, W)


def interference_from_products(HW: np.ndarray, noise: float, k: int) -> np.ndarray:
    N = HW.shape[2]
    others = np.delete(HW[k], k, axis=0)
    m_k = noise * np.eye(N, dtype=complex)
    if others.size:
        m_k = m_k + np.einsum("jnd,jmd->nm", others, others.conj())
    return hermitian(m_k)


def total_receive_from_products(HW: np.ndarray, noise: float, k: int) -> np.ndarray:
    """Interference-plus-noise matrix including user k's own signal."""
    N = HW.shape[2]
    j_k = noise * np.eye(N, dtype=complex) + np.einsum("jnd,jmd->nm", HW[k], HW[k].conj())
    return hermitian(j_k)


def user_rates_from_products(HW: np.ndarray, noise: Sequence[float]) -> np.ndarray:
    K = HW.shape[0]
    rates = np.empty(K)
    for k in range(K):
        rates[k] = logdet_pd(total_receive_from_products(HW, noise[k], k)) - logdet_pd(
            interference_from_products(HW, noise[k], k)
        )
    return rates


def f_lag_from_products(HW, noise, weights, gamma) -> float:
    total = 0.0
    for k in range(HW.shape[0]):
        s_k = HW[k, k]
        a_k = identity_plus(gamma[k])
        j_k = total_receive_from_products(HW, noise[k], k)
        ratio = s_k.conj().T @ solve_pd(j_k, s_k)
        total += weights[k] * (
            logdet_pd(a_k) - np.trace(gamma[k]).real + np.trace(a_k @ ratio).real
        )
    return float(total)


def f_quad_from_products(HW, noise, weights, gamma, phi) -> float:
    total = 0.0
    for k in range(HW.shape[0]):
        s_k = HW[k, k]
        a_k = identity_plus(gamma[k])
        j_k = total_receive_from_products(HW, noise[k], k)
        cross = math.sqrt(weights[k]) * (phi[k].conj().T @ s_k)
        inner = cross + cross.conj().T - phi[k].conj().T @ j_k @ phi[k]
        total += (
            weights[k] * (logdet_pd(a_k) - np.trace(gamma[k]).real)
            + np.trace(a_k @ inner).real
        )
    return float(total)


def interference_matrix(channels: ChannelSet, beams: BeamformerSet, k: int) -> np.ndarray:
    if not 0 <= k < beams.K:
        raise InvalidArgument(f"user index {k} out of range for K={beams.K}")
    return interference_from_products(cross_products(channels, beams), beams.noise[k], k)


def user_rates(channels: ChannelSet, beams: BeamformerSet) -> np.ndarray:
    """Per-user rates in nats."""
    return user_rates_from_products(cross_products(channels, beams), beams.noise)


def wsr(channels: ChannelSet, beams: BeamformerSet) -> float:
    """Weighted sum rate in nats; use :func:`to_bits` for bps/Hz."""
    for k, H_k in enumerate(channels.H):
        if not np.all(np.isfinite(H_k)):
            raise InvalidArgument(f"non-finite channel entries for user {k}")
    return float(np.dot(beams.weights, user_rates(channels, beams)))


def f_lag(channels: ChannelSet, beams: BeamformerSet, gamma) -> float:
    return f_lag_from_products(
        cross_products(channels, beams), beams.noise, beams.weights, gamma
    )


def f_quad(channels: ChannelSet, beams: BeamformerSet, gamma, phi) -> float:
    return f_quad_from_products(
        cross_products(channels, beams), beams.noise, beams.weights, gamma, phi
    )


def r_max_bound(
    dims: SystemDims, geometries: Sequence[PathGeometry], beams: BeamformerSet
) -> float:
    """Finite ceiling on the weighted sum rate for any positions and beamformers.

    The unit-gain path bound is scaled by the largest squared Frobenius norm of
    the path-response matrices so it stays valid for arbitrary path gains.
    """
    paths = max(geo.L_tx * geo.L_rx for geo in geometries)
    prm_scale = max(float(np.linalg.norm(geo.prm, "fro") ** 2) for geo in geometries)
    gain = dims.M * dims.N ** 1.5 * paths ** 2 * prm_scale
    snr = beams.P_max / np.asarray(beams.noise)
    return float(dims.d * np.dot(beams.weights, np.log1p(gain * snr)))
