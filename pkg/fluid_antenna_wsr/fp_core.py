"""Closed-form block updates for the auxiliaries and the beamformers."""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
import scipy.linalg

from fluid_antenna_wsr.channel import ChannelSet
from fluid_antenna_wsr.errors import NumericalFailure, PreconditionViolation
from fluid_antenna_wsr.objective import (
    AuxiliaryState,
    BeamformerSet,
    cross_products,
    hermitian,
    identity_plus,
    interference_from_products,
    solve_pd,
    total_receive_from_products,
)

log = logging.getLogger("faw")

RANK_TOL = 1e-12


def phi_from_products(HW: np.ndarray, noise: float, weight: float, k: int) -> np.ndarray:
    j_k = total_receive_from_products(HW, noise, k)
    return math.sqrt(weight) * solve_pd(j_k, HW[k, k])


def gamma_from_products(HW: np.ndarray, noise: float, k: int) -> np.ndarray:
    s_k = HW[k, k]
    m_k = interference_from_products(HW, noise, k)
    return hermitian(s_k.conj().T @ solve_pd(m_k, s_k))


def auxiliaries_from_products(
    HW: np.ndarray, noise, weights, previous: Optional[AuxiliaryState] = None
) -> AuxiliaryState:
    K = HW.shape[0]
    phi = [phi_from_products(HW, noise[k], weights[k], k) for k in range(K)]
    gamma = [gamma_from_products(HW, noise[k], k) for k in range(K)]
    if previous is None:
        return AuxiliaryState(gamma=gamma, phi=phi)
    return previous.evolve(gamma=tuple(gamma), phi=tuple(phi), eta=None)


def update_phi(channels: ChannelSet, beams: BeamformerSet, k: int) -> np.ndarray:
    return phi_from_products(
        cross_products(channels, beams), beams.noise[k], beams.weights[k], k
    )


def update_gamma(channels: ChannelSet, beams: BeamformerSet, k: int) -> np.ndarray:
    return gamma_from_products(cross_products(channels, beams), beams.noise[k], k)


def update_auxiliaries(
    channels: ChannelSet, beams: BeamformerSet, previous: Optional[AuxiliaryState] = None
) -> AuxiliaryState:
    """Phi then Gamma for every user from one snapshot of the beamformers."""
    return auxiliaries_from_products(
        cross_products(channels, beams), beams.noise, beams.weights, previous
    )


def quadratic_coefficient(channels: ChannelSet, aux: AuxiliaryState) -> np.ndarray:
    """sum_j H_j^H Phi_j (I + Gamma_j) Phi_j^H H_j, the M x M beamformer curvature."""
    M = channels.H[0].shape[1]
    total = np.zeros((M, M), dtype=complex)
    for H_j, phi_j, gamma_j in zip(channels.H, aux.phi, aux.gamma):
        v = H_j.conj().T @ phi_j
        total += v @ identity_plus(gamma_j) @ v.conj().T
    return hermitian(total)


def linear_terms(channels: ChannelSet, aux: AuxiliaryState, weights) -> List[np.ndarray]:
    return [
        math.sqrt(weights[k]) * channels.H[k].conj().T @ aux.phi[k] @ identity_plus(aux.gamma[k])
        for k in range(len(channels.H))
    ]


@attr.s(slots=True, frozen=True, eq=False)
class BisectionOutcome:
    beams: BeamformerSet = attr.ib()
    mu: float = attr.ib()
    iterations: int = attr.ib()


def update_w_bisection(
    channels: ChannelSet,
    aux: AuxiliaryState,
    beams: BeamformerSet,
    tol: float = 1e-6,
    max_iter: int = 100,
    max_doublings: int = 200,
) -> BisectionOutcome:
    """Beamformers maximizing f_quad under the power budget.

    W_k(mu) = (L + mu I)^{-1} B_k with the multiplier mu found by bisection on
    the transmit power, which is strictly decreasing in mu. One Hermitian
    eigendecomposition of L makes each power evaluation a diagonal scaling.
    """
    P_max = beams.P_max
    lam, U = scipy.linalg.eigh(quadratic_coefficient(channels, aux))
    lam = np.clip(lam, 0.0, None)
    rotated = np.stack([U.conj().T @ b for b in linear_terms(channels, aux, beams.weights)])
    energy = np.sum(np.abs(rotated) ** 2, axis=(0, 2))

    def power(mu):
        return float(np.sum(energy / (lam + mu) ** 2))

    def beamformers(scale):
        return [U @ (scale[:, None] * c) for c in rotated]

    lam_max = float(lam.max())
    if lam_max == 0.0:
        log.debug("bisection: zero curvature, beamformers vanish")
        zero = [np.zeros_like(w) for w in beams.W]
        return BisectionOutcome(beams.with_w(zero), 0.0, 0)

    in_range = lam > RANK_TOL * lam_max
    pinv_scale = np.where(in_range, 1.0 / np.where(in_range, lam, 1.0), 0.0)
    if float(np.sum(energy * pinv_scale ** 2)) <= P_max:
        return BisectionOutcome(beams.with_w(beamformers(pinv_scale)), 0.0, 0)

    hi, doublings = 1.0, 0
    while power(hi) > P_max:
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise NumericalFailure(
                f"bisection failed to bracket the multiplier within {max_doublings} doublings"
            )
    lo, iterations = 0.0, 0
    while iterations < max_iter and (P_max - power(hi)) / P_max >= tol:
        mid = 0.5 * (lo + hi)
        if power(mid) > P_max:
            lo = mid
        else:
            hi = mid
        iterations += 1
    log.debug("bisection: mu=%r after %d steps (%d doublings)", hi, iterations, doublings)
    return BisectionOutcome(beams.with_w(beamformers(1.0 / (lam + hi))), hi, iterations)


def nonhomogeneous_eta(channels: ChannelSet, aux: AuxiliaryState) -> float:
    return float(np.linalg.norm(quadratic_coefficient(channels, aux), "fro"))


def evd_factors(gamma_k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors of I + Gamma_k."""
    lam, xi = scipy.linalg.eigh(identity_plus(gamma_k))
    if lam.min() <= 0:
        raise NumericalFailure("I + Gamma is not positive definite")
    return lam, xi


def eta_from_factors(factors: Sequence[np.ndarray]) -> float:
    """Frobenius norm of sum_k P_k P_k^H computed from the d-column factors only."""
    total = 0.0
    for p_k in factors:
        for p_j in factors:
            total += float(np.sum(np.abs(p_k.conj().T @ p_j) ** 2))
    return math.sqrt(total)


def eta_via_evd(channels: ChannelSet, aux: AuxiliaryState) -> float:
    factors = []
    for H_k, phi_k, gamma_k in zip(channels.H, aux.phi, aux.gamma):
        lam, xi = evd_factors(gamma_k)
        factors.append(H_k.conj().T @ phi_k @ xi * np.sqrt(lam))
    return eta_from_factors(factors)


def extrapolation_weight(iteration: int) -> float:
    return max((iteration - 2) / (iteration + 1), 0.0)


def extrapolate(W_last, W_before, nu: float) -> List[np.ndarray]:
    return [w + nu * (w - w_old) for w, w_old in zip(W_last, W_before)]


def budget_factor(p_q: float, P_max: float) -> float:
    return min(math.sqrt(P_max / p_q), 1.0) if p_q > 0 else 1.0


def scale_to_budget(Q: Sequence[np.ndarray], P_max: float) -> Tuple[List[np.ndarray], float]:
    factor = budget_factor(float(sum(np.vdot(q, q).real for q in Q)), P_max)
    return [factor * q for q in Q], factor


def update_w_inverse_free(
    channels: ChannelSet,
    aux: AuxiliaryState,
    beams: BeamformerSet,
    iteration: int,
    nu: Optional[float] = None,
) -> BeamformerSet:
    """Non-homogeneous bound with Nesterov extrapolation; no M x M solve.

    The memory in ``aux`` falls back to the current beamformers when empty.
    ``nu`` overrides the extrapolation weight (a restart passes 0).
    """
    eta = aux.eta if aux.eta is not None else nonhomogeneous_eta(channels, aux)
    if eta <= 0:
        raise PreconditionViolation("non-homogeneous bound is zero; skip the update")
    W_last = aux.W_prev if aux.W_prev is not None else beams.W
    W_before = aux.W_prev2 if aux.W_prev2 is not None else W_last
    if nu is None:
        nu = extrapolation_weight(iteration)
    upsilon = extrapolate(W_last, W_before, nu)
    curvature = quadratic_coefficient(channels, aux)
    Q = [
        u + (b - curvature @ u) / eta
        for u, b in zip(upsilon, linear_terms(channels, aux, beams.weights))
    ]
    W, _ = scale_to_budget(Q, beams.P_max)
    return beams.with_w(W)


def remember(aux: AuxiliaryState, W) -> AuxiliaryState:
    """Shift the extrapolation memory after a beamformer step."""
    previous = aux.W_prev if aux.W_prev is not None else tuple(W)
    return aux.evolve(W_prev=tuple(W), W_prev2=previous)
