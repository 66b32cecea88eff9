import math

import attr
import numpy as np
import pytest

from fluid_antenna_wsr.channel import SystemDims
from fluid_antenna_wsr.errors import InvalidArgument, NumericalFailure
from fluid_antenna_wsr.fp_core import update_auxiliaries
from fluid_antenna_wsr.objective import (
    BeamformerSet,
    cross_products,
    f_lag,
    f_quad,
    interference_matrix,
    logdet_pd,
    r_max_bound,
    to_bits,
    user_rates,
    wsr,
)
from fluid_antenna_wsr.suites import VERIFY_DIMS, random_state


def _reference_rates(channels, beams):
    rates = []
    for k, H_k in enumerate(channels.H):
        N = H_k.shape[0]
        total = beams.noise[k] * np.eye(N, dtype=complex)
        for W_j in beams.W:
            total = total + H_k @ W_j @ W_j.conj().T @ H_k.conj().T
        own = H_k @ beams.W[k] @ beams.W[k].conj().T @ H_k.conj().T
        rates.append(np.linalg.slogdet(total)[1] - np.linalg.slogdet(total - own)[1])
    return np.array(rates)


@pytest.mark.parametrize("index", range(3))
def test_wsr_matches_log_det_definition(index):
    state = random_state(0, index)
    rates = user_rates(state.channels, state.beams)
    np.testing.assert_allclose(rates, _reference_rates(state.channels, state.beams), rtol=1e-10)
    assert wsr(state.channels, state.beams) == pytest.approx(
        float(np.dot(state.beams.weights, rates)), rel=1e-12
    )
    assert np.all(rates >= 0)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_wsr_rejects_non_finite_channels(bad):
    state = random_state(0, 1)
    H = [h.copy() for h in state.channels.H]
    H[1][0, 0] = bad
    channels = attr.evolve(state.channels, H=H)
    with pytest.raises(InvalidArgument, match="user 1"):
        wsr(channels, state.beams)


def test_cross_products_shape():
    state = random_state(0, 0)
    HW = cross_products(state.channels, state.beams)
    K, N, d = VERIFY_DIMS.K, VERIFY_DIMS.N, VERIFY_DIMS.d
    assert HW.shape == (K, K, N, d)
    np.testing.assert_allclose(HW[1, 0], state.channels.H[1] @ state.beams.W[0])


def test_interference_matrix_excludes_own_signal():
    state = random_state(0, 1)
    channels, beams = state.channels, state.beams
    H_0, W_1 = channels.H[0], beams.W[1]
    expected = beams.noise[0] * np.eye(2) + H_0 @ W_1 @ W_1.conj().T @ H_0.conj().T
    np.testing.assert_allclose(interference_matrix(channels, beams, 0), expected, atol=1e-12)
    with pytest.raises(InvalidArgument):
        interference_matrix(channels, beams, 2)


def test_reformulations_are_lower_bounds():
    state = random_state(1, 0)
    channels, beams = state.channels, state.beams
    aux = update_auxiliaries(channels, beams)
    rate = wsr(channels, beams)
    assert f_lag(channels, beams, aux.gamma) == pytest.approx(rate, rel=1e-9)
    assert f_quad(channels, beams, aux.gamma, aux.phi) == pytest.approx(rate, rel=1e-9)

    shifted_gamma = [g + 0.3 * np.eye(g.shape[0]) for g in aux.gamma]
    assert f_lag(channels, beams, shifted_gamma) <= rate + 1e-9
    scaled_phi = [1.7 * p for p in aux.phi]
    assert f_quad(channels, beams, aux.gamma, scaled_phi) <= rate + 1e-9


def test_r_max_bound_exceeds_wsr():
    for index in range(5):
        state = random_state(2, index)
        bound = r_max_bound(VERIFY_DIMS, state.geometries, state.beams)
        assert math.isfinite(bound)
        assert wsr(state.channels, state.beams) <= bound


def test_beamformer_set_validation():
    w = np.ones((4, 1), dtype=complex)
    with pytest.raises(InvalidArgument):
        BeamformerSet(W=[w, w], P_max=1.0, weights=[1.0, 1.0], noise=[1.0, 1.0])
    with pytest.raises(InvalidArgument):
        BeamformerSet(W=[w], P_max=10.0, weights=[0.0], noise=[1.0])
    with pytest.raises(InvalidArgument):
        BeamformerSet(W=[w], P_max=10.0, weights=[1.0, 1.0], noise=[1.0])
    with pytest.raises(InvalidArgument):
        BeamformerSet(W=[w], P_max=0.0, weights=[1.0], noise=[1.0])
    beams = BeamformerSet(W=[w], P_max=4.0, weights=[1.0], noise=[1.0])
    assert (beams.K, beams.M, beams.d) == (1, 4, 1)
    assert beams.power == pytest.approx(4.0)


def test_initial_beams_use_full_budget():
    dims = SystemDims(M=4, N=2, K=2, d=2)
    beams = BeamformerSet.initial(dims, 2.0, [1.0, 1.0], [1.0, 1.0])
    assert beams.power == pytest.approx(2.0)
    assert beams.W[0].shape == (4, 2)


def test_logdet_and_units():
    assert logdet_pd(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0))
    with pytest.raises(NumericalFailure):
        logdet_pd(np.diag([1.0, -1.0]))
    assert to_bits(math.log(2.0)) == pytest.approx(1.0)
