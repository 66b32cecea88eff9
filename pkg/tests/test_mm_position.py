import numpy as np
import pytest

from fluid_antenna_wsr.channel import RX, TX
from fluid_antenna_wsr.errors import InvalidArgument, PreconditionViolation
from fluid_antenna_wsr.mm_position import (
    EXACT,
    SEPARABLE,
    SurrogateCoeffs,
    delta_rx,
    delta_tx,
    grad_rx,
    grad_tx,
    linearized_separation_check,
    mm_loop,
    mm_step_tx,
    move_rx,
    move_tx,
    rx_coefficients,
    tx_coefficients,
)
from fluid_antenna_wsr.suites import (
    FD_STEP,
    central_difference,
    random_positions,
    random_state,
    relative_error,
)


@pytest.mark.parametrize("index", range(3))
def test_grad_tx_matches_finite_difference(index):
    state = random_state(10, index)
    h = FD_STEP * state.geometries[0].wavelength
    analytic = grad_tx(state.channels, state.beams, state.aux, state.geometries)
    numeric = central_difference(
        lambda x: move_tx(state, x.reshape(-1, 3)).f_quad(), state.layout.T, h
    )
    assert analytic.shape == (12,)
    assert relative_error(analytic, numeric) <= 1e-5


@pytest.mark.parametrize("index", range(3))
def test_grad_rx_matches_finite_difference(index):
    state = random_state(11, index)
    h = FD_STEP * state.geometries[0].wavelength
    for k in range(2):
        analytic = grad_rx(state.channels, state.beams, state.aux, state.geometries, k)
        numeric = central_difference(
            lambda x: move_rx(state, x.reshape(-1, 3), k).f_quad(), state.layout.R[k], h
        )
        assert relative_error(analytic, numeric) <= 1e-5


def test_surrogate_touches_and_lower_bounds():
    state = random_state(12, 0)
    delta = delta_tx(state.channels, state.beams, state.aux, state.geometries)
    coeffs = tx_coefficients(state, delta)
    assert coeffs.surrogate(state.layout.T) == pytest.approx(state.f_quad(), rel=1e-14)
    rng = np.random.default_rng(0)
    for _ in range(20):
        T = random_positions(state.layout, rng).T
        value = move_tx(state, T).f_quad()
        assert coeffs.surrogate(T) <= value + 1e-9 * (1 + abs(value))

    delta = delta_rx(state.channels, state.beams, state.aux, state.geometries, 1)
    coeffs = rx_coefficients(state, delta, 1)
    for _ in range(20):
        R_1 = random_positions(state.layout, rng).R[1]
        value = move_rx(state, R_1, 1).f_quad()
        assert coeffs.surrogate(R_1) <= value + 1e-9 * (1 + abs(value))


def test_separable_delta_dominates_exact():
    for index in range(5):
        state = random_state(13, index)
        args = (state.channels, state.beams, state.aux, state.geometries)
        assert delta_tx(*args, SEPARABLE) >= delta_tx(*args, EXACT) * (1 - 1e-12)
    with pytest.raises(InvalidArgument):
        delta_tx(*args, "loose")


@pytest.mark.parametrize("side", [TX, RX])
def test_mm_loop_ascends_inside_boxes(side):
    state = random_state(14, 0)
    result = mm_loop(side, state, tol=1e-9, max_iter=20)
    trace = np.array(result.trace)
    assert np.all(np.diff(trace) >= -1e-9 * (1 + np.abs(trace[:-1])))
    assert result.state.layout.contains()
    assert result.iterations >= 1
    assert result.delta > 0
    assert result.state.f_quad() == pytest.approx(trace[-1])


def test_mm_loop_rejects_unknown_side():
    with pytest.raises(InvalidArgument):
        mm_loop("sideways", random_state(14, 1))


def test_zero_curvature_step():
    state = random_state(14, 2)
    anchor = np.array(state.layout.T)
    still = SurrogateCoeffs(grad=np.zeros(anchor.size), delta=0.0, anchor=anchor, value=0.0)
    np.testing.assert_array_equal(mm_step_tx(state.layout, still), anchor)
    pushed = SurrogateCoeffs(grad=np.ones(anchor.size), delta=0.0, anchor=anchor, value=0.0)
    with pytest.raises(PreconditionViolation):
        mm_step_tx(state.layout, pushed)
    with pytest.raises(InvalidArgument):
        SurrogateCoeffs(grad=np.array([np.nan]), delta=1.0, anchor=anchor)


def test_linearized_separation_check():
    anchor = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    ok, violations = linearized_separation_check(anchor, anchor, 1.0)
    assert ok and violations == []

    squeezed = anchor * 0.5
    ok, violations = linearized_separation_check(squeezed, anchor, 1.0)
    assert not ok
    assert (0, 1) in violations

    with pytest.raises(InvalidArgument):
        linearized_separation_check(anchor, np.zeros((3, 3)), 1.0)
