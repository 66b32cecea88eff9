import numpy as np
import pytest

from fluid_antenna_wsr.channel import RX
from fluid_antenna_wsr.dbp import (
    ITERATION_ROUNDS,
    CentralUnit,
    ClusterPlan,
    DistributedUnit,
    Fabric,
    ReducedBlocks,
    dec_grad_delta_tx,
    dec_objective,
    dec_solve,
    dec_update_rx,
    dec_update_w,
    local_products,
    mul_reduce,
    reduce_blocks,
)
from fluid_antenna_wsr.errors import InvalidArgument, PreconditionViolation, ProtocolViolation
from fluid_antenna_wsr.harness import TRFA, baseline_layout, sample_scenario
from fluid_antenna_wsr.messages import BROADCAST, GATHER, Message
from fluid_antenna_wsr.mm_position import EXACT, SEPARABLE, delta_tx, grad_tx, mm_loop
from fluid_antenna_wsr.objective import wsr
from fluid_antenna_wsr.run_config import INVERSE_FREE, ScenarioSpec, SolverConfig
from fluid_antenna_wsr.solver import solve
from fluid_antenna_wsr.suites import VERIFY_DIMS, random_state, relative_error, shard_state

SMALL = ScenarioSpec(M=4, N=2, K=2, d=1, C=2, paths=2, realizations=1, seed=5)


def _scenario(spec=SMALL, index=0):
    scenario = sample_scenario(spec, index)
    return scenario.evolve(layout=baseline_layout(TRFA, scenario, index))


def _matched_config(**changes):
    """centralized settings that a decentralized run reproduces exactly"""
    config = SolverConfig(
        beamformer=INVERSE_FREE, delta_tx_rule=SEPARABLE, max_inner=1, dec_mm_steps=1
    )
    return config.evolve(**changes)


def test_cluster_plan():
    plan = ClusterPlan(C=2, M_c=3)
    assert plan.M == 6
    assert plan.rows(1) == slice(3, 6)
    np.testing.assert_array_equal(plan.assignment(), [0, 0, 0, 1, 1, 1])
    matrix = np.arange(12).reshape(6, 2)
    np.testing.assert_array_equal(plan.assemble(plan.shard(matrix)), matrix)
    with pytest.raises(InvalidArgument):
        plan.rows(2)
    with pytest.raises(InvalidArgument):
        plan.shard(np.zeros((5, 2)))
    with pytest.raises(InvalidArgument):
        ClusterPlan(C=0, M_c=2)


def test_mul_reduce_matches_full_product():
    rng = np.random.default_rng(0)
    for C in (1, 2, 4):
        plan = ClusterPlan(C=C, M_c=8 // C)
        A = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
        B = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
        product = mul_reduce(plan.shard(A), plan.shard(B))
        assert product.shape == (3, 2)
        assert relative_error(product, A.conj().T @ B) <= 1e-12


def test_mul_reduce_rejects_mismatched_shards():
    a = np.ones((2, 2))
    with pytest.raises(InvalidArgument):
        mul_reduce([a], [a, a])
    with pytest.raises(InvalidArgument):
        mul_reduce([a], [np.ones((3, 2))])
    with pytest.raises(InvalidArgument):
        mul_reduce([a, a], [a, np.ones((2, 3))])
    with pytest.raises(InvalidArgument):
        reduce_blocks([])
    with pytest.raises(InvalidArgument):
        reduce_blocks([[a], [a, a]])


def test_objective_rejects_stale_reduction():
    state = random_state(20, 0)
    G, W, _ = shard_state(state, ClusterPlan.for_dims(VERIFY_DIMS))
    g_tilde = reduce_blocks([local_products(G_c, W_c) for G_c, W_c in zip(G, W)])
    reduced = ReducedBlocks(g_tilde, 3)
    beams = state.beams
    value = dec_objective(reduced, state.geometries, state.channels.F, beams.noise, beams.weights)
    assert value.wsr == pytest.approx(wsr(state.channels, beams), rel=1e-10)
    assert value.f_quad is None
    with pytest.raises(ProtocolViolation):
        dec_objective(
            reduced,
            state.geometries,
            state.channels.F,
            beams.noise,
            beams.weights,
            expected_version=4,
        )


def test_dec_update_w_rejects_zero_bound():
    state = random_state(20, 1)
    _, W, H = shard_state(state, ClusterPlan.for_dims(VERIFY_DIMS))
    with pytest.raises(PreconditionViolation):
        dec_update_w(W, W, H, state.aux, state.beams.weights, state.beams.P_max, 1, eta=0.0)


def test_dec_transmit_step_matches_centralized():
    for index in range(3):
        state = random_state(21, index)
        plan = ClusterPlan.for_dims(VERIFY_DIMS)
        G, W, _ = shard_state(state, plan)
        grads, delta = dec_grad_delta_tx(
            W, G, state.aux, state.geometries, state.channels.F, state.beams.weights
        )
        args = (state.channels, state.beams, state.aux, state.geometries)
        central = grad_tx(*args).reshape(-1, 3)
        assert relative_error(plan.assemble(grads), central) <= 1e-10
        assert delta == pytest.approx(delta_tx(*args, SEPARABLE), rel=1e-10)
        assert delta >= delta_tx(*args, EXACT) * (1 - 1e-12)


def test_dec_receive_step_matches_centralized():
    state = random_state(22, 0)
    G, W, _ = shard_state(state, ClusterPlan.for_dims(VERIFY_DIMS))
    g_tilde = reduce_blocks([local_products(G_c, W_c) for G_c, W_c in zip(G, W)])
    moved = mm_loop(RX, state, max_iter=1, users=[1]).state
    R_1, F_1, delta, taken = dec_update_rx(
        g_tilde,
        state.aux,
        state.geometries,
        state.layout,
        state.layout.R[1],
        state.channels.F[1],
        state.beams.weights[1],
        1,
    )
    assert taken == 1 and delta > 0
    np.testing.assert_allclose(R_1, moved.layout.R[1], rtol=0, atol=1e-12)
    np.testing.assert_allclose(F_1, moved.channels.F[1], atol=1e-10)


def test_dec_receive_loop_stops_on_tolerance():
    state = random_state(22, 1)
    G, W, _ = shard_state(state, ClusterPlan.for_dims(VERIFY_DIMS))
    g_tilde = reduce_blocks([local_products(G_c, W_c) for G_c, W_c in zip(G, W)])
    args = (
        g_tilde,
        state.aux,
        state.geometries,
        state.layout,
        state.layout.R[0],
        state.channels.F[0],
        state.beams.weights[0],
        0,
    )
    *_, taken = dec_update_rx(*args, 4)
    assert taken == 4
    # a flat objective ends the loop after its first step
    *_, taken = dec_update_rx(*args, 4, 1e-5, lambda F_k: 1.0)
    assert taken == 1
    values = iter([1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    *_, taken = dec_update_rx(*args, 3, 1e-5, lambda F_k: next(values))
    assert taken == 3
    with pytest.raises(InvalidArgument, match="objective"):
        dec_update_rx(*args, 4, 1e-5)


def test_distributed_unit_inbox():
    state = random_state(23, 0)
    unit = DistributedUnit(
        0, state.layout.T[:2], state.layout.boxes_tx[:2], [w[:2] for w in state.beams.W],
        state.geometries, state.beams.weights, 4, depth=1,
    )
    unit.deliver(Message(1, "eta", BROADCAST, "CU", unit.name, {"eta": 1.0, "nu": 0.0}))
    with pytest.raises(ProtocolViolation, match="inbox full"):
        unit.deliver(Message(2, "eta", BROADCAST, "CU", unit.name, {"eta": 1.0, "nu": 0.0}))
    unit.drain()
    unit.deliver(Message(1, "eta", BROADCAST, "CU", unit.name, {"eta": 1.0, "nu": 0.0}))
    with pytest.raises(ProtocolViolation, match="after round 1"):
        unit.drain()
    unit.deliver(Message(5, "bogus", BROADCAST, "CU", unit.name, None))
    with pytest.raises(ProtocolViolation, match="unexpected message"):
        unit.drain()


def test_fabric_rejects_m_sized_payloads():
    state = random_state(23, 1)
    unit = DistributedUnit(
        0, state.layout.T, state.layout.boxes_tx, state.beams.W,
        state.geometries, state.beams.weights, 4,
    )
    with Fabric([unit], 4, {2, 3}) as fabric:
        with pytest.raises(ProtocolViolation, match="M-sized payload"):
            fabric.collect("w_rows", GATHER, lambda u: u.W[0])
        assert fabric.round == 1


def test_fabric_rejects_cluster_sized_payloads():
    state = random_state(23, 1)
    unit = DistributedUnit(
        0, state.layout.T[:2], state.layout.boxes_tx[:2], [w[:2] for w in state.beams.W],
        state.geometries, state.beams.weights, 4,
    )
    with Fabric([unit], 4, {3}, M_c=2) as fabric:
        with pytest.raises(ProtocolViolation, match="M_c-sized payload"):
            fabric.collect("w_rows", GATHER, lambda u: u.W[0])
        with pytest.raises(ProtocolViolation, match="M_c-sized payload"):
            fabric.broadcast("positions", {"T": np.zeros((2, 3))})


@pytest.mark.parametrize("optimize", [(True, True), (True, False), (False, True)])
def test_single_cluster_matches_centralized(optimize):
    tx, rx = optimize
    scenario = _scenario(spec=SMALL.evolve(C=1))
    config = _matched_config(max_outer=8, tol_outer=1e-300, optimize_tx=tx, optimize_rx=rx)
    central = solve(scenario, config)
    decentral = dec_solve(scenario, config)
    np.testing.assert_allclose(decentral.wsr_trace, central.wsr_trace, rtol=1e-10)
    assert decentral.restarts == central.restarts


def test_single_cluster_inner_loop_matches_centralized():
    scenario = _scenario(spec=SMALL.evolve(C=1))
    config = _matched_config(
        max_outer=4, tol_outer=1e-300, max_inner=3, tol_inner=1e-300, dec_mm_steps=0
    )
    central = solve(scenario, config)
    decentral = dec_solve(scenario, config)
    np.testing.assert_allclose(decentral.wsr_trace, central.wsr_trace, rtol=1e-10)
    assert decentral.mm_iterations_tx == central.mm_iterations_tx
    assert decentral.mm_iterations_rx == central.mm_iterations_rx
    assert max(decentral.mm_iterations_tx) > 1


def test_decentralized_solve_report():
    scenario = _scenario()
    report = dec_solve(scenario, _matched_config(max_outer=4, tol_outer=1e-300))
    trace = np.asarray(report.wsr_trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))
    assert set(report.node_times) == {"CU", "DU0", "DU1"}
    assert report.state.layout.contains()
    assert report.state.beams.power <= report.state.beams.P_max * (1 + 1e-9)
    assert wsr(report.state.channels, report.state.beams) == pytest.approx(
        report.final_wsr, rel=1e-9
    )

    log = report.message_log
    summary = log.summary()
    assert summary["sequence_errors"] == []
    assert summary["links"] == 4
    labels = [m.label for m in log.messages if m.src in ("CU", "DU0") and m.dst in ("CU", "DU0")]
    # initial gather, then every iteration's rounds (restarts add rounds)
    assert labels[0] == "g_tilde"
    expected = [label for _, label in ITERATION_ROUNDS]
    assert labels[1 : 1 + len(expected)] == expected
    assert report.to_dict()["messages"] == len(log)


def test_central_unit_repr_and_defaults():
    cu = CentralUnit(_scenario())
    assert cu.config.beamformer == INVERSE_FREE
    assert "C=2" in repr(cu)
