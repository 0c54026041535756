from __future__ import annotations

import dataclasses
import json
import logging
import math

import numpy as np
import pytest

import sim
from controllers import AdaptiveState, ControllerGains
from dynamics import DisturbanceModel
from errors import ConfigError, DivergenceError, NoSpanningTreeError
from graphs import SwitchingSchedule, build_laplacian, left_null_vector
from scenario import PRESET_Q0, PRESET_QDOT0, build_scenario, get_preset
from scenario_schemas import DisturbanceConfig
from sim import (
    InitialState,
    Scenario,
    SimulationTrace,
    Thresholds,
    acceptance_failures,
    consensus_metrics,
    convergence_study,
    csv_columns,
    first_order_consensus,
    predicted_equilibrium,
    run,
)
from status_reporter import RunReporter, RunStage

RING2 = [[0.0, 1.0], [1.0, 0.0]]


def make_scenario(arm, topology, q0, qdot0=None, controller="fixed", amplitude=0.0,
                  t_end=1.0, dt=0.01, exact_theta=True, **kwargs):
    q0 = np.asarray(q0, dtype=float)
    n = q0.shape[0]
    name = kwargs.pop("name", "test")
    gains = kwargs.pop("gains", (ControllerGains(),) * n)
    qdot0 = np.zeros_like(q0) if qdot0 is None else np.asarray(qdot0, dtype=float)
    zeros = AdaptiveState.zeros(n)
    adaptive = AdaptiveState(
        theta_hat=np.tile(arm.theta, (n, 1)) if exact_theta else zeros.theta_hat,
        d_hat=zeros.d_hat, k_hat=zeros.k_hat, d_bar=zeros.d_bar,
        integral_vartheta=zeros.integral_vartheta, z=q0.copy(), zdot=zeros.zdot,
    )
    return Scenario(
        name=name,
        arms=(arm,) * n,
        topology=topology,
        controller=controller,
        gains=gains,
        disturbances=(DisturbanceModel(amplitude=amplitude),) * n,
        initial=InitialState(q=q0, qdot=qdot0, adaptive=adaptive),
        t_end=t_end,
        dt=dt,
        **kwargs,
    )


# ----------------- Predicted equilibrium -----------------

def test_predicted_equilibrium_of_preset_setup(preset_graph):
    eq = predicted_equilibrium(preset_graph, np.ones(6), PRESET_Q0)
    np.testing.assert_allclose(eq, [-0.2833, 0.0], atol=1e-4)


def test_predicted_equilibrium_of_equal_positions(preset_graph, random_spanning_tree_graph):
    q0 = np.tile([0.4, -1.1], (6, 1))
    np.testing.assert_allclose(predicted_equilibrium(preset_graph, np.full(6, 3.0), q0), [0.4, -1.1])
    g = random_spanning_tree_graph(4)
    np.testing.assert_allclose(predicted_equilibrium(g, [1.0, 2.0, 0.5, 1.0], q0[:4]), [0.4, -1.1])


def test_predicted_equilibrium_with_weighted_alpha(preset_graph):
    # ξ/α = [1/6, 1/6, 1/2, 0, 0, 0] -> genormaliseerd [0.2, 0.2, 0.6]
    eq = predicted_equilibrium(preset_graph, [2.0, 1.0, 1.0, 1.0, 1.0, 1.0], PRESET_Q0)
    np.testing.assert_allclose(eq, [-0.14, -0.2], atol=1e-12)


def test_predicted_equilibrium_needs_spanning_tree(switch_graphs):
    with pytest.raises(NoSpanningTreeError):
        predicted_equilibrium(switch_graphs[0], np.ones(6), PRESET_Q0)


# ----------------- Scenario validation -----------------

def test_scenario_rejects_count_mismatch(preset_arm):
    with pytest.raises(ConfigError, match="mismatch"):
        make_scenario(preset_arm, build_laplacian(RING2), [[0.0, 0.0], [1.0, 0.0]], gains=(ControllerGains(),))


def test_scenario_rejects_dwell_not_multiple_of_dt(preset_arm, switch_graphs):
    schedule = SwitchingSchedule(graphs=switch_graphs, dwell_times=(2.0, 2.0), t_d=2.0)
    with pytest.raises(ConfigError, match="dwell"):
        make_scenario(preset_arm, schedule, PRESET_Q0, controller="switching", dt=0.3, t_end=3.0)


def test_with_overrides_ignores_none(preset_arm):
    sc = make_scenario(preset_arm, build_laplacian(RING2), [[0.0, 0.0], [1.0, 0.0]])
    again = sc.with_overrides(dt=None, t_end=2.0)
    assert again.dt == sc.dt
    assert again.t_end == 2.0
    assert again.n_steps == 200


# ----------------- Runs -----------------

def test_single_agent_has_no_disagreement(preset_arm):
    sc = make_scenario(preset_arm, build_laplacian([[0.0]]), [[0.2, 0.1]], [[0.1, 0.0]])
    trace = run(sc)
    assert np.all(trace.disagreement == 0.0)
    np.testing.assert_allclose(trace.predicted, [0.2, 0.1])
    assert trace.times[0] == 0.0
    assert trace.times[-1] == pytest.approx(1.0)
    assert len(trace.times) == 101


def test_sampling_keeps_every_kth_step(preset_arm):
    sc = make_scenario(preset_arm, build_laplacian(RING2), [[0.0, 0.0], [1.0, 0.0]], sample_every=10)
    trace = run(sc)
    np.testing.assert_allclose(trace.times, np.arange(11) * 0.1)
    assert list(trace.to_dataframe().columns) == csv_columns(2)


def test_runs_are_deterministic(preset_arm, preset_graph):
    sc = make_scenario(preset_arm, preset_graph, PRESET_Q0, PRESET_QDOT0, controller="fixed-novel",
                       amplitude=0.2, exact_theta=False, dt=2e-3)
    a, b = run(sc), run(sc)
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.tau, b.tau)
    np.testing.assert_array_equal(a.k_hat, b.k_hat)


def test_weighted_position_invariant_is_preserved(preset_arm, preset_graph):
    """(ξ/α)ᵀ(q - ∫ϑ) blijft gelijk aan zijn beginwaarde, ook met disturbance."""
    # met Θ̂(0) = 0 is dt = 0.01 voorbij de RK4 stabiliteitsgrens van de snelste modes
    sc = make_scenario(preset_arm, preset_graph, PRESET_Q0, PRESET_QDOT0, amplitude=0.2, exact_theta=False,
                       t_end=3.0, dt=1e-3, sample_every=10)
    trace = run(sc)
    xi = left_null_vector(preset_graph).xi
    invariant = np.einsum("i,sik->sk", xi, trace.q - trace.integral_vartheta)
    np.testing.assert_allclose(invariant, np.broadcast_to(trace.predicted, invariant.shape), atol=1e-10)


def test_adaptive_gains_never_decrease(preset_arm, preset_graph):
    sc = make_scenario(preset_arm, preset_graph, PRESET_Q0, PRESET_QDOT0, controller="fixed-novel",
                       amplitude=0.2, exact_theta=False, t_end=2.0, dt=2e-3)
    summary = consensus_metrics(run(sc))
    assert summary.d_hat_monotone
    assert summary.k_hat_monotone
    assert summary.gain_violations == 0


def test_decoupled_agents_regulate_sliding_but_keep_disagreement(preset_arm, caplog):
    q0 = [[0.0, 0.5], [1.0, -0.5]]
    sc = make_scenario(preset_arm, build_laplacian(np.zeros((2, 2))), q0, [[0.3, -0.2], [-0.1, 0.4]], t_end=20.0)
    with caplog.at_level(logging.WARNING, logger="sim"):
        trace = run(sc)
    assert "spanning tree" in caplog.text
    assert trace.predicted is None
    assert np.linalg.norm(trace.sliding[-1], axis=-1).max() < 1e-2
    initial = float(np.linalg.norm(np.subtract(*q0)))
    assert trace.disagreement[-1] == pytest.approx(initial, abs=1e-2)


def test_fixed_controller_rejects_switching_schedule(preset_arm, switch_graphs):
    schedule = SwitchingSchedule(graphs=switch_graphs, dwell_times=(1.0, 1.0), t_d=1.0)
    with pytest.raises(ConfigError, match="fixed graph"):
        run(make_scenario(preset_arm, schedule, PRESET_Q0, controller="fixed"))


def test_baseline_rejects_disturbances(preset_arm):
    sc = make_scenario(preset_arm, build_laplacian(RING2), [[0.0, 0.0], [1.0, 0.0]], controller="baseline",
                       amplitude=0.2)
    with pytest.raises(ConfigError, match="zero disturbances"):
        run(sc)


def test_divergence_reports_time_and_agent(preset_arm, monkeypatch):
    monkeypatch.setattr(sim, "DIVERGENCE_LIMIT", 0.5)
    sc = make_scenario(preset_arm, build_laplacian(RING2), [[0.1, 0.1], [0.9, 0.0]], exact_theta=False)
    reporter = RunReporter("divergence", sc.t_end)
    with pytest.raises(DivergenceError) as info:
        run(sc, reporter=reporter)
    assert info.value.agent == 2
    assert info.value.t == 0.0
    assert info.value.exit_code == 2
    assert reporter.stages[-1] == RunStage.FAILED


def test_switching_run_reports_switches(preset_arm, switch_graphs, tmp_path):
    schedule = SwitchingSchedule(graphs=switch_graphs, dwell_times=(1.0, 1.0), t_d=1.0)
    sink = tmp_path / "status.jsonl"
    sc = make_scenario(preset_arm, schedule, PRESET_Q0, PRESET_QDOT0, controller="switching", t_end=3.0)
    reporter = RunReporter(sc.name, sc.t_end, sink=str(sink))
    trace = run(sc, reporter=reporter)

    assert trace.switch_count == 3
    assert trace.predicted is None
    assert reporter.stages[0] == RunStage.VALIDATED
    assert reporter.stages.count(RunStage.SWITCHED) == 3
    assert reporter.stages[-1] == RunStage.COMPLETED
    lines = [json.loads(line) for line in sink.read_text().splitlines()]
    assert lines[-1]["stage"] == "completed"
    assert lines[-1]["metadata"]["steps"] == 300


def test_each_rk4_stage_reads_the_graph_at_its_own_time(preset_arm, monkeypatch):
    graphs = (build_laplacian([[0.0, 1.0], [0.0, 0.0]]), build_laplacian([[0.0, 0.0], [1.0, 0.0]]))
    schedule = SwitchingSchedule(graphs=graphs, dwell_times=(0.05, 0.05), t_d=0.05)
    seen = []
    original = SwitchingSchedule.graph_at

    def recording(self, t):
        g = original(self, t)
        seen.append((t, next(k for k, h in enumerate(self.graphs) if h is g)))
        return g

    monkeypatch.setattr(SwitchingSchedule, "graph_at", recording)
    sc = make_scenario(preset_arm, schedule, [[0.0, 0.0], [0.01, 0.0]], controller="switching", t_end=0.1)
    run(sc)

    assert len(seen) == 4 * 10 + 1
    for t, idx in seen:
        assert idx == int(math.floor((t + 1e-9) / 0.05)) % 2
    # k4 van de step [0.04, 0.05] en k1 van de volgende step zien al de tweede graaf
    at_switch = [idx for t, idx in seen if abs(t - 0.05) < 1e-12]
    assert at_switch == [1, 1]


def test_switching_novel_tracking_error_rate_matches_trace(preset_arm, switch_graphs):
    dt = 5e-4
    schedule = SwitchingSchedule(graphs=switch_graphs, dwell_times=(0.2, 0.2), t_d=0.2)
    sc = make_scenario(preset_arm, schedule, PRESET_Q0, PRESET_QDOT0, controller="switching-novel",
                       amplitude=0.2, t_end=0.6, dt=dt)
    trace = run(sc)
    e = trace.q - trace.z
    # w = ė + e, met ė zoals de controller hem intern berekent
    e_dot = trace.sliding - e
    np.testing.assert_allclose(e_dot, trace.qdot - trace.zdot, atol=1e-12)

    central = (e[2:] - e[:-2]) / (2.0 * dt)
    inner = trace.times[1:-1]
    away = np.abs(inner[:, None] - np.array([0.2, 0.4])).min(axis=1) > 1.5 * dt
    np.testing.assert_allclose(central[away], e_dot[1:-1][away], atol=2e-3)


def test_non_finite_disturbance_reports_agent(preset_arm):
    def spike(t):
        return np.array([math.nan if t > 0.05 else 0.0, 0.0])

    sc = make_scenario(preset_arm, build_laplacian(RING2), [[0.1, 0.1], [0.3, 0.0]]).with_overrides(
        disturbances=(DisturbanceModel(amplitude=0.0), DisturbanceModel(amplitude=0.0, waveform=spike,
                                                                       waveform_bound=1.0)),
    )
    with pytest.raises(DivergenceError) as info:
        run(sc)
    assert info.value.agent == 2
    assert info.value.t > 0.05
    assert "agent 2" in str(info.value)


def test_long_horizon_run_keeps_decay_positive(preset_arm):
    # zonder zwaartekracht blijven gelijke posities in rust exact staan
    arm = dataclasses.replace(preset_arm, gravity=0.0)
    q0 = [[0.3, -0.2], [0.3, -0.2]]
    sc = make_scenario(arm, build_laplacian(RING2), q0, t_end=800.0, dt=1.0, sample_every=100)
    trace = run(sc)
    assert trace.times[-1] == pytest.approx(800.0)
    np.testing.assert_allclose(trace.q[-1], q0)
    assert np.all(np.isfinite(trace.d_hat))


# ----------------- Metrics -----------------

def _synthetic_trace():
    s, n = 3, 2
    q = np.array([
        [[0.0, 0.0], [1.0, 0.0]],
        [[0.0, 0.0], [0.005, 0.0]],
        [[0.1, 0.0], [0.1, 0.002]],
    ])
    qdot = np.zeros((s, n, 2))
    qdot[-1] = [[0.0, 0.003], [0.004, 0.0]]
    return SimulationTrace(
        scenario_name="synthetic",
        controller="fixed",
        times=np.array([0.0, 1.0, 2.0]),
        q=q,
        qdot=qdot,
        tau=np.zeros((s, n, 2)),
        sliding=np.zeros((s, n, 2)),
        theta_hat=np.zeros((s, n, 5)),
        d_hat=np.array([[0.0, 0.0], [0.1, 0.2], [0.1, 0.3]]),
        k_hat=np.array([[1.0, 1.0], [2.0, 0.5], [2.0, 0.6]]),
        d_bar=np.zeros((s, n)),
        integral_vartheta=np.zeros((s, n, 2)),
        z=np.zeros((s, n, 2)),
        zdot=np.zeros((s, n, 2)),
        predicted=np.array([0.1, 0.001]),
    )


def test_metrics_of_synthetic_trace():
    trace = _synthetic_trace()
    np.testing.assert_allclose(trace.disagreement, [1.0, 0.005, 0.002])
    summary = consensus_metrics(trace, Thresholds())
    assert summary.final_disagreement == pytest.approx(0.002)
    assert summary.final_max_velocity == pytest.approx(0.004)
    assert summary.equilibrium_error == pytest.approx(0.001)
    assert summary.time_to_threshold == 1.0
    assert summary.d_hat_monotone
    assert not summary.k_hat_monotone
    assert summary.max_adaptive_gain == pytest.approx(2.0)
    assert summary.final_mean_position == pytest.approx([0.1, 0.001])
    assert summary.to_dict()["final_d_hat"] == [0.1, 0.3]


def test_acceptance_failures():
    summary = consensus_metrics(_synthetic_trace())
    failures = acceptance_failures(summary, Thresholds())
    assert len(failures) == 1
    assert "nondecreasing" in failures[0]
    assert acceptance_failures(summary, Thresholds(), require_monotone=False) == []
    strict = acceptance_failures(summary, Thresholds(disagreement=1e-3, equilibrium=1e-4), require_monotone=False)
    assert len(strict) == 2


# ----------------- Studies -----------------

def _two_agent_fixed(preset_arm):
    return make_scenario(preset_arm, build_laplacian(RING2), [[0.5, -0.3], [-0.2, 0.4]], [[0.1, 0.0], [0.0, -0.2]],
                         controller="fixed", amplitude=0.2, exact_theta=False, t_end=1.0, dt=2e-3)


def test_convergence_study_shows_fourth_order(preset_arm):
    table = convergence_study(_two_agent_fixed(preset_arm), [1e-3, 2e-3, 5e-4, 1.25e-4], max_workers=2)
    assert list(table.columns) == ["dt", "error", "observed_order"]
    assert list(table["dt"]) == [2e-3, 1e-3, 5e-4]
    assert table["error"].is_monotonic_decreasing
    assert math.isnan(table["observed_order"].iloc[0])
    assert table["observed_order"].iloc[-1] >= 3.5


def test_convergence_study_needs_two_dts(preset_arm):
    table = convergence_study(_two_agent_fixed(preset_arm), [1e-3, 1e-3])
    assert table.empty


def test_first_order_consensus_on_fixed_graph(preset_graph):
    _, states = first_order_consensus(preset_graph, np.ones(6), PRESET_Q0, 60.0, 0.01)
    expected = predicted_equilibrium(preset_graph, np.ones(6), PRESET_Q0)
    np.testing.assert_allclose(states[-1], np.tile(expected, (6, 1)), atol=1e-6)


def test_first_order_consensus_on_alternation(switch_graphs):
    schedule = SwitchingSchedule(graphs=switch_graphs, dwell_times=(2.0, 2.0), t_d=2.0)
    times, states = first_order_consensus(schedule, np.ones(6), PRESET_Q0, 120.0, 0.01)
    assert times[-1] == pytest.approx(120.0)
    final = states[-1]
    assert np.ptp(final, axis=0).max() < 1e-2


# ----------------- Built-in presets (slow) -----------------

@pytest.mark.slow
@pytest.mark.parametrize("preset", ["paper-fixed", "paper-fixed-novel"])
def test_fixed_presets_reach_predicted_equilibrium(preset):
    sc = build_scenario(get_preset(preset))
    summary = consensus_metrics(run(sc), sc.thresholds)
    assert summary.final_disagreement < 1e-2
    assert summary.equilibrium_error < 1e-2
    np.testing.assert_allclose(summary.final_mean_position, [-0.2833, 0.0], atol=1e-2)
    assert acceptance_failures(summary, sc.thresholds) == []


@pytest.mark.slow
@pytest.mark.parametrize("preset", ["paper-switching", "paper-switching-novel"])
def test_switching_presets_reach_consensus(preset):
    sc = build_scenario(get_preset(preset))
    trace = run(sc)
    summary = consensus_metrics(trace, sc.thresholds)
    assert summary.final_disagreement < 1e-2
    assert summary.final_max_velocity < 1e-2
    assert trace.switch_count == int(sc.t_end / 2.0)
    assert acceptance_failures(summary, sc.thresholds) == []


@pytest.mark.slow
def test_disturbance_leaves_fixed_equilibrium_in_place():
    cfg = get_preset("paper-fixed")
    quiet = cfg.model_copy(update={"disturbances": [DisturbanceConfig(amplitude=0.0)]})
    disturbed = consensus_metrics(run(build_scenario(cfg)))
    undisturbed = consensus_metrics(run(build_scenario(quiet)))
    assert undisturbed.predicted_equilibrium == pytest.approx(disturbed.predicted_equilibrium)
    np.testing.assert_allclose(disturbed.final_mean_position, undisturbed.final_mean_position, atol=1e-2)
    np.testing.assert_allclose(undisturbed.final_mean_position, [-0.2833, 0.0], atol=1e-2)


def _random_weighted_run(arm, graph, rng, controller):
    n = graph.n
    alpha = rng.uniform(0.5, 2.0, size=n)
    q0 = rng.uniform(-1.0, 1.0, size=(n, 2))
    qdot0 = rng.uniform(-0.2, 0.2, size=(n, 2))
    sc = make_scenario(arm, graph, q0, qdot0, controller=controller, amplitude=0.2, exact_theta=False,
                       t_end=80.0, dt=2e-3, sample_every=100,
                       gains=tuple(ControllerGains(alpha=float(a)) for a in alpha))
    return consensus_metrics(run(sc), sc.thresholds)


@pytest.mark.slow
@pytest.mark.parametrize("controller", ["fixed", "fixed-novel"])
def test_random_spanning_tree_graphs_reach_consensus(controller, preset_arm, random_spanning_tree_graph, rng):
    for _ in range(5):
        g = random_spanning_tree_graph(int(rng.integers(3, 9)), extra_p=0.4)
        summary = _random_weighted_run(preset_arm, g, rng, controller)
        assert summary.final_disagreement < 1e-2
        assert summary.final_max_velocity < 1e-2
        assert summary.equilibrium_error < 1e-2


@pytest.mark.slow
def test_weighted_average_law_on_random_graphs(preset_arm, random_spanning_tree_graph, rng):
    for _ in range(20):
        g = random_spanning_tree_graph(int(rng.integers(3, 9)), extra_p=0.4)
        summary = _random_weighted_run(preset_arm, g, rng, "fixed")
        np.testing.assert_allclose(summary.final_mean_position, summary.predicted_equilibrium, atol=2e-2)
