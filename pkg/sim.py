"""
Closed-loop simulatie van n Euler-Lagrange armen met gedistribueerde controllers.

De plant states en alle adaptieve/hulp-states vormen één augmented ODE die met
klassieke fixed-step RK4 wordt geïntegreerd. Per agent is de state een rij van
18 getallen (zie ``STATE_LAYOUT``); alle agents worden per stage in één
gebatchte controller- en dynamics-evaluatie afgehandeld.

Graaf-switches vallen op step grenzen (dwell times zijn veelvouden van dt). De
schedule is rechts-continu en elke RK4 stage leest a_ij(t) uit het segment dat
zijn eigen stage tijd bevat; de k4 stage van een step die op een switch eindigt
ziet dus al de nieuwe graaf.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from controllers import (
    AdaptiveState,
    ControlOutput,
    ControllerGains,
    ControllerVariant,
    GainBank,
    get_variant,
    stack_gains,
)
from dynamics import ArmBank, ArmParameters, DisturbanceModel, PlantState, forward_dynamics, stack_arms
from errors import ConfigError, DivergenceError, NonFiniteStateError, NoSpanningTreeError
from graphs import (
    DirectedGraphSpec,
    SwitchingSchedule,
    contains_spanning_tree,
    left_null_vector,
    uniformly_jointly_connected,
)
from status_reporter import RunReporter

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = float(os.getenv("CONSENSUS_DIVERGENCE_LIMIT", "1e6"))
SWEEP_WORKERS = int(os.getenv("CONSENSUS_SWEEP_WORKERS", "4"))

# Kolommen van de per-agent augmented state
STATE_LAYOUT: Dict[str, Union[slice, int]] = {
    "q": slice(0, 2),
    "qdot": slice(2, 4),
    "theta_hat": slice(4, 9),
    "d_hat": 9,
    "k_hat": 10,
    "d_bar": 11,
    "integral_vartheta": slice(12, 14),
    "z": slice(14, 16),
    "zdot": slice(16, 18),
}
STATE_SIZE = 18
ADAPTIVE_FIELDS = ("theta_hat", "d_hat", "k_hat", "d_bar", "integral_vartheta", "z", "zdot")

Topology = Union[DirectedGraphSpec, SwitchingSchedule]


# ----------------- Scenario -----------------

@dataclass(frozen=True)
class Thresholds:
    """Acceptatiegrenzen voor ``verify`` en de summary."""
    disagreement: float = 1e-2
    velocity: float = 1e-2
    equilibrium: float = 1e-2
    gain_bound: float = 1e4


@dataclass(frozen=True, eq=False)
class InitialState:
    q: np.ndarray
    qdot: np.ndarray
    adaptive: AdaptiveState

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True, eq=False)
class Scenario:
    """Volledige, gevalideerde experiment configuratie."""

    name: str
    arms: Tuple[ArmParameters, ...]
    topology: Topology
    controller: str
    gains: Tuple[ControllerGains, ...]
    disturbances: Tuple[DisturbanceModel, ...]
    initial: InitialState
    t_end: float
    dt: float
    sample_every: int = 1
    seed: int = 0
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        for name in ("arms", "gains", "disturbances"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = self.n
        sizes = {
            "arms": len(self.arms),
            "gains": len(self.gains),
            "disturbances": len(self.disturbances),
            "initial": self.initial.n,
            "graph": self.schedule.n,
        }
        wrong = {k: v for k, v in sizes.items() if v != n}
        if wrong:
            raise ConfigError(f"agent count mismatch: expected {n}, got {wrong}")
        if self.initial.q.shape != (n, 2) or self.initial.qdot.shape != (n, 2):
            raise ConfigError("initial q and qdot must have shape (n, 2)")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (math.isfinite(self.t_end) and self.t_end >= self.dt):
            raise ConfigError(f"t_end must be >= dt, got t_end={self.t_end}, dt={self.dt}")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1")
        get_variant(self.controller)
        if not self.schedule.is_fixed:
            for d in self.schedule.dwell_times:
                steps = d / self.dt
                if abs(steps - round(steps)) > 1e-6:
                    raise ConfigError(f"dwell time {d} is not a multiple of dt = {self.dt}")

    @property
    def n(self) -> int:
        return len(self.arms)

    @property
    def schedule(self) -> SwitchingSchedule:
        if isinstance(self.topology, SwitchingSchedule):
            return self.topology
        return SwitchingSchedule.fixed(self.topology)

    @property
    def variant(self) -> ControllerVariant:
        return get_variant(self.controller)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def alpha(self) -> np.ndarray:
        return np.array([g.alpha for g in self.gains])

    def with_overrides(self, **changes: Any) -> "Scenario":
        """Kopie met aangepaste velden (dt, t_end, sample_every, ...); wordt opnieuw gevalideerd."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)


# ----------------- Trace -----------------

@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """
    Gesamplede tijdreeksen van één run.

    Arrays zijn (S, n, ...) met S het aantal samples; ``sliding`` is s, e of w
    afhankelijk van de controller variant.
    """

    scenario_name: str
    controller: str
    times: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    tau: np.ndarray
    sliding: np.ndarray
    theta_hat: np.ndarray
    d_hat: np.ndarray
    k_hat: np.ndarray
    d_bar: np.ndarray
    integral_vartheta: np.ndarray
    z: np.ndarray
    zdot: np.ndarray
    predicted: Optional[np.ndarray] = None
    gain_violations: int = 0
    switch_count: int = 0

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def disagreement(self) -> np.ndarray:
        """D_q(t) = max_ij ‖q_i - q_j‖."""
        diff = self.q[:, :, None, :] - self.q[:, None, :, :]
        return np.linalg.norm(diff, axis=-1).max(axis=(1, 2))

    @property
    def max_velocity(self) -> np.ndarray:
        return np.linalg.norm(self.qdot, axis=-1).max(axis=1)

    @property
    def equilibrium_error(self) -> Optional[np.ndarray]:
        if self.predicted is None:
            return None
        return np.linalg.norm(self.q - self.predicted, axis=-1).max(axis=1)

    def final_state(self) -> Tuple[PlantState, AdaptiveState]:
        plant = PlantState(q=self.q[-1], qdot=self.qdot[-1])
        adaptive = AdaptiveState(**{name: getattr(self, name)[-1] for name in ADAPTIVE_FIELDS})
        return plant, adaptive

    def to_dataframe(self) -> pd.DataFrame:
        """Tabel met de gedocumenteerde CSV kolommen (agents 1-based)."""
        columns: Dict[str, np.ndarray] = {"t": self.times}
        for i in range(self.n):
            a = i + 1
            columns[f"q{a}_1"] = self.q[:, i, 0]
            columns[f"q{a}_2"] = self.q[:, i, 1]
            columns[f"qd{a}_1"] = self.qdot[:, i, 0]
            columns[f"qd{a}_2"] = self.qdot[:, i, 1]
            columns[f"tau{a}_1"] = self.tau[:, i, 0]
            columns[f"tau{a}_2"] = self.tau[:, i, 1]
            columns[f"dhat{a}"] = self.d_hat[:, i]
            columns[f"khat{a}"] = self.k_hat[:, i]
        return pd.DataFrame(columns)


def csv_columns(n: int) -> List[str]:
    cols = ["t"]
    for a in range(1, n + 1):
        cols += [f"q{a}_1", f"q{a}_2", f"qd{a}_1", f"qd{a}_2", f"tau{a}_1", f"tau{a}_2", f"dhat{a}", f"khat{a}"]
    return cols


# ----------------- Equilibrium -----------------

def predicted_equilibrium(graph: DirectedGraphSpec, alpha: Any, q0: Any) -> np.ndarray:
    """
    Σ (ξ_i/α_i) q_i(0) / Σ (ξ_i/α_i).

    Alleen root agents hebben ξ_i > 0 en dragen dus bij.

    Raises:
        NoSpanningTreeError: graaf zonder directed spanning tree.
    """
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    q0 = np.asarray(q0, dtype=float)
    if alpha.shape != (graph.n,) or np.any(alpha <= 0):
        raise ConfigError("alpha must be a positive n-vector")
    if q0.shape[0] != graph.n:
        raise ConfigError(f"expected {graph.n} initial positions, got {q0.shape[0]}")
    weights = left_null_vector(graph).xi / alpha
    return weights @ q0 / weights.sum()


# ----------------- Integration -----------------

def _pack(initial: InitialState) -> np.ndarray:
    x = np.zeros((initial.n, STATE_SIZE))
    x[:, STATE_LAYOUT["q"]] = initial.q
    x[:, STATE_LAYOUT["qdot"]] = initial.qdot
    for name in ADAPTIVE_FIELDS:
        x[:, STATE_LAYOUT[name]] = getattr(initial.adaptive, name)
    return x


def _adaptive_view(x: np.ndarray) -> AdaptiveState:
    return AdaptiveState(**{name: x[:, STATE_LAYOUT[name]] for name in ADAPTIVE_FIELDS})


class _ClosedLoop:
    """Rechterlid van de augmented ODE voor één scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.schedule = scenario.schedule
        self.variant = scenario.variant
        self.bank: ArmBank = stack_arms(scenario.arms)
        self.gains: GainBank = stack_gains(scenario.gains)
        self.disturbances = scenario.disturbances
        self.agent_ids = np.arange(1, scenario.n + 1)
        self._uniform = self._uniform_disturbance()
        self._fixed = self.schedule.graphs[0] if self.schedule.is_fixed else None

    def _uniform_disturbance(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        if any(d.waveform is not None for d in self.disturbances):
            return None
        amp = np.array([d.amplitude for d in self.disturbances])
        freq = np.array([d.frequency_scale for d in self.disturbances]) * self.agent_ids
        return amp, freq

    def disturbance(self, t: float) -> np.ndarray:
        if self._uniform is not None:
            amp, freq = self._uniform
            value = amp * np.sin(freq * t)
            return np.repeat(value[:, None], 2, axis=1)
        return np.stack([d(t, i) for d, i in zip(self.disturbances, self.agent_ids)])

    def graph_at(self, t: float) -> DirectedGraphSpec:
        if self._fixed is not None:
            return self._fixed
        return self.schedule.graph_at(t)

    def __call__(self, t: float, x: np.ndarray) -> Tuple[np.ndarray, ControlOutput]:
        """Afgeleide op stage tijd ``t``; a_ij(t) komt uit het segment dat ``t`` bevat."""
        q = x[:, STATE_LAYOUT["q"]]
        qdot = x[:, STATE_LAYOUT["qdot"]]
        plant = PlantState(q=q, qdot=qdot)
        view = self.variant.view(self.graph_at(t).adjacency, q, qdot)
        out = self.variant.step(self.gains, plant, view, _adaptive_view(x), t, self.bank.gravity)
        d = self.disturbance(t)

        dx = np.empty_like(x)
        dx[:, STATE_LAYOUT["q"]] = qdot
        try:
            dx[:, STATE_LAYOUT["qdot"]] = forward_dynamics(self.bank, plant, out.tau, d)
        except NonFiniteStateError as e:
            finite = np.isfinite(x).all(axis=1) & np.isfinite(out.tau).all(axis=1) & np.isfinite(d).all(axis=1)
            agent = int(np.flatnonzero(~finite)[0]) + 1 if not finite.all() else None
            where = f" (agent {agent})" if agent is not None else ""
            raise DivergenceError(f"{e} at t = {t:.4f}{where}", t=t, agent=agent) from e
        for name in ADAPTIVE_FIELDS:
            dx[:, STATE_LAYOUT[name]] = getattr(out.derivatives, name)
        return dx, out


def _check_divergence(x: np.ndarray, t: float) -> None:
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LIMIT)
    if bad.any():
        agent = int(np.argwhere(bad)[0][0]) + 1
        raise DivergenceError(f"state of agent {agent} diverged at t = {t:.4f}", t=t, agent=agent)


def validate_compatibility(scenario: Scenario) -> None:
    """Controller/graaf combinatie checken; structurele zwaktes alleen loggen."""
    variant = scenario.variant
    schedule = scenario.schedule
    if not variant.switching and not schedule.is_fixed:
        raise ConfigError(f"controller '{variant.name}' requires a fixed graph, got a switching schedule")
    if not variant.robust and any(not d.is_zero for d in scenario.disturbances):
        raise ConfigError(f"controller '{variant.name}' has no robust term and only runs with zero disturbances")
    if schedule.is_fixed:
        if not contains_spanning_tree(schedule.graphs[0]):
            logger.warning(f"[Sim] {scenario.name}: graph has no directed spanning tree, consensus is not expected")
    elif not uniformly_jointly_connected(schedule, schedule.period):
        logger.warning(f"[Sim] {scenario.name}: schedule is not uniformly jointly connected within one period")


def _prediction(scenario: Scenario) -> Optional[np.ndarray]:
    schedule = scenario.schedule
    if not schedule.is_fixed:
        return None
    try:
        return predicted_equilibrium(schedule.graphs[0], scenario.alpha, scenario.initial.q)
    except NoSpanningTreeError:
        return None


def run(scenario: Scenario, reporter: Optional[RunReporter] = None) -> SimulationTrace:
    """
    Integreer het scenario met RK4 en sample elke ``sample_every`` steps.

    Raises:
        ConfigError: incompatibele controller/graaf combinatie.
        DivergenceError: niet-eindige of te grote state (met t en agent index).
    """
    validate_compatibility(scenario)
    reporter = reporter or RunReporter(scenario.name, scenario.t_end)
    rhs = _ClosedLoop(scenario)
    dt = scenario.dt
    n_steps = scenario.n_steps
    every = scenario.sample_every
    monotone = rhs.gains.sigma == 0.0

    x = _pack(scenario.initial)
    samples: Dict[str, List[np.ndarray]] = {k: [] for k in ("times", "tau", "sliding", "x")}
    violations = 0
    switches = 0
    segment = scenario.schedule.segment_index(0.0)

    with reporter:
        reporter.validated(scenario.n, scenario.controller)
        _check_divergence(x, 0.0)
        for k in range(n_steps + 1):
            t = k * dt
            k1, out = rhs(t, x)

            if k % every == 0:
                samples["times"].append(t)
                samples["x"].append(x.copy())
                samples["tau"].append(out.tau.copy())
                samples["sliding"].append(out.sliding.copy())
            if k == n_steps:
                break

            k2, _ = rhs(t + 0.5 * dt, x + 0.5 * dt * k1)
            k3, _ = rhs(t + 0.5 * dt, x + 0.5 * dt * k2)
            k4, _ = rhs(t + dt, x + dt * k3)
            x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check_divergence(x_new, t + dt)

            decreased = (
                (x_new[:, STATE_LAYOUT["d_hat"]] < x[:, STATE_LAYOUT["d_hat"]] - 1e-12) & monotone
            ) | (x_new[:, STATE_LAYOUT["k_hat"]] < x[:, STATE_LAYOUT["k_hat"]] - 1e-12)
            violations += int(decreased.sum())
            x = x_new

            t_next = (k + 1) * dt
            new_segment = rhs.schedule.segment_index(t_next)
            if new_segment != segment:
                switches += 1
                segment = new_segment
                reporter.switched(t_next, segment)
            reporter.progress(t_next)
        reporter.completed(n_steps)

    if violations:
        logger.warning(f"[Sim] {scenario.name}: {violations} per-step decreases of d_hat/k_hat")

    xs = np.stack(samples["x"])
    return SimulationTrace(
        scenario_name=scenario.name,
        controller=scenario.controller,
        times=np.array(samples["times"]),
        q=xs[:, :, STATE_LAYOUT["q"]],
        qdot=xs[:, :, STATE_LAYOUT["qdot"]],
        tau=np.stack(samples["tau"]),
        sliding=np.stack(samples["sliding"]),
        theta_hat=xs[:, :, STATE_LAYOUT["theta_hat"]],
        d_hat=xs[:, :, STATE_LAYOUT["d_hat"]],
        k_hat=xs[:, :, STATE_LAYOUT["k_hat"]],
        d_bar=xs[:, :, STATE_LAYOUT["d_bar"]],
        integral_vartheta=xs[:, :, STATE_LAYOUT["integral_vartheta"]],
        z=xs[:, :, STATE_LAYOUT["z"]],
        zdot=xs[:, :, STATE_LAYOUT["zdot"]],
        predicted=_prediction(scenario),
        gain_violations=violations,
        switch_count=switches,
    )


# ----------------- Metrics -----------------

@dataclass
class ConsensusSummary:
    scenario_name: str
    controller: str
    final_disagreement: float
    final_max_velocity: float
    equilibrium_error: Optional[float]
    time_to_threshold: Optional[float]
    final_d_hat: List[float]
    final_k_hat: List[float]
    d_hat_monotone: bool
    k_hat_monotone: bool
    max_adaptive_gain: float
    max_theta_hat_norm: float
    gain_violations: int = 0
    predicted_equilibrium: Optional[List[float]] = None
    final_mean_position: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def consensus_metrics(trace: SimulationTrace, thresholds: Optional[Thresholds] = None) -> ConsensusSummary:
    thresholds = thresholds or Thresholds()
    if trace.times.size == 0:
        raise ConfigError("cannot summarize an empty trace")
    disagreement = trace.disagreement
    below = np.flatnonzero(disagreement < thresholds.disagreement)
    eq_err = trace.equilibrium_error

    d_steps = np.diff(trace.d_hat, axis=0)
    k_steps = np.diff(trace.k_hat, axis=0)
    return ConsensusSummary(
        scenario_name=trace.scenario_name,
        controller=trace.controller,
        final_disagreement=float(disagreement[-1]),
        final_max_velocity=float(trace.max_velocity[-1]),
        equilibrium_error=None if eq_err is None else float(eq_err[-1]),
        time_to_threshold=float(trace.times[below[0]]) if below.size else None,
        final_d_hat=[float(v) for v in trace.d_hat[-1]],
        final_k_hat=[float(v) for v in trace.k_hat[-1]],
        d_hat_monotone=bool(np.all(d_steps >= -1e-12)),
        k_hat_monotone=bool(np.all(k_steps >= -1e-12)),
        gain_violations=trace.gain_violations,
        max_adaptive_gain=float(max(np.abs(trace.d_hat).max(), np.abs(trace.k_hat).max())),
        max_theta_hat_norm=float(np.linalg.norm(trace.theta_hat, axis=-1).max()),
        predicted_equilibrium=None if trace.predicted is None else [float(v) for v in trace.predicted],
        final_mean_position=[float(v) for v in trace.q[-1].mean(axis=0)],
    )


def acceptance_failures(summary: ConsensusSummary, thresholds: Thresholds,
                        require_monotone: bool = True) -> List[str]:
    """Lijst met overschreden grenzen; leeg betekent geslaagd."""
    failures = []
    if not summary.final_disagreement < thresholds.disagreement:
        failures.append(f"final_disagreement {summary.final_disagreement:.3e} >= {thresholds.disagreement}")
    if not summary.final_max_velocity < thresholds.velocity:
        failures.append(f"final_max_velocity {summary.final_max_velocity:.3e} >= {thresholds.velocity}")
    if summary.equilibrium_error is not None and not summary.equilibrium_error < thresholds.equilibrium:
        failures.append(f"equilibrium_error {summary.equilibrium_error:.3e} >= {thresholds.equilibrium}")
    if not summary.max_adaptive_gain < thresholds.gain_bound:
        failures.append(f"adaptive gain {summary.max_adaptive_gain:.3e} exceeds {thresholds.gain_bound}")
    if require_monotone and not (summary.d_hat_monotone and summary.k_hat_monotone and summary.gain_violations == 0):
        failures.append("adaptive gains d_hat/k_hat are not nondecreasing")
    return failures


# ----------------- Studies -----------------

def convergence_study(scenario: Scenario, dt_list: Sequence[float],
                      max_workers: int = SWEEP_WORKERS) -> pd.DataFrame:
    """
    Draai het scenario per dt en vergelijk de eindtoestand met de fijnste dt.

    Returns:
        DataFrame met kolommen dt, error, observed_order (order tussen opeenvolgende rijen);
        leeg bij één dt.
    """
    dts = sorted({float(d) for d in dt_list}, reverse=True)
    columns = ["dt", "error", "observed_order"]
    if len(dts) < 2:
        return pd.DataFrame(columns=columns)

    def _terminal(dt: float) -> np.ndarray:
        sc = scenario.with_overrides(dt=dt, sample_every=max(1, int(round(scenario.t_end / dt))))
        trace = run(sc)
        return np.concatenate([trace.q[-1].ravel(), trace.qdot[-1].ravel()])

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        terminals = dict(zip(dts, pool.map(_terminal, dts)))

    reference = terminals[dts[-1]]
    rows = []
    prev: Optional[Tuple[float, float]] = None
    for dt in dts[:-1]:
        err = float(np.max(np.abs(terminals[dt] - reference)))
        order = math.nan
        if prev is not None and err > 0 and prev[1] > 0:
            order = math.log(prev[1] / err) / math.log(prev[0] / dt)
        rows.append({"dt": dt, "error": err, "observed_order": order})
        prev = (dt, err)
    logger.info(f"[Sim] convergence study on {scenario.name}: {len(rows)} rows against dt = {dts[-1]}")
    return pd.DataFrame(rows, columns=columns)


def first_order_consensus(schedule: Topology, alpha: Any, x0: Any, t_end: float,
                          dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Single-integrator consensus ẋ_i = -α_i Σ a_ij(t)(x_i - x_j) met RK4.

    Returns:
        (times, states) met states van shape (steps + 1, n, ...).
    """
    if isinstance(schedule, DirectedGraphSpec):
        schedule = SwitchingSchedule.fixed(schedule)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    x = np.array(x0, dtype=float)
    if alpha.shape != (schedule.n,) or x.shape[0] != schedule.n:
        raise ConfigError("alpha and x0 must have one entry per agent")
    if not dt > 0 or t_end < 0:
        raise ConfigError("dt must be positive and t_end nonnegative")
    gain = alpha.reshape((-1,) + (1,) * (x.ndim - 1))

    def f(t: float, state: np.ndarray) -> np.ndarray:
        return -gain * np.tensordot(schedule.graph_at(t).laplacian, state, axes=1)

    steps = int(round(t_end / dt))
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for k in range(steps):
        t = k * dt
        k1 = f(t, x)
        k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = f(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return np.arange(steps + 1) * dt, out
