"""
Scenario laden, opslaan en de ingebouwde presets.

Een scenario komt uit een JSON document (``ScenarioConfig``) of uit een preset
naam. ``build_scenario`` zet het gevalideerde document om naar de runtime
``sim.Scenario``; ``to_config`` doet het omgekeerde.
"""

from __future__ import annotations

import json
import logging
import os
from typing import Callable, Dict, List, Sequence, Union

import numpy as np
from pydantic import ValidationError

from controllers import AdaptiveState, ControllerGains, DecayFunction
from dynamics import ArmParameters, DisturbanceModel
from errors import ConfigError, UnknownPresetError
from graphs import DirectedGraphSpec, SwitchingSchedule, graph_from_edges, graph_to_dict
from output_writer import write_json
from scenario_schemas import (
    ArmConfig,
    DisturbanceConfig,
    GainsConfig,
    GraphConfig,
    InitialConfig,
    ScenarioConfig,
    ScheduleConfig,
    ThresholdConfig,
)
from sim import InitialState, Scenario, Thresholds

logger = logging.getLogger(__name__)


# ----------------- Experiment constants -----------------

PRESET_ARM = ArmConfig(m1=1.0, m2=0.8, l1=0.8, l2=0.6, lc1=0.4, lc2=0.3, j1=0.0533, j2=0.024)

# [j, i, a_ij]: agent j is neighbor van agent i (1-based)
PRESET_EDGES: List[List[float]] = [
    [3, 2, 1.0], [1, 2, 1.0], [2, 1, 1.0], [2, 5, 1.0], [1, 3, 1.0], [3, 1, 1.0],
    [3, 4, 1.0], [5, 4, 1.0], [4, 6, 1.0], [6, 4, 1.0], [5, 6, 1.0],
]
# Twee grafen zonder spanning tree waarvan de union de vaste graaf is
SWITCH_EDGES_A: List[List[float]] = [
    [2, 1, 1.0], [3, 1, 1.0], [1, 2, 1.0], [2, 5, 1.0], [5, 6, 1.0],
]
SWITCH_EDGES_B: List[List[float]] = [
    [3, 2, 1.0], [1, 3, 1.0], [3, 4, 1.0], [5, 4, 1.0], [4, 6, 1.0], [6, 4, 1.0],
]
SWITCH_DWELL = 2.0

PRESET_Q0 = [(-1.0, 1.0), (0.0, 1.0), (0.1, -1.0), (-0.5, -1.0), (0.0, -0.5), (0.1, -0.5)]
PRESET_QDOT0 = [(-0.25, 0.25), (-0.25, 0.15), (0.02, 0.12), (-0.25, -0.15), (0.0, -0.25), (0.15, 0.0)]
PRESET_EQUILIBRIUM = (-0.2833, 0.0)

FIXED_T_END = 60.0
SWITCHING_T_END = 120.0
PRESET_DT = 1e-3
PRESET_SAMPLE_EVERY = 10


def _graph_config(edges: Sequence[Sequence[float]], n: int = 6) -> GraphConfig:
    return GraphConfig(n=n, edges=[(int(j), int(i), float(w)) for j, i, w in edges])


def _preset_config(name: str, controller: str) -> ScenarioConfig:
    n = len(PRESET_Q0)
    switching = controller.startswith("switching")
    topology = {}
    if switching:
        topology["schedule"] = ScheduleConfig(
            graphs=[_graph_config(SWITCH_EDGES_A), _graph_config(SWITCH_EDGES_B)],
            dwell_times=[SWITCH_DWELL, SWITCH_DWELL],
            t_d=SWITCH_DWELL,
            cyclic=True,
        )
    else:
        topology["graph"] = _graph_config(PRESET_EDGES)
    return ScenarioConfig(
        name=name,
        controller=controller,
        arms=[PRESET_ARM.model_copy() for _ in range(n)],
        gains=[GainsConfig() for _ in range(n)],
        disturbances=[DisturbanceConfig(amplitude=0.2, frequency_scale=0.02) for _ in range(n)],
        initial=InitialConfig(
            q=list(PRESET_Q0),
            qdot=list(PRESET_QDOT0),
            z=list(PRESET_Q0),
            zdot=[(0.0, 0.0)] * n,
        ),
        t_end=SWITCHING_T_END if switching else FIXED_T_END,
        dt=PRESET_DT,
        sample_every=PRESET_SAMPLE_EVERY,
        **topology,
    )


PRESETS: Dict[str, Callable[[], ScenarioConfig]] = {
    "paper-fixed": lambda: _preset_config("paper-fixed", "fixed"),
    "paper-fixed-novel": lambda: _preset_config("paper-fixed-novel", "fixed-novel"),
    "paper-switching": lambda: _preset_config("paper-switching", "switching"),
    "paper-switching-novel": lambda: _preset_config("paper-switching-novel", "switching-novel"),
}


def get_preset(name: str) -> ScenarioConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UnknownPresetError(f"unknown preset '{name}', expected one of {sorted(PRESETS)}") from None
    return factory()


# ----------------- Config <-> Scenario -----------------

def _expand(items: List, n: int) -> List:
    return list(items) * n if len(items) == 1 else list(items)


def _graph(cfg: GraphConfig) -> DirectedGraphSpec:
    return graph_from_edges(cfg.n, cfg.edges, one_based=True)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Zet een gevalideerd document om naar een runtime ``Scenario``."""
    n = cfg.n
    arms = [ArmParameters(**a.model_dump()) for a in _expand(cfg.arms, n)]
    gains = [
        ControllerGains(
            alpha=g.alpha, K=np.array(g.K), Lambda=np.array(g.Lambda), delta=g.delta, gamma=g.gamma,
            k=g.k, mu=DecayFunction(g.mu), robust=g.robust, sigma=g.sigma, gamma_bar=g.gamma_bar,
        )
        for g in _expand(cfg.gains, n)
    ]
    disturbances = [
        DisturbanceModel(amplitude=d.amplitude, frequency_scale=d.frequency_scale)
        for d in _expand(cfg.disturbances, n)
    ]

    if cfg.graph is not None:
        topology: Union[DirectedGraphSpec, SwitchingSchedule] = _graph(cfg.graph)
    else:
        s = cfg.schedule
        topology = SwitchingSchedule(
            graphs=tuple(_graph(g) for g in s.graphs),
            dwell_times=tuple(s.dwell_times),
            t_d=s.t_d,
            cyclic=s.cyclic,
        )

    init = cfg.initial
    q0 = np.array(init.q, dtype=float)
    zeros = AdaptiveState.zeros(n)
    adaptive = AdaptiveState(
        theta_hat=np.array(init.theta_hat, dtype=float) if init.theta_hat is not None else zeros.theta_hat,
        d_hat=np.array(init.d_hat, dtype=float) if init.d_hat is not None else zeros.d_hat,
        k_hat=np.array(init.k_hat, dtype=float) if init.k_hat is not None else zeros.k_hat,
        d_bar=np.array(init.d_bar, dtype=float) if init.d_bar is not None else zeros.d_bar,
        integral_vartheta=zeros.integral_vartheta,
        z=np.array(init.z, dtype=float) if init.z is not None else q0.copy(),
        zdot=np.array(init.zdot, dtype=float) if init.zdot is not None else zeros.zdot,
    )
    t = cfg.thresholds
    return Scenario(
        name=cfg.name,
        arms=tuple(arms),
        topology=topology,
        controller=cfg.controller,
        gains=tuple(gains),
        disturbances=tuple(disturbances),
        initial=InitialState(q=q0, qdot=np.array(init.qdot, dtype=float), adaptive=adaptive),
        t_end=cfg.t_end,
        dt=cfg.dt,
        sample_every=cfg.sample_every,
        seed=cfg.seed,
        thresholds=Thresholds(
            disagreement=t.disagreement, velocity=t.velocity, equilibrium=t.equilibrium, gain_bound=t.gain_bound,
        ),
    )


def _graph_to_config(g: DirectedGraphSpec) -> GraphConfig:
    return GraphConfig.model_validate(graph_to_dict(g))


def _pairs(arr: np.ndarray) -> List:
    return [tuple(float(v) for v in row) for row in arr]


def to_config(scenario: Scenario) -> ScenarioConfig:
    """Inverse van ``build_scenario``; één entry per agent."""
    topology = {}
    if isinstance(scenario.topology, SwitchingSchedule):
        s = scenario.topology
        topology["schedule"] = ScheduleConfig(
            graphs=[_graph_to_config(g) for g in s.graphs],
            dwell_times=list(s.dwell_times),
            t_d=s.t_d,
            cyclic=s.cyclic,
        )
    else:
        topology["graph"] = _graph_to_config(scenario.topology)

    init = scenario.initial
    a = init.adaptive
    t = scenario.thresholds
    return ScenarioConfig(
        name=scenario.name,
        controller=scenario.controller,
        arms=[
            ArmConfig(m1=p.m1, m2=p.m2, l1=p.l1, l2=p.l2, lc1=p.lc1, lc2=p.lc2, j1=p.j1, j2=p.j2, gravity=p.gravity)
            for p in scenario.arms
        ],
        gains=[
            GainsConfig(
                alpha=g.alpha, K=g.K.tolist(), Lambda=g.Lambda.tolist(), delta=g.delta, gamma=g.gamma, k=g.k,
                mu=g.mu.kind, robust=g.robust, sigma=g.sigma, gamma_bar=g.gamma_bar,
            )
            for g in scenario.gains
        ],
        disturbances=[
            DisturbanceConfig(amplitude=d.amplitude, frequency_scale=d.frequency_scale)
            for d in scenario.disturbances
        ],
        initial=InitialConfig(
            q=_pairs(init.q),
            qdot=_pairs(init.qdot),
            theta_hat=[[float(v) for v in row] for row in a.theta_hat],
            d_hat=[float(v) for v in a.d_hat],
            k_hat=[float(v) for v in a.k_hat],
            d_bar=[float(v) for v in a.d_bar],
            z=_pairs(a.z),
            zdot=_pairs(a.zdot),
        ),
        t_end=scenario.t_end,
        dt=scenario.dt,
        sample_every=scenario.sample_every,
        seed=scenario.seed,
        thresholds=ThresholdConfig(
            disagreement=t.disagreement, velocity=t.velocity, equilibrium=t.equilibrium, gain_bound=t.gain_bound,
        ),
        **topology,
    )


# ----------------- Load / save -----------------

def _format_validation(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario: {_format_validation(e)}") from e


def load_config(source: str) -> ScenarioConfig:
    """Preset naam of pad naar een JSON scenario document."""
    if source in PRESETS:
        return get_preset(source)
    if not os.path.exists(source):
        if os.path.splitext(source)[1] or os.sep in source:
            raise ConfigError(f"scenario file not found: {source}")
        raise UnknownPresetError(f"unknown preset '{source}', expected one of {sorted(PRESETS)}")
    try:
        with open(source, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse scenario file {source}: {e}") from e
    cfg = parse_config(data)
    logger.info(f"[Scenario] Loaded '{cfg.name}' from {source} ({cfg.n} agents, controller {cfg.controller})")
    return cfg


def load_scenario(source: str) -> Scenario:
    return build_scenario(load_config(source))


def save_config(cfg: ScenarioConfig, path: str) -> str:
    return write_json(cfg.model_dump(mode="json"), path)
