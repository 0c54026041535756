# scenario_schemas.py
"""
Pydantic modellen van het scenario config document (JSON).

Agents zijn 1-based genummerd in het document; edges zijn ``[j, i, a_ij]``
triples (agent j is neighbor van agent i). Matrices zijn row-major lijsten.
"""

from __future__ import annotations

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from dynamics import GRAVITY

ControllerName = Literal["baseline", "fixed", "fixed-novel", "switching", "switching-novel"]
DecayKind = Literal["exp", "inverse-square"]
RobustMode = Literal["standard", "sigma", "adaptive-sigma"]

Vector2 = Tuple[float, float]


class ArmConfig(BaseModel):
    model_config = {"extra": "forbid"}

    m1: float = Field(gt=0)
    m2: float = Field(gt=0)
    l1: float = Field(gt=0)
    l2: float = Field(gt=0)
    lc1: float = Field(gt=0)
    lc2: float = Field(gt=0)
    j1: float = Field(gt=0)
    j2: float = Field(gt=0)
    gravity: float = Field(GRAVITY, ge=0)

    @model_validator(mode="after")
    def _centers_on_links(self):
        if self.lc1 > self.l1:
            raise ValueError("lc1 must not exceed l1")
        if self.lc2 > self.l2:
            raise ValueError("lc2 must not exceed l2")
        return self


class GraphConfig(BaseModel):
    model_config = {"extra": "forbid"}

    n: int = Field(gt=0)
    # [j, i, a_ij]: informatie stroomt van j naar i
    edges: List[Tuple[int, int, float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _edges_in_range(self):
        for j, i, w in self.edges:
            if not (1 <= j <= self.n and 1 <= i <= self.n):
                raise ValueError(f"edge [{j}, {i}] references an agent outside 1..{self.n}")
            if j == i:
                raise ValueError(f"self-loop on agent {i} is not allowed")
            if not w > 0:
                raise ValueError(f"edge [{j}, {i}] needs a positive weight, got {w}")
        return self


class ScheduleConfig(BaseModel):
    model_config = {"extra": "forbid"}

    graphs: List[GraphConfig] = Field(min_length=1)
    dwell_times: List[float] = Field(min_length=1)
    t_d: float = Field(gt=0)
    cyclic: bool = True

    @model_validator(mode="after")
    def _one_dwell_per_graph(self):
        if len(self.graphs) != len(self.dwell_times):
            raise ValueError("dwell_times needs one entry per graph")
        if any(d < self.t_d for d in self.dwell_times):
            raise ValueError(f"every dwell time must be >= t_d = {self.t_d}")
        return self


class GainsConfig(BaseModel):
    model_config = {"extra": "forbid"}

    alpha: float = Field(1.0, gt=0)
    K: List[List[float]] = Field(default_factory=lambda: [[2.0, 0.0], [0.0, 2.0]])
    Lambda: List[List[float]] = Field(
        default_factory=lambda: [[5.0 if r == c else 0.0 for c in range(5)] for r in range(5)]
    )
    delta: float = Field(0.2, gt=0)
    gamma: float = Field(3.0, gt=0)
    k: float = Field(1.0, gt=0)
    mu: DecayKind = "exp"
    robust: RobustMode = "standard"
    sigma: float = Field(0.0, ge=0)
    gamma_bar: float = Field(0.0, ge=0)

    @field_validator("K")
    @classmethod
    def _k_shape(cls, v):
        if len(v) != 2 or any(len(row) != 2 for row in v):
            raise ValueError("K must be a 2x2 matrix")
        return v

    @field_validator("Lambda")
    @classmethod
    def _lambda_shape(cls, v):
        if len(v) != 5 or any(len(row) != 5 for row in v):
            raise ValueError("Lambda must be a 5x5 matrix")
        return v


class DisturbanceConfig(BaseModel):
    model_config = {"extra": "forbid"}

    amplitude: float = Field(0.2, ge=0)
    frequency_scale: float = 0.02


class InitialConfig(BaseModel):
    """Begin toestand; ontbrekende adaptieve states starten op nul, z op q(0)."""

    model_config = {"extra": "forbid"}

    q: List[Vector2] = Field(min_length=1)
    qdot: List[Vector2] = Field(min_length=1)
    theta_hat: Optional[List[List[float]]] = None
    d_hat: Optional[List[float]] = None
    k_hat: Optional[List[float]] = None
    d_bar: Optional[List[float]] = None
    z: Optional[List[Vector2]] = None
    zdot: Optional[List[Vector2]] = None

    @model_validator(mode="after")
    def _consistent_lengths(self):
        n = len(self.q)
        for name in ("qdot", "theta_hat", "d_hat", "k_hat", "d_bar", "z", "zdot"):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ValueError(f"{name} needs {n} entries, got {len(value)}")
        if self.theta_hat is not None and any(len(row) != 5 for row in self.theta_hat):
            raise ValueError("theta_hat entries must have 5 components")
        for name in ("d_hat", "k_hat"):
            value = getattr(self, name)
            if value is not None and any(v < 0 for v in value):
                raise ValueError(f"{name} must start nonnegative")
        return self


class ThresholdConfig(BaseModel):
    model_config = {"extra": "forbid"}

    disagreement: float = Field(1e-2, gt=0)
    velocity: float = Field(1e-2, gt=0)
    equilibrium: float = Field(1e-2, gt=0)
    gain_bound: float = Field(1e4, gt=0)


class ScenarioConfig(BaseModel):
    """
    Volledig scenario document.

    ``arms``, ``gains`` en ``disturbances`` bevatten één entry per agent, of één
    entry die voor alle agents geldt. Precies één van ``graph``/``schedule``.
    """

    model_config = {"extra": "forbid"}

    name: str = "scenario"
    controller: ControllerName
    arms: List[ArmConfig] = Field(min_length=1)
    graph: Optional[GraphConfig] = None
    schedule: Optional[ScheduleConfig] = None
    gains: List[GainsConfig] = Field(default_factory=lambda: [GainsConfig()], min_length=1)
    disturbances: List[DisturbanceConfig] = Field(default_factory=lambda: [DisturbanceConfig()], min_length=1)
    initial: InitialConfig
    t_end: float = Field(gt=0)
    dt: float = Field(1e-3, gt=0)
    sample_every: int = Field(1, ge=1)
    seed: int = 0
    thresholds: ThresholdConfig = Field(default_factory=ThresholdConfig)

    @property
    def n(self) -> int:
        return len(self.initial.q)

    @model_validator(mode="after")
    def _topology_and_sizes(self):
        if (self.graph is None) == (self.schedule is None):
            raise ValueError("exactly one of graph or schedule must be given")
        n = self.n
        graph_n = self.graph.n if self.graph is not None else self.schedule.graphs[0].n
        if self.schedule is not None and any(g.n != graph_n for g in self.schedule.graphs):
            raise ValueError("all schedule graphs must have the same n")
        if graph_n != n:
            raise ValueError(f"graph has {graph_n} agents but initial.q has {n}")
        for name in ("arms", "gains", "disturbances"):
            size = len(getattr(self, name))
            if size not in (1, n):
                raise ValueError(f"{name} needs 1 or {n} entries, got {size}")
        if self.t_end < self.dt:
            raise ValueError("t_end must be >= dt")
        return self
