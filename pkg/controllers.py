"""
Gedistribueerde adaptieve consensus controllers.

Vijf control laws (baseline + vier varianten) met hun adaptatiewetten. Elke
step function is puur:

    step(gains, plant, view, adaptive, t, gravity) -> ControlOutput

en werkt gebatched: alle arrays hebben een leidende as van m agents
(een enkele agent is een batch van 1). De simulator beheert de state en
integreert de afgeleiden in ``ControlOutput.derivatives``.

Een controller ziet zijn buren alleen via een ``NeighborView``. Velocity-free
varianten accepteren uitsluitend een view zonder relatieve snelheden.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from dynamics import GRAVITY, THETA_SIZE, PlantState, regressor
from errors import ConfigError, ContractViolationError

logger = logging.getLogger(__name__)

MU_KINDS = ("exp", "inverse-square")
ROBUST_MODES = ("standard", "sigma", "adaptive-sigma")
MU_FLOOR = float(np.finfo(float).tiny)


# ----------------- Gains -----------------

@dataclass(frozen=True)
class DecayFunction:
    """μ_i(t) > 0 met eindige integraal: ``exp`` = e^-t, ``inverse-square`` = 1/(t+1)²."""

    kind: str = "exp"

    def __post_init__(self):
        if self.kind not in MU_KINDS:
            raise ConfigError(f"unknown decay function '{self.kind}', expected one of {MU_KINDS}")

    def __call__(self, t: float) -> float:
        if self.kind == "exp":
            value = math.exp(-t)
        else:
            value = 1.0 / (t + 1.0) ** 2
        # e^-t underflowt naar 0.0 voorbij t ~ 745
        return max(value, MU_FLOOR)


def _check_spd(name: str, m: np.ndarray, size: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (size, size):
        raise ConfigError(f"{name} must be {size}x{size}, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or not np.allclose(m, m.T, atol=1e-12):
        raise ConfigError(f"{name} must be a finite symmetric matrix")
    if np.linalg.eigvalsh(m).min() <= 0:
        raise ConfigError(f"{name} must be positive definite")
    m = m.copy()
    m.setflags(write=False)
    return m


def _check_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be positive, got {value}")


@dataclass(frozen=True, eq=False)
class ControllerGains:
    """
    Gains van één agent.

    ``gamma`` wordt alleen door fixed-novel gebruikt (k̂ adaptatie), ``k`` alleen
    door switching-novel. ``sigma``/``gamma_bar`` zijn alleen actief in de
    robust modes ``sigma`` en ``adaptive-sigma``.
    """

    alpha: float = 1.0
    K: np.ndarray = field(default_factory=lambda: 2.0 * np.eye(2))
    Lambda: np.ndarray = field(default_factory=lambda: 5.0 * np.eye(THETA_SIZE))
    delta: float = 0.2
    gamma: float = 3.0
    k: float = 1.0
    mu: DecayFunction = field(default_factory=DecayFunction)
    robust: str = "standard"
    sigma: float = 0.0
    gamma_bar: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "delta", "gamma", "k"):
            _check_positive(name, getattr(self, name))
        object.__setattr__(self, "K", _check_spd("K", self.K, 2))
        object.__setattr__(self, "Lambda", _check_spd("Lambda", self.Lambda, THETA_SIZE))
        if self.robust not in ROBUST_MODES:
            raise ConfigError(f"unknown robust mode '{self.robust}', expected one of {ROBUST_MODES}")
        if self.robust != "standard":
            _check_positive("sigma", self.sigma)
        if self.robust == "adaptive-sigma":
            _check_positive("gamma_bar", self.gamma_bar)

    @property
    def effective_sigma(self) -> float:
        return self.sigma if self.robust != "standard" else 0.0

    @property
    def effective_gamma_bar(self) -> float:
        return self.gamma_bar if self.robust == "adaptive-sigma" else 0.0


@dataclass(frozen=True, eq=False)
class GainBank:
    """Per-agent gains gestapeld langs de agent-as."""

    alpha: np.ndarray
    K: np.ndarray
    Lambda: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    k: np.ndarray
    sigma: np.ndarray
    gamma_bar: np.ndarray
    mu: Tuple[DecayFunction, ...]

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def mu_at(self, t: float) -> np.ndarray:
        first = self.mu[0]
        if all(m.kind == first.kind for m in self.mu):
            mu = np.full(len(self.mu), first(t))
        else:
            mu = np.array([m(t) for m in self.mu])
        if not np.all(mu > 0):
            raise ConfigError(f"decay function μ(t) must stay positive, got {mu.min()} at t={t}")
        return mu

    def select(self, agents: Sequence[int]) -> "GainBank":
        idx = np.asarray(agents, dtype=int)
        return GainBank(
            alpha=self.alpha[idx], K=self.K[idx], Lambda=self.Lambda[idx], delta=self.delta[idx],
            gamma=self.gamma[idx], k=self.k[idx], sigma=self.sigma[idx], gamma_bar=self.gamma_bar[idx],
            mu=tuple(self.mu[i] for i in idx),
        )


def stack_gains(gains: Sequence[ControllerGains]) -> GainBank:
    if not gains:
        raise ConfigError("at least one set of controller gains is required")
    return GainBank(
        alpha=np.array([g.alpha for g in gains]),
        K=np.stack([g.K for g in gains]),
        Lambda=np.stack([g.Lambda for g in gains]),
        delta=np.array([g.delta for g in gains]),
        gamma=np.array([g.gamma for g in gains]),
        k=np.array([g.k for g in gains]),
        sigma=np.array([g.effective_sigma for g in gains]),
        gamma_bar=np.array([g.effective_gamma_bar for g in gains]),
        mu=tuple(g.mu for g in gains),
    )


# ----------------- State -----------------

@dataclass(frozen=True, eq=False)
class AdaptiveState:
    """
    Adaptieve en hulp-states van m agents. Ongebruikte velden blijven nul.

    theta_hat (m, 5), d_hat (m,), k_hat (m,), d_bar (m,),
    integral_vartheta (m, 2), z (m, 2), zdot (m, 2)
    """

    theta_hat: np.ndarray
    d_hat: np.ndarray
    k_hat: np.ndarray
    d_bar: np.ndarray
    integral_vartheta: np.ndarray
    z: np.ndarray
    zdot: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdaptiveState":
        return cls(
            theta_hat=np.zeros((n, THETA_SIZE)),
            d_hat=np.zeros(n),
            k_hat=np.zeros(n),
            d_bar=np.zeros(n),
            integral_vartheta=np.zeros((n, 2)),
            z=np.zeros((n, 2)),
            zdot=np.zeros((n, 2)),
        )

    @property
    def n(self) -> int:
        return self.d_hat.shape[0]


@dataclass(frozen=True, eq=False)
class ControlOutput:
    tau: np.ndarray
    sliding: np.ndarray
    derivatives: AdaptiveState


# ----------------- Neighbor views -----------------

@dataclass(frozen=True, eq=False)
class NeighborView:
    """
    Wat m agents van hun in-buren weten.

    weights (m, n): actieve a_ij(t) per rij-agent i.
    rel_position (m, n, 2): q_i - q_j, nul waar a_ij = 0.
    """

    weights: np.ndarray
    rel_position: np.ndarray

    @property
    def degree(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def position_coupling(self) -> np.ndarray:
        """Σ_j a_ij (q_i - q_j)."""
        return np.einsum("mn,mnk->mk", self.weights, self.rel_position)


@dataclass(frozen=True, eq=False)
class NeighborVelocityView(NeighborView):
    """View met daarnaast de relatieve snelheden q̇_i - q̇_j."""

    rel_velocity: Optional[np.ndarray] = None

    @property
    def rel_reference(self) -> np.ndarray:
        """w_i - w_j met w = q + q̇."""
        return self.rel_position + self.rel_velocity

    @property
    def velocity_coupling(self) -> np.ndarray:
        return np.einsum("mn,mnk->mk", self.weights, self.rel_velocity)


def _relative(values: np.ndarray, rows: np.ndarray, mask: np.ndarray) -> np.ndarray:
    rel = values[rows][:, None, :] - values[None, :, :]
    return np.where(mask[..., None], rel, 0.0)


def build_view(adjacency: np.ndarray, q: np.ndarray, qdot: Optional[np.ndarray] = None,
               agents: Optional[Sequence[int]] = None) -> NeighborView:
    """
    Bouw de view voor ``agents`` (default: allemaal) uit de globale state.

    Zonder ``qdot`` ontstaat een velocity-free view; informatie van niet-buren
    wordt weggemaskeerd.
    """
    n = adjacency.shape[0]
    rows = np.arange(n) if agents is None else np.asarray(agents, dtype=int)
    weights = np.asarray(adjacency, dtype=float)[rows]
    mask = weights != 0.0
    rel_q = _relative(np.asarray(q, dtype=float), rows, mask)
    if qdot is None:
        return NeighborView(weights=weights, rel_position=rel_q)
    rel_qd = _relative(np.asarray(qdot, dtype=float), rows, mask)
    return NeighborVelocityView(weights=weights, rel_position=rel_q, rel_velocity=rel_qd)


def _require_velocities(view: NeighborView, variant: str) -> NeighborVelocityView:
    if not isinstance(view, NeighborVelocityView):
        raise ContractViolationError(f"controller '{variant}' needs relative velocities in its neighbor view")
    return view


def _forbid_velocities(view: NeighborView, variant: str) -> NeighborView:
    if isinstance(view, NeighborVelocityView):
        raise ContractViolationError(
            f"controller '{variant}' must not receive neighbor velocities (velocity-free information contract)"
        )
    return view


# ----------------- Shared terms -----------------

def sigma_mod_d_update(delta, sigma, gamma_bar, s_norm, mu, d_hat, d_bar):
    """
    Robust gain adaptatie met (adaptive) σ-modification.

        d̂̇ = δ [‖s‖²/(‖s‖+μ) - σ(d̂ - d̄)],   d̄̇ = γ̄ (d̂ - d̄)

    σ = 0 geeft de standaard niet-dalende wet; γ̄ = 0 met d̄ = 0 de gewone σ-modification.
    """
    s_norm = np.asarray(s_norm, dtype=float)
    gap = np.asarray(d_hat, dtype=float) - np.asarray(d_bar, dtype=float)
    d_hat_dot = delta * (s_norm ** 2 / (s_norm + mu) - sigma * gap)
    d_bar_dot = gamma_bar * gap
    return d_hat_dot, d_bar_dot


def _robust(gains: GainBank, adaptive: AdaptiveState, s: np.ndarray, t: float):
    mu = gains.mu_at(t)
    s_norm = np.linalg.norm(s, axis=-1)
    term = (adaptive.d_hat / (s_norm + mu))[:, None] * s
    d_hat_dot, d_bar_dot = sigma_mod_d_update(
        gains.delta, gains.sigma, gains.gamma_bar, s_norm, mu, adaptive.d_hat, adaptive.d_bar
    )
    return term, d_hat_dot, d_bar_dot


def _mat_vec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("mab,mb->ma", m, v)


def _theta_rate(gains: GainBank, y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Θ̂̇ = -Λ Yᵀ s."""
    return -_mat_vec(gains.Lambda, np.einsum("mca,mc->ma", y, s))


def _feedforward(y: np.ndarray, theta_hat: np.ndarray) -> np.ndarray:
    return np.einsum("mab,mb->ma", y, theta_hat)


def _derivatives(adaptive: AdaptiveState, **rates: np.ndarray) -> AdaptiveState:
    m = adaptive.n
    base = {
        "theta_hat": np.zeros((m, THETA_SIZE)),
        "d_hat": np.zeros(m),
        "k_hat": np.zeros(m),
        "d_bar": np.zeros(m),
        "integral_vartheta": np.zeros((m, 2)),
        "z": np.zeros((m, 2)),
        "zdot": np.zeros((m, 2)),
    }
    base.update(rates)
    return AdaptiveState(**base)


Gravity = Union[float, np.ndarray]


# ----------------- Control laws -----------------

def ctrl_baseline_step(gains: GainBank, plant: PlantState, view: NeighborView,
                       adaptive: AdaptiveState, t: float = 0.0, gravity: Gravity = GRAVITY) -> ControlOutput:
    """Certainty-equivalence consensus zonder robust term (alleen voor d = 0)."""
    view = _require_velocities(view, "baseline")
    alpha = gains.alpha[:, None]
    qdot_r = -alpha * view.position_coupling
    qddot_r = -alpha * view.velocity_coupling
    s = plant.qdot - qdot_r

    y = regressor(plant.q, plant.qdot, qddot_r, qdot_r, gravity)
    tau = -_mat_vec(gains.K, s) + _feedforward(y, adaptive.theta_hat)
    return ControlOutput(tau=tau, sliding=s, derivatives=_derivatives(
        adaptive, theta_hat=_theta_rate(gains, y, s),
    ))


def ctrl_fixed_step(gains: GainBank, plant: PlantState, view: NeighborView,
                    adaptive: AdaptiveState, t: float = 0.0, gravity: Gravity = GRAVITY) -> ControlOutput:
    """
    Fixed graph, met relatieve snelheden.

    ϑ = q̇ + αΣa(q_i - q_j), s = ϑ + ∫ϑ, q̇_r = -αΣa(q_i - q_j) - ∫ϑ, q̈_r = -αΣa(q̇_i - q̇_j) - ϑ
    """
    view = _require_velocities(view, "fixed")
    alpha = gains.alpha[:, None]
    coupling = alpha * view.position_coupling
    vartheta = plant.qdot + coupling
    s = vartheta + adaptive.integral_vartheta
    qdot_r = -coupling - adaptive.integral_vartheta
    qddot_r = -alpha * view.velocity_coupling - vartheta

    y = regressor(plant.q, plant.qdot, qddot_r, qdot_r, gravity)
    robust, d_hat_dot, d_bar_dot = _robust(gains, adaptive, s, t)
    tau = -_mat_vec(gains.K, s) + _feedforward(y, adaptive.theta_hat) - robust
    return ControlOutput(tau=tau, sliding=s, derivatives=_derivatives(
        adaptive,
        theta_hat=_theta_rate(gains, y, s),
        d_hat=d_hat_dot,
        d_bar=d_bar_dot,
        integral_vartheta=vartheta,
    ))


def ctrl_fixed_novel_step(gains: GainBank, plant: PlantState, view: NeighborView,
                          adaptive: AdaptiveState, t: float = 0.0, gravity: Gravity = GRAVITY) -> ControlOutput:
    """Fixed graph zonder snelheden van buren; adaptieve feedback gain k̂."""
    view = _forbid_velocities(view, "fixed-novel")
    coupling = gains.alpha[:, None] * view.position_coupling
    vartheta = plant.qdot + coupling
    s = vartheta + adaptive.integral_vartheta
    qdot_r = -coupling - adaptive.integral_vartheta

    y = regressor(plant.q, plant.qdot, np.zeros_like(qdot_r), qdot_r, gravity)
    robust, d_hat_dot, d_bar_dot = _robust(gains, adaptive, s, t)
    tau = -adaptive.k_hat[:, None] * s + _feedforward(y, adaptive.theta_hat) - robust
    return ControlOutput(tau=tau, sliding=s, derivatives=_derivatives(
        adaptive,
        theta_hat=_theta_rate(gains, y, s),
        k_hat=gains.gamma * np.einsum("mk,mk->m", s, s),
        d_hat=d_hat_dot,
        d_bar=d_bar_dot,
        integral_vartheta=vartheta,
    ))


def ctrl_switching_step(gains: GainBank, plant: PlantState, view: NeighborView,
                        adaptive: AdaptiveState, t: float = 0.0, gravity: Gravity = GRAVITY) -> ControlOutput:
    """
    Model reference variant voor switching graphs.

    ż = -αΣa(t)(w_i - w_j), w = q̇ + q, e = w - z. De regressor gebruikt
    (ż - q̇, z - q) zodat M ė + C e = τ - d - YΘ exact klopt; er komt geen q̈_r
    aan te pas, dus de wet blijft goed gedefinieerd bij een switch.
    """
    view = _require_velocities(view, "switching")
    zdot = -gains.alpha[:, None] * np.einsum("mn,mnk->mk", view.weights, view.rel_reference)
    e = plant.qdot + plant.q - adaptive.z

    y = regressor(plant.q, plant.qdot, zdot - plant.qdot, adaptive.z - plant.q, gravity)
    robust, d_hat_dot, d_bar_dot = _robust(gains, adaptive, e, t)
    tau = -_mat_vec(gains.K, e) + _feedforward(y, adaptive.theta_hat) - robust
    return ControlOutput(tau=tau, sliding=e, derivatives=_derivatives(
        adaptive,
        theta_hat=_theta_rate(gains, y, e),
        d_hat=d_hat_dot,
        d_bar=d_bar_dot,
        z=zdot,
    ))


def reference_acceleration(gains: GainBank, plant: PlantState, view: NeighborView) -> np.ndarray:
    """z̈ = -Σa(t)(q_i - q_j) - (Σa(t)/k + k) q̇."""
    return -view.position_coupling - (view.degree / gains.k + gains.k)[:, None] * plant.qdot


def ctrl_switching_novel_step(gains: GainBank, plant: PlantState, view: NeighborView,
                              adaptive: AdaptiveState, t: float = 0.0, gravity: Gravity = GRAVITY) -> ControlOutput:
    """Switching graphs zonder snelheden van buren: tweede-orde reference model (z, ż)."""
    view = _forbid_velocities(view, "switching-novel")
    zddot = reference_acceleration(gains, plant, view)
    e = plant.q - adaptive.z
    e_dot = plant.qdot - adaptive.zdot
    w = e_dot + e

    y = regressor(plant.q, plant.qdot, zddot - e_dot, adaptive.zdot - e, gravity)
    robust, d_hat_dot, d_bar_dot = _robust(gains, adaptive, w, t)
    tau = -_mat_vec(gains.K, w) + _feedforward(y, adaptive.theta_hat) - robust
    return ControlOutput(tau=tau, sliding=w, derivatives=_derivatives(
        adaptive,
        theta_hat=_theta_rate(gains, y, w),
        d_hat=d_hat_dot,
        d_bar=d_bar_dot,
        z=adaptive.zdot,
        zdot=zddot,
    ))


# ----------------- Registry -----------------

StepFn = Callable[..., ControlOutput]


@dataclass(frozen=True)
class ControllerVariant:
    name: str
    description: str
    step: StepFn
    uses_relative_velocity: bool
    switching: bool
    robust: bool

    def view(self, adjacency: np.ndarray, q: np.ndarray, qdot: np.ndarray,
             agents: Optional[Sequence[int]] = None) -> NeighborView:
        return build_view(adjacency, q, qdot if self.uses_relative_velocity else None, agents)


CONTROLLER_VARIANTS: Dict[str, ControllerVariant] = {
    "baseline": ControllerVariant(
        name="baseline",
        description="Sliding variable with neighbor velocities, no disturbance rejection.",
        step=ctrl_baseline_step,
        uses_relative_velocity=True,
        switching=False,
        robust=False,
    ),
    "fixed": ControllerVariant(
        name="fixed",
        description="Integral sliding variable plus adaptive robust term, fixed graph.",
        step=ctrl_fixed_step,
        uses_relative_velocity=True,
        switching=False,
        robust=True,
    ),
    "fixed-novel": ControllerVariant(
        name="fixed-novel",
        description="Fixed graph without neighbor velocities, adaptive feedback gain.",
        step=ctrl_fixed_novel_step,
        uses_relative_velocity=False,
        switching=False,
        robust=True,
    ),
    "switching": ControllerVariant(
        name="switching",
        description="First-order reference model driven by neighbor positions and velocities.",
        step=ctrl_switching_step,
        uses_relative_velocity=True,
        switching=True,
        robust=True,
    ),
    "switching-novel": ControllerVariant(
        name="switching-novel",
        description="Second-order reference model driven by neighbor positions only.",
        step=ctrl_switching_novel_step,
        uses_relative_velocity=False,
        switching=True,
        robust=True,
    ),
}


def get_variant(name: str) -> ControllerVariant:
    try:
        return CONTROLLER_VARIANTS[name]
    except KeyError:
        raise ConfigError(
            f"unknown controller '{name}', expected one of {sorted(CONTROLLER_VARIANTS)}"
        ) from None
