"""
Euler-Lagrange plant: planaire two-link revolute arm.

    M(q)q̈ + C(q, q̇)q̇ + g(q) + d(t) = τ

Standaard model met Christoffel-symbool Coriolis matrix en de lineaire
parametrisatie Θ = (m1·lc1² + m2·l1² + J1, m2·lc2² + J2, m2·l1·lc2, m1·lc1 + m2·l1, m2·lc2).
Hoeken worden gemeten vanaf de horizontaal (cosinus-vorm voor de gravitatie).

Alle functies broadcasten over leidende assen: ``q`` mag (2,) zijn voor één arm
of (n, 2) voor een bank van n armen (``ArmBank``), zodat de simulator alle agents
in één keer kan evalueren.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigError, NonFiniteStateError

logger = logging.getLogger(__name__)

GRAVITY = float(os.getenv("CONSENSUS_GRAVITY", "9.81"))
THETA_SIZE = 5


# ----------------- Parameters -----------------

def lumped_parameters(m1: float, m2: float, l1: float, lc1: float, lc2: float,
                      j1: float, j2: float) -> np.ndarray:
    return np.array([
        m1 * lc1 ** 2 + m2 * l1 ** 2 + j1,
        m2 * lc2 ** 2 + j2,
        m2 * l1 * lc2,
        m1 * lc1 + m2 * l1,
        m2 * lc2,
    ])


@dataclass(frozen=True)
class ArmParameters:
    """Fysische constanten van één two-link arm (SI units)."""

    m1: float
    m2: float
    l1: float
    l2: float
    lc1: float
    lc2: float
    j1: float
    j2: float
    gravity: float = GRAVITY
    theta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        physical = {
            "m1": self.m1, "m2": self.m2, "l1": self.l1, "l2": self.l2,
            "lc1": self.lc1, "lc2": self.lc2, "j1": self.j1, "j2": self.j2,
        }
        for name, value in physical.items():
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"arm parameter {name} must be positive, got {value}")
        if self.lc1 > self.l1 or self.lc2 > self.l2:
            raise ConfigError("center-of-mass distance cannot exceed the link length")
        if not (math.isfinite(self.gravity) and self.gravity >= 0):
            raise ConfigError(f"gravity must be nonnegative, got {self.gravity}")
        theta = lumped_parameters(self.m1, self.m2, self.l1, self.lc1, self.lc2, self.j1, self.j2)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class ArmBank:
    """Gestapelde parameters van n armen: theta (n, 5), gravity (n,)."""

    theta: np.ndarray
    gravity: np.ndarray

    @property
    def n(self) -> int:
        return self.theta.shape[0]


def stack_arms(arms: Sequence[ArmParameters]) -> ArmBank:
    theta = np.stack([a.theta for a in arms])
    gravity = np.array([a.gravity for a in arms], dtype=float)
    theta.setflags(write=False)
    gravity.setflags(write=False)
    return ArmBank(theta=theta, gravity=gravity)


Plant = Union[ArmParameters, ArmBank]


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qdot: np.ndarray

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot)))


@dataclass(frozen=True)
class DisturbanceModel:
    """
    d_i(t) = amplitude · sin(frequency_scale · i · t) op beide joints, plus een
    optionele begrensde waveform. ``bound`` (d_max) wordt nooit aan controllers gegeven.
    """

    amplitude: float = 0.2
    frequency_scale: float = 0.02
    waveform: Optional[Callable[[float], np.ndarray]] = field(default=None, compare=False)
    waveform_bound: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.amplitude) and self.amplitude >= 0):
            raise ConfigError(f"disturbance amplitude must be nonnegative, got {self.amplitude}")
        if not math.isfinite(self.frequency_scale):
            raise ConfigError("disturbance frequency_scale must be finite")
        if self.waveform is not None and not self.waveform_bound > 0:
            raise ConfigError("a custom disturbance waveform needs a positive waveform_bound")

    @property
    def bound(self) -> float:
        return self.amplitude * math.sqrt(2.0) + self.waveform_bound

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0 and self.waveform is None

    def __call__(self, t: float, agent: int) -> np.ndarray:
        """``agent`` is de 1-based agent index i."""
        value = self.amplitude * math.sin(self.frequency_scale * agent * t)
        d = np.array([value, value])
        if self.waveform is not None:
            extra = np.asarray(self.waveform(t), dtype=float).reshape(2)
            if float(np.linalg.norm(extra)) > self.waveform_bound + 1e-12:
                raise ConfigError(f"disturbance waveform exceeds its declared bound at t={t}")
            d = d + extra
        return d


# ----------------- Kernels -----------------

def _split(theta: np.ndarray) -> Tuple[np.ndarray, ...]:
    return tuple(theta[..., k] for k in range(THETA_SIZE))


def _matrix(a11, a12, a21, a22) -> np.ndarray:
    a11, a12, a21, a22 = np.broadcast_arrays(a11, a12, a21, a22)
    return np.stack([np.stack([a11, a12], axis=-1), np.stack([a21, a22], axis=-1)], axis=-2)


def mass_matrix(p: Plant, q: np.ndarray) -> np.ndarray:
    """M(q), symmetrisch PD; hangt alleen af van cos q2."""
    q = np.asarray(q, dtype=float)
    t1, t2, t3, _, _ = _split(p.theta)
    c2 = np.cos(q[..., 1])
    m12 = t2 + t3 * c2
    return _matrix(t1 + t2 + 2.0 * t3 * c2, m12, m12, t2)


def coriolis_matrix(p: Plant, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Christoffel constructie: Ṁ - 2C is skew symmetric."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    h = p.theta[..., 2] * np.sin(q[..., 1])
    qd1, qd2 = qdot[..., 0], qdot[..., 1]
    return _matrix(-h * qd2, -h * (qd1 + qd2), h * qd1, 0.0 * h)


def gravity_vector(p: Plant, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    _, _, _, t4, t5 = _split(p.theta)
    c1 = np.cos(q[..., 0])
    c12 = np.cos(q[..., 0] + q[..., 1])
    g1 = p.gravity * (t4 * c1 + t5 * c12)
    g2 = p.gravity * t5 * c12
    g1, g2 = np.broadcast_arrays(g1, g2)
    return np.stack([g1, g2], axis=-1)


def regressor(q: np.ndarray, qdot: np.ndarray, x: np.ndarray, y: np.ndarray,
              gravity: Union[float, np.ndarray] = GRAVITY) -> np.ndarray:
    """
    Y(q, q̇, x, y) met Y·Θ = M(q)x + C(q, q̇)y + g(q).

    x vermenigvuldigt de inertie, y de Coriolis matrix. Resultaat (..., 2, 5).
    """
    q, qdot, x, y = (np.asarray(v, dtype=float) for v in (q, qdot, x, y))
    c2, s2 = np.cos(q[..., 1]), np.sin(q[..., 1])
    c1 = np.cos(q[..., 0])
    c12 = np.cos(q[..., 0] + q[..., 1])
    qd1, qd2 = qdot[..., 0], qdot[..., 1]
    x1, x2 = x[..., 0], x[..., 1]
    y1, y2 = y[..., 0], y[..., 1]
    g = np.asarray(gravity, dtype=float)

    shape = np.broadcast_shapes(q.shape[:-1], qdot.shape[:-1], x.shape[:-1], y.shape[:-1], g.shape)
    out = np.zeros(shape + (2, THETA_SIZE))
    out[..., 0, 0] = x1
    out[..., 0, 1] = x1 + x2
    out[..., 0, 2] = c2 * (2.0 * x1 + x2) - s2 * (qd2 * y1 + (qd1 + qd2) * y2)
    out[..., 0, 3] = g * c1
    out[..., 0, 4] = g * c12
    out[..., 1, 1] = x1 + x2
    out[..., 1, 2] = c2 * x1 + s2 * qd1 * y1
    out[..., 1, 4] = g * c12
    return out


def _check_finite(**arrays: np.ndarray) -> None:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteStateError(f"non-finite {name} passed to the plant model")


def forward_dynamics(p: Plant, state: PlantState, tau: np.ndarray, d: np.ndarray) -> np.ndarray:
    """q̈ = M⁻¹(τ - Cq̇ - g - d) met een directe 2x2 solve."""
    tau = np.asarray(tau, dtype=float)
    d = np.asarray(d, dtype=float)
    _check_finite(q=state.q, qdot=state.qdot, tau=tau, d=d)

    # componentsgewijs, zonder M en C als matrices op te bouwen
    t1, t2, t3, t4, t5 = _split(p.theta)
    q = np.asarray(state.q, dtype=float)
    qdot = np.asarray(state.qdot, dtype=float)
    q1, q2 = q[..., 0], q[..., 1]
    qd1, qd2 = qdot[..., 0], qdot[..., 1]
    c2 = np.cos(q2)
    c12 = np.cos(q1 + q2)
    h = t3 * np.sin(q2)
    m11 = t1 + t2 + 2.0 * t3 * c2
    m12 = t2 + t3 * c2
    r1 = tau[..., 0] + h * (qd2 * qd1 + (qd1 + qd2) * qd2) - p.gravity * (t4 * np.cos(q1) + t5 * c12) - d[..., 0]
    r2 = tau[..., 1] - h * qd1 * qd1 - p.gravity * t5 * c12 - d[..., 1]

    det = m11 * t2 - m12 * m12
    out = np.empty(np.broadcast_shapes(np.shape(r1), np.shape(r2)) + (2,))
    out[..., 0] = (t2 * r1 - m12 * r2) / det
    out[..., 1] = (m11 * r2 - m12 * r1) / det
    return out


def inverse_dynamics(p: Plant, state: PlantState, qddot: np.ndarray, d: np.ndarray) -> np.ndarray:
    """τ = Mq̈ + Cq̇ + g + d."""
    y = regressor(state.q, state.qdot, qddot, state.qdot, p.gravity)
    return np.einsum("...ij,...j->...i", y, p.theta) + np.asarray(d, dtype=float)


def kinetic_energy(p: Plant, state: PlantState) -> np.ndarray:
    m = mass_matrix(p, state.q)
    return 0.5 * np.einsum("...i,...ij,...j->...", state.qdot, m, state.qdot)


# ----------------- Model bounds -----------------

def inertia_bounds(p: ArmParameters) -> Tuple[float, float]:
    """
    (k_m_low, k_m_high). M is affien in cos q2, dus λmax is convex en λmin concaaf
    in cos q2: de extremen liggen op cos q2 = ±1.
    """
    eig = np.concatenate([
        np.linalg.eigvalsh(mass_matrix(p, np.array([0.0, 0.0]))),
        np.linalg.eigvalsh(mass_matrix(p, np.array([0.0, math.pi]))),
    ])
    return float(eig.min()), float(eig.max())


def coriolis_bound(p: ArmParameters) -> float:
    """k_C met ‖C(q, y)‖ <= k_C ‖y‖ (Frobenius norm bound √3·θ3)."""
    return math.sqrt(3.0) * float(p.theta[2])


def gravity_bound(p: ArmParameters, norm: str = "2") -> float:
    t4, t5 = float(p.theta[3]), float(p.theta[4])
    if norm == "max":
        return p.gravity * (t4 + t5)
    return p.gravity * math.hypot(t4 + t5, t5)
