"""
Exception hierarchy voor de consensus simulator.

Elke exception draagt zijn eigen CLI exit code, zodat ``cli.py`` alleen
``ConsensusError`` hoeft af te vangen:

    0 = success, 1 = validatie/config/graph fout, 2 = divergentie, 3 = acceptatie gefaald
"""

from __future__ import annotations

from typing import Optional


class ConsensusError(Exception):
    """Base class voor alle fouten van deze package."""

    exit_code: int = 1


# ----------------- Graphs -----------------

class GraphError(ConsensusError, ValueError):
    """Ongeldige graaf of een graaf die niet aan een structurele eis voldoet."""


class NoSpanningTreeError(GraphError):
    """De graaf bevat geen directed spanning tree (null vector / root SCC niet uniek)."""


class NotStronglyConnectedError(GraphError):
    pass


class NotZMatrixError(GraphError):
    """Matrix heeft positieve off-diagonal entries."""


class SingularMMatrixError(GraphError):
    """Z-matrix waarvan niet alle eigenwaarden een positief reëel deel hebben."""


class MMatrixCertificateError(GraphError):
    """Geen diagonale gewichten gevonden die de PD certificate halen."""


class ScheduleLookupError(GraphError):
    """Tijdstip buiten het gedefinieerde bereik van een switching schedule."""


# ----------------- Config / contracts -----------------

class ConfigError(ConsensusError, ValueError):
    pass


class UnknownPresetError(ConfigError):
    pass


class ContractViolationError(ConsensusError):
    """Een controller kreeg informatie die hij volgens zijn informatiecontract niet mag zien."""


# ----------------- Runtime -----------------

class NonFiniteStateError(ConsensusError, ValueError):
    exit_code = 2


class DivergenceError(ConsensusError):
    """Simulatie afgebroken: niet-eindige of te grote state."""

    exit_code = 2

    def __init__(self, message: str, t: Optional[float] = None, agent: Optional[int] = None):
        super().__init__(message)
        self.t = t
        self.agent = agent


class AcceptanceError(ConsensusError):
    exit_code = 3
