"""
Directed graph utilities voor leaderless consensus.

Bevat de Laplacian, spanning-tree detectie (SCC condensatie, met een spectrale
cross-check), de genormaliseerde linker null vector ξ, de Q-transformatie,
M-matrix gewichten, de Frobenius (root-first) ordening en switching schedules.

Conventie: ``adjacency[i, j] = a_ij > 0`` betekent dat agent ``j`` een neighbor
is van agent ``i`` (edge j -> i, informatie stroomt van j naar i).

Alle waarden zijn immutable na constructie (numpy arrays read-only).
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import linalg

from errors import (
    GraphError,
    MMatrixCertificateError,
    NoSpanningTreeError,
    NotStronglyConnectedError,
    NotZMatrixError,
    ScheduleLookupError,
    SingularMMatrixError,
)

logger = logging.getLogger(__name__)

# Relatieve tolerantie voor "positief reëel deel" beslissingen (n <= ~50, double precision)
EIG_TOL = float(os.getenv("CONSENSUS_EIG_TOL", "1e-9"))
# Tolerantie bij het vergelijken van tijden met switch instants
TIME_EPS = 1e-9


def _frozen(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def _tol(matrix: np.ndarray) -> float:
    return EIG_TOL * max(1.0, float(np.linalg.norm(matrix)))


# ----------------- Types -----------------

@dataclass(frozen=True)
class DirectedGraphSpec:
    """Gewogen directed graph: adjacency plus afgeleide Laplacian."""

    n: int
    adjacency: np.ndarray
    laplacian: np.ndarray

    def edges(self) -> List[Tuple[int, int, float]]:
        """Edges als (j, i, a_ij) triples, 0-based."""
        rows, cols = np.nonzero(self.adjacency)
        return [(int(j), int(i), float(self.adjacency[i, j])) for i, j in zip(rows, cols)]

    def neighbors(self, i: int) -> List[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def to_digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n))
        for j, i, w in self.edges():
            g.add_edge(j, i, weight=w)
        return g

    def subgraph(self, nodes: Sequence[int]) -> "DirectedGraphSpec":
        idx = list(nodes)
        return build_laplacian(self.adjacency[np.ix_(idx, idx)])


@dataclass(frozen=True)
class LeftNullVector:
    xi: np.ndarray

    def __post_init__(self):
        if abs(float(self.xi.sum()) - 1.0) > 1e-9 or np.any(self.xi < 0):
            raise GraphError("xi must be nonnegative and sum to 1")

    @property
    def roots(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.xi > 0)]


@dataclass(frozen=True)
class QTransform:
    n: int
    q: np.ndarray


@dataclass(frozen=True)
class FrobeniusOrdering:
    """Root-first node ordering; ``laplacian`` is de gepermuteerde Laplacian."""

    permutation: Tuple[int, ...]
    r1: int
    laplacian: np.ndarray

    @property
    def roots(self) -> List[int]:
        return sorted(self.permutation[: self.r1])

    @property
    def l11(self) -> np.ndarray:
        return self.laplacian[: self.r1, : self.r1]

    @property
    def l21(self) -> np.ndarray:
        return self.laplacian[self.r1:, : self.r1]

    @property
    def l22(self) -> np.ndarray:
        return self.laplacian[self.r1:, self.r1:]


# ----------------- Construction -----------------

def build_laplacian(adjacency: Any) -> DirectedGraphSpec:
    """
    Bouw een DirectedGraphSpec uit een n x n adjacency matrix.

    Raises:
        GraphError: niet vierkant, niet eindig, self edges of negatieve gewichten.
    """
    a = np.array(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise GraphError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GraphError("adjacency contains non-finite weights")
    if np.any(np.diag(a) != 0.0):
        raise GraphError("self edges (i, i) are not allowed: adjacency diagonal must be zero")
    if np.any(a < 0.0):
        raise GraphError("edge weights must be nonnegative")

    lap = -a
    np.fill_diagonal(lap, a.sum(axis=1))
    return DirectedGraphSpec(n=a.shape[0], adjacency=_frozen(a), laplacian=_frozen(lap))


def graph_from_edges(n: int, edges: Sequence[Sequence[float]], one_based: bool = True) -> DirectedGraphSpec:
    """Edges als (j, i, a_ij) triples: agent j is neighbor van agent i."""
    a = np.zeros((n, n))
    offset = 1 if one_based else 0
    for edge in edges:
        if len(edge) != 3:
            raise GraphError(f"edge must be a (from, to, weight) triple, got {edge!r}")
        j, i, w = int(edge[0]) - offset, int(edge[1]) - offset, float(edge[2])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge {tuple(edge)} references an agent outside 1..{n}")
        a[i, j] = w
    return build_laplacian(a)


def graph_to_dict(g: DirectedGraphSpec) -> Dict[str, Any]:
    """Structured form ``{"n": .., "edges": [[j, i, a_ij], ...]}``, agents genummerd vanaf 1."""
    return {"n": g.n, "edges": [[j + 1, i + 1, w] for j, i, w in g.edges()]}


def graph_from_dict(data: Dict[str, Any]) -> DirectedGraphSpec:
    try:
        return graph_from_edges(int(data["n"]), data.get("edges", []))
    except KeyError as e:
        raise GraphError(f"graph document misses field {e}") from e


def union_graph(graphs: Sequence[DirectedGraphSpec]) -> DirectedGraphSpec:
    """Edge-union; gewicht = max van de gewichten over de grafen."""
    if not graphs:
        raise GraphError("union of zero graphs")
    if len({g.n for g in graphs}) != 1:
        raise GraphError("graphs in a union must share n")
    return build_laplacian(np.maximum.reduce([g.adjacency for g in graphs]))


# ----------------- Structure -----------------

def _source_components(g: DirectedGraphSpec) -> List[List[int]]:
    cond = nx.condensation(g.to_digraph())
    return [
        sorted(cond.nodes[c]["members"])
        for c in cond.nodes
        if cond.in_degree(c) == 0
    ]


def contains_spanning_tree(g: DirectedGraphSpec) -> bool:
    """True iff precies één source SCC in de condensatie (die bereikt dan alle nodes)."""
    if g.n == 1:
        return True
    return len(_source_components(g)) == 1


def spectral_spanning_tree(g: DirectedGraphSpec) -> bool:
    """Spectrale variant: simpele nul-eigenwaarde, overige eigenwaarden Re > tol."""
    eig = np.linalg.eigvals(g.laplacian)
    tol = _tol(g.laplacian)
    zero = np.abs(eig) <= tol
    return int(zero.sum()) == 1 and bool(np.all(eig[~zero].real > tol))


def root_set(g: DirectedGraphSpec) -> List[int]:
    """Agents met een directed path naar alle andere agents (de root SCC)."""
    sources = _source_components(g)
    if len(sources) != 1:
        raise NoSpanningTreeError(
            f"graph has {len(sources)} source components; no directed spanning tree"
        )
    return sources[0]


def is_strongly_connected(g: DirectedGraphSpec) -> bool:
    if g.n == 1:
        return True
    return nx.is_strongly_connected(g.to_digraph())


def left_null_vector(g: DirectedGraphSpec) -> LeftNullVector:
    """
    ξ met ξᵀL = 0, Σξ = 1, ξ >= 0.

    Alleen de root SCC draagt gewicht; ξ wordt berekend als null space van L11ᵀ
    (SVD) en daarna teken-genormaliseerd. Entries van non-root agents zijn exact 0.

    Raises:
        NoSpanningTreeError: de null space is dan niet één-dimensionaal.
    """
    roots = root_set(g)
    xi = np.zeros(g.n)
    if len(roots) == 1:
        xi[roots[0]] = 1.0
    else:
        l11 = g.laplacian[np.ix_(roots, roots)]
        basis = linalg.null_space(l11.T)
        if basis.shape[1] != 1:
            raise NoSpanningTreeError(f"left null space has dimension {basis.shape[1]}")
        v = basis[:, 0]
        v = v / v.sum()
        if np.any(v <= 0):
            raise GraphError("root block null vector is not strictly positive")
        xi[roots] = v

    residual = float(np.linalg.norm(xi @ g.laplacian))
    if residual > 1e-10 * max(1.0, float(np.linalg.norm(g.laplacian))):
        logger.warning(f"[Graphs] left null vector residual {residual:.3e}")
    return LeftNullVector(xi=_frozen(xi))


def q_transform(n: int) -> QTransform:
    """(n-1) x n matrix Q met Q1 = 0, QQᵀ = I, QᵀQ = I - 11ᵀ/n."""
    if n < 2:
        raise GraphError(f"q_transform needs n >= 2, got {n}")
    v = (n - math.sqrt(n)) / (n * (n - 1))
    q = np.full((n - 1, n), -v)
    q[:, 0] = -1.0 + (n - 1) * v
    q[np.arange(n - 1), np.arange(1, n)] = 1.0 - v
    return QTransform(n=n, q=_frozen(q))


def q_spectrum_check(g: DirectedGraphSpec, alpha: Any) -> bool:
    """True iff alle eigenwaarden van QΔLQᵀ een positief reëel deel hebben."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.shape != (g.n,) or np.any(alpha <= 0):
        raise GraphError("alpha must be a positive n-vector")
    if g.n == 1:
        return True
    q = q_transform(g.n).q
    m = q @ np.diag(alpha) @ g.laplacian @ q.T
    return bool(np.all(np.linalg.eigvals(m).real > _tol(m)))


def connectivity_measure(g: DirectedGraphSpec, varsigma: Optional[Any] = None) -> float:
    """
    a(B) = min ϑᵀBϑ over ϑᵀς = 0, ‖ϑ‖ = 1 met B = ΞL + LᵀΞ.

    Berekend als kleinste eigenwaarde van B geprojecteerd op het orthogonaal
    complement van ς. Default ς = ξ.
    """
    if not is_strongly_connected(g):
        raise NotStronglyConnectedError("connectivity_measure requires a strongly connected graph")
    if g.n < 2:
        raise GraphError("connectivity_measure needs n >= 2")
    xi = left_null_vector(g).xi
    varsigma = xi if varsigma is None else np.asarray(varsigma, dtype=float).reshape(-1)
    if varsigma.shape != (g.n,) or np.any(varsigma <= 0):
        raise GraphError("varsigma must be a positive n-vector")

    big_xi = np.diag(xi)
    b = big_xi @ g.laplacian + g.laplacian.T @ big_xi
    p = linalg.null_space(varsigma[None, :])
    return float(linalg.eigvalsh(p.T @ b @ p).min())


def _pd_certificate(w: np.ndarray, a: np.ndarray) -> bool:
    b = np.diag(w) @ a + a.T @ np.diag(w)
    return float(linalg.eigvalsh(0.5 * (b + b.T)).min()) > 1e-9 * max(1.0, float(np.linalg.norm(a)))


def m_matrix_weights(a: Any) -> np.ndarray:
    """
    Positieve diagonale gewichten w zodat diag(w)A + Aᵀdiag(w) PD is.

    Kandidaat w_i = y_i / x_i met x = A⁻¹1, y = A⁻ᵀ1; faalt de eigenwaarde
    certificate dan volgt een lijn-zoektocht richting w = 1.

    Raises:
        NotZMatrixError: positieve off-diagonal entry.
        SingularMMatrixError: niet alle eigenwaarden Re > 0.
        MMatrixCertificateError: geen kandidaat haalt de certificate.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"expected a square matrix, got shape {a.shape}")
    off = a - np.diag(np.diag(a))
    if np.any(off > 0):
        raise NotZMatrixError("matrix is not in Z_n (positive off-diagonal entry)")
    if np.any(np.linalg.eigvals(a).real <= _tol(a)):
        raise SingularMMatrixError("matrix is not a nonsingular M-matrix")

    ones = np.ones(a.shape[0])
    x = np.linalg.solve(a, ones)
    y = np.linalg.solve(a.T, ones)

    base = y / x if np.all(x > 0) and np.all(y > 0) else ones
    candidates = [base] + [(1.0 - t) * base + t * ones for t in np.linspace(0.05, 1.0, 20)]
    for w in candidates:
        if np.all(w > 0) and _pd_certificate(w, a):
            return _frozen(w)
    raise MMatrixCertificateError("no diagonal weights passed the positive definiteness certificate")


def frobenius_reorder(g: DirectedGraphSpec) -> FrobeniusOrdering:
    """
    Permutatie die de root SCC vooraan zet: L = [[L11, 0], [L21, L22]].

    L11 (r1 x r1) is sterk samenhangend, L22 een nonsingular M-matrix.
    """
    roots = root_set(g)
    cond = nx.condensation(g.to_digraph())
    order = nx.lexicographical_topological_sort(cond, key=lambda c: min(cond.nodes[c]["members"]))
    permutation: List[int] = []
    for comp in order:
        permutation.extend(sorted(cond.nodes[comp]["members"]))
    if sorted(permutation[: len(roots)]) != roots:
        raise GraphError("root component is not first in the topological order")

    r1 = len(roots)
    lap = g.laplacian[np.ix_(permutation, permutation)]
    if np.any(lap[:r1, r1:] != 0.0):
        raise GraphError("permuted Laplacian has a non-zero upper-right block")
    if r1 < g.n:
        l22 = lap[r1:, r1:]
        if np.any(np.linalg.eigvals(l22).real <= _tol(l22)):
            raise SingularMMatrixError("L22 block is not a nonsingular M-matrix")
    return FrobeniusOrdering(permutation=tuple(permutation), r1=r1, laplacian=_frozen(lap))


# ----------------- Switching -----------------

@dataclass(frozen=True)
class SwitchingSchedule:
    """
    Piecewise-constant sequence van grafen; right-continuous.

    Niet-cyclische schedules zijn gedefinieerd op [0, Σ dwell].
    """

    graphs: Tuple[DirectedGraphSpec, ...]
    dwell_times: Tuple[float, ...]
    t_d: float
    cyclic: bool = True
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(self, "dwell_times", tuple(float(d) for d in self.dwell_times))
        if not self.graphs:
            raise GraphError("schedule needs at least one graph")
        if len(self.graphs) != len(self.dwell_times):
            raise GraphError("one dwell time per graph segment required")
        if not self.t_d > 0:
            raise GraphError("minimum dwell time t_D must be positive")
        if any(not math.isfinite(d) or d < self.t_d - 1e-12 for d in self.dwell_times):
            raise GraphError(f"every dwell time must be finite and >= t_D = {self.t_d}")
        if len({g.n for g in self.graphs}) != 1:
            raise GraphError("all graphs of a schedule must share n")
        starts = np.concatenate([[0.0], np.cumsum(self.dwell_times)[:-1]])
        object.__setattr__(self, "_starts", _frozen(starts))

    @classmethod
    def fixed(cls, g: DirectedGraphSpec) -> "SwitchingSchedule":
        return cls(graphs=(g,), dwell_times=(1.0,), t_d=1.0, cyclic=True)

    @property
    def n(self) -> int:
        return self.graphs[0].n

    @property
    def period(self) -> float:
        return float(sum(self.dwell_times))

    @property
    def is_fixed(self) -> bool:
        return len(self.graphs) == 1

    def segment_index(self, t: float) -> int:
        if t < -TIME_EPS:
            raise ScheduleLookupError(f"t = {t} lies before the start of the schedule")
        period = self.period
        if self.cyclic:
            cycles = math.floor((t + TIME_EPS) / period)
            tau = max(t - cycles * period, 0.0)
        else:
            if t > period + TIME_EPS:
                raise ScheduleLookupError(f"t = {t} lies beyond the schedule end {period}")
            tau = t
        idx = int(np.searchsorted(self._starts, tau + TIME_EPS, side="right")) - 1
        return min(max(idx, 0), len(self.graphs) - 1)

    def graph_at(self, t: float) -> DirectedGraphSpec:
        return self.graphs[self.segment_index(t)]

    def switch_times(self, t_end: float) -> List[float]:
        """Instants in (0, t_end] waarop de actieve graaf wisselt."""
        if len(self.graphs) == 1:
            return []
        times: List[float] = []
        offset = 0.0
        while True:
            for start in self._starts:
                t = offset + float(start)
                if t > t_end + TIME_EPS:
                    return times
                if t > TIME_EPS:
                    times.append(t)
            if not self.cyclic:
                return times
            offset += self.period

    def union(self) -> DirectedGraphSpec:
        return union_graph(self.graphs)


def uniformly_jointly_connected(s: SwitchingSchedule, window: float) -> bool:
    """
    Check of de timeline op te delen is in aaneengesloten intervallen van lengte
    <= window waarvan de union graph een spanning tree bevat.

    Intervallen bestaan uit hele opeenvolgende segmenten. Een segment langer dan
    window is alleen toegestaan als zijn eigen graaf een spanning tree heeft.

    De partitie is greedy en begint op t = 0: elk interval sluit bij het eerste
    segment waarmee de union een spanning tree krijgt, en het volgende interval
    start direct daarna. Dit is geen worst-case check over alle vensters
    [t, t + window]; een schedule kan hier slagen terwijl een venster dat midden
    in een segment begint geen spanning tree ziet. Cyclische schedules zijn
    klaar zodra een interval weer op een eerder gebruikt startsegment begint;
    een niet-cyclische schedule moet tot en met zijn laatste segment gedekt zijn.
    """
    if not window > 0:
        raise GraphError("window must be positive")
    count = len(s.graphs)
    has_tree = [contains_spanning_tree(g) for g in s.graphs]

    def cover(k: int) -> Optional[int]:
        first = k % count
        if s.dwell_times[first] > window + TIME_EPS:
            return k + 1 if has_tree[first] else None
        adjacency = np.zeros((s.n, s.n))
        length = 0.0
        m = k
        while True:
            if not s.cyclic and m >= count:
                return None
            if s.cyclic and m - k >= count:
                # een volle periode zonder spanning tree in de union
                return None
            seg = m % count
            if length + s.dwell_times[seg] > window + TIME_EPS:
                return None
            length += s.dwell_times[seg]
            adjacency = np.maximum(adjacency, s.graphs[seg].adjacency)
            if contains_spanning_tree(build_laplacian(adjacency)):
                return m + 1
            m += 1

    k = 0
    seen = set()
    while True:
        if s.cyclic:
            if k % count in seen:
                return True
            seen.add(k % count)
        elif k >= count:
            return True
        nxt = cover(k)
        if nxt is None:
            logger.debug(f"[Graphs] no spanning-tree union within window {window} from segment {k % count}")
            return False
        k = nxt
