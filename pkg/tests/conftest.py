"""Gedeelde fixtures: preset constanten en random graaf generators (alleen voor tests)."""

from __future__ import annotations

import numpy as np
import pytest

from dynamics import ArmParameters
from graphs import DirectedGraphSpec, build_laplacian, graph_from_edges
from scenario import PRESET_EDGES, SWITCH_EDGES_A, SWITCH_EDGES_B


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def preset_arm() -> ArmParameters:
    return ArmParameters(m1=1.0, m2=0.8, l1=0.8, l2=0.6, lc1=0.4, lc2=0.3, j1=0.0533, j2=0.024)


@pytest.fixture
def preset_graph() -> DirectedGraphSpec:
    return graph_from_edges(6, PRESET_EDGES)


@pytest.fixture
def switch_graphs():
    return graph_from_edges(6, SWITCH_EDGES_A), graph_from_edges(6, SWITCH_EDGES_B)


def _spanning_tree_adjacency(rng: np.random.Generator, n: int, extra_p: float) -> np.ndarray:
    order = rng.permutation(n)
    a = np.zeros((n, n))
    for k in range(1, n):
        child = order[k]
        parent = order[rng.integers(0, k)]
        a[child, parent] = rng.uniform(0.5, 1.5)
    extra = (rng.random((n, n)) < extra_p) & (a == 0)
    np.fill_diagonal(extra, False)
    a[extra] = rng.uniform(0.5, 1.5, size=int(extra.sum()))
    return a


@pytest.fixture
def random_spanning_tree_graph(rng):
    """Factory: random gewogen digraph die gegarandeerd een directed spanning tree bevat."""
    def make(n: int, extra_p: float = 0.2) -> DirectedGraphSpec:
        return build_laplacian(_spanning_tree_adjacency(rng, n, extra_p))
    return make


@pytest.fixture
def random_digraph(rng):
    """Factory: Erdős-Rényi digraph met random gewichten (spanning tree niet gegarandeerd)."""
    def make(n: int, p: float = 0.3) -> DirectedGraphSpec:
        mask = rng.random((n, n)) < p
        np.fill_diagonal(mask, False)
        a = np.where(mask, rng.uniform(0.5, 1.5, size=(n, n)), 0.0)
        return build_laplacian(a)
    return make


@pytest.fixture
def random_m_matrix(rng):
    """Factory: nonsingular M-matrix sI - B met B >= 0 en s > ρ(B)."""
    def make(n: int) -> np.ndarray:
        b = rng.uniform(0.0, 1.0, size=(n, n)) * (rng.random((n, n)) < 0.6)
        np.fill_diagonal(b, 0.0)
        rho = float(np.max(np.abs(np.linalg.eigvals(b)))) if n > 1 else 0.0
        return (rho + rng.uniform(0.05, 1.0)) * np.eye(n) - b
    return make
