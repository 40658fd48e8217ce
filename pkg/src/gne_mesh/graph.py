"""Weighted undirected communication graphs and their Laplacians."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CONNECTIVITY_TOL = 1e-9


class GraphError(ValueError):
    """Malformed edge list (self-loop, duplicate edge, bad index or weight)."""


class DisconnectedGraphError(GraphError):
    """Raised when an operation needs a connected graph and gets one that is not."""


@dataclass(frozen=True)
class SpectralSummary:
    s2: float
    sN: float
    d_star: float


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Undirected weighted graph over agents ``0..N-1``.

    ``weights`` is the symmetric adjacency matrix W with zero diagonal.
    Degrees, the Laplacian ``L = Deg - W`` and the sorted neighbour lists
    are derived once at construction.
    """

    weights: np.ndarray
    degrees: np.ndarray = field(init=False)
    laplacian: np.ndarray = field(init=False)
    neighbors: tuple[tuple[int, ...], ...] = field(init=False)
    connected: bool = field(init=False)

    def __post_init__(self) -> None:
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise GraphError(f"weights must be square, got shape {W.shape}")
        if not np.array_equal(W, W.T):
            raise GraphError("weights must be symmetric")
        if np.any(np.diag(W) != 0.0):
            raise GraphError("self-loops are not allowed")
        if np.any(W < 0.0):
            raise GraphError("edge weights must be non-negative")
        W.setflags(write=False)
        deg = W.sum(axis=1)
        L = np.diag(deg) - W
        deg.setflags(write=False)
        L.setflags(write=False)
        nbrs = tuple(tuple(int(j) for j in np.flatnonzero(W[i])) for i in range(W.shape[0]))
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "degrees", deg)
        object.__setattr__(self, "laplacian", L)
        object.__setattr__(self, "neighbors", nbrs)
        object.__setattr__(self, "connected", _is_connected(nbrs))

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    def edges(self) -> list[tuple[int, int, float]]:
        """Undirected edges ``(i, j, w)`` with ``i < j``, in lexicographic order."""
        N = self.n_agents
        return [
            (i, j, float(self.weights[i, j]))
            for i in range(N)
            for j in range(i + 1, N)
            if self.weights[i, j] != 0.0
        ]


def _is_connected(neighbors: Sequence[Sequence[int]]) -> bool:
    N = len(neighbors)
    if N == 0:
        return False
    seen = {0}
    stack = [0]
    while stack:
        for j in neighbors[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == N


def build_graph(n_agents: int, weighted_edges: Iterable[Sequence[float]]) -> CommGraph:
    """Assemble a :class:`CommGraph` from an undirected edge list.

    Parameters
    ----------
    n_agents : int
        Number of agents N; nodes are numbered ``0..N-1``.
    weighted_edges : iterable
        Items ``(i, j)`` or ``(i, j, w)``. Each undirected pair must appear
        once; the weight defaults to 1.0.

    Connectivity is not enforced here, it is recorded in ``graph.connected``
    and checked by :func:`spectral_summary`.
    """
    if n_agents < 1:
        raise GraphError("n_agents must be positive")
    W = np.zeros((n_agents, n_agents))
    for edge in weighted_edges:
        if len(edge) == 2:
            i, j = edge
            w = 1.0
        elif len(edge) == 3:
            i, j, w = edge
        else:
            raise GraphError(f"edge must be (i, j) or (i, j, w), got {edge!r}")
        if int(i) != i or int(j) != j:
            raise GraphError(f"node indices must be integers, got {edge!r}")
        i, j, w = int(i), int(j), float(w)
        if not (0 <= i < n_agents and 0 <= j < n_agents):
            raise GraphError(f"edge {edge!r} out of range for {n_agents} agents")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        if not w > 0.0 or not np.isfinite(w):
            raise GraphError(f"edge weight must be positive and finite, got {w}")
        if W[i, j] != 0.0:
            raise GraphError(f"duplicate edge ({i}, {j})")
        W[i, j] = W[j, i] = w
    return CommGraph(W)


def spectral_summary(g: CommGraph) -> SpectralSummary:
    """Second-smallest and largest Laplacian eigenvalues plus max degree."""
    eig = np.linalg.eigvalsh(g.laplacian)
    s2 = float(eig[1]) if g.n_agents > 1 else 0.0
    if g.n_agents > 1 and s2 <= CONNECTIVITY_TOL:
        raise DisconnectedGraphError(f"graph is not connected (s2 = {s2:.3e})")
    if g.n_agents == 1:
        raise DisconnectedGraphError("a single agent has no spectral gap")
    sN = float(eig[-1])
    d_star = float(g.degrees.max())
    # d* <= sN <= 2 d* for any undirected graph
    assert d_star - 1e-9 * max(1.0, d_star) <= sN <= 2.0 * d_star + 1e-9 * max(1.0, d_star)
    return SpectralSummary(s2=s2, sN=sN, d_star=d_star)


def kron_laplacian(g: CommGraph, block_dim: int) -> np.ndarray:
    """Return ``L kron I_block_dim``."""
    if block_dim < 1:
        raise ValueError("block_dim must be >= 1")
    return np.kron(g.laplacian, np.eye(block_dim))


# -- built-in topologies ---------------------------------------------------

# Benchmark topology for the 20-firm scenario: a 20-ring plus two chords
# (2-15 and 6-13 in 1-based labels).
FIG2_EDGES_1BASED = [(k, k + 1) for k in range(1, 20)] + [(1, 20), (2, 15), (6, 13)]


def fig2_graph() -> CommGraph:
    return build_graph(20, [(i - 1, j - 1) for i, j in FIG2_EDGES_1BASED])


def ring_graph(n_agents: int, weight: float = 1.0) -> CommGraph:
    if n_agents == 1:
        return build_graph(1, [])
    if n_agents == 2:
        return build_graph(2, [(0, 1, weight)])
    return build_graph(n_agents, [(i, (i + 1) % n_agents, weight) for i in range(n_agents)])


def path_graph(n_agents: int, weight: float = 1.0) -> CommGraph:
    return build_graph(n_agents, [(i, i + 1, weight) for i in range(n_agents - 1)])


def random_connected_graph(
    n_agents: int,
    rng: np.random.Generator,
    extra_edge_prob: float = 0.3,
    weight_range: tuple[float, float] | None = None,
) -> CommGraph:
    """Random spanning tree plus independent extra edges.

    With ``weight_range`` unset every weight is 1.
    """
    order = rng.permutation(n_agents)
    pairs = set()
    for k in range(1, n_agents):
        parent = order[rng.integers(0, k)]
        a, b = sorted((int(order[k]), int(parent)))
        pairs.add((a, b))
    for i in range(n_agents):
        for j in range(i + 1, n_agents):
            if (i, j) not in pairs and rng.random() < extra_edge_prob:
                pairs.add((i, j))
    edges = []
    for i, j in sorted(pairs):
        w = 1.0 if weight_range is None else float(rng.uniform(*weight_range))
        edges.append((i, j, w))
    return build_graph(n_agents, edges)


BUILTIN_GRAPHS = {"fig2": fig2_graph}


# -- edge-list files -------------------------------------------------------
#
# Text format: first non-comment line is N, then one "i j w" line per
# undirected edge. Nodes are labelled 1..N in files. JSON format:
# {"n_agents": N, "edges": [[i, j, w], ...]} with the same 1-based labels.


def graph_to_text(g: CommGraph) -> str:
    lines = [f"{g.n_agents}"]
    lines += [f"{i + 1} {j + 1} {w!r}" for i, j, w in g.edges()]
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> CommGraph:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise GraphError("empty graph file")
    lineno, head = rows[0]
    if len(head) != 1:
        raise GraphError(f"line {lineno}: expected agent count, got {' '.join(head)!r}")
    n_agents = int(head[0])
    edges = []
    for lineno, parts in rows[1:]:
        if len(parts) not in (2, 3):
            raise GraphError(f"line {lineno}: expected 'i j [w]'")
        try:
            i, j = int(parts[0]) - 1, int(parts[1]) - 1
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError as exc:
            raise GraphError(f"line {lineno}: {exc}") from None
        edges.append((i, j, w))
    return build_graph(n_agents, edges)


def graph_to_json(g: CommGraph) -> dict:
    return {"n_agents": g.n_agents, "edges": [[i + 1, j + 1, w] for i, j, w in g.edges()]}


def graph_from_json(doc: dict) -> CommGraph:
    return build_graph(
        int(doc["n_agents"]), [(e[0] - 1, e[1] - 1, *e[2:]) for e in doc["edges"]]
    )


def load_graph(path: str | Path) -> CommGraph:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return graph_from_json(json.loads(text))
    return graph_from_text(text)


def save_graph(g: CommGraph, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(graph_to_json(g), indent=2) + "\n", encoding="utf-8")
    else:
        path.write_text(graph_to_text(g), encoding="utf-8")
