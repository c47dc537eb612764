"""Weighted-graph metric-measure substrate.

A :class:`WeightedGraph` is an undirected graph with edge lengths (the
metric), edge conductances (the Dirichlet form), per-vertex measures and
boundary marks.  All higher-level geometry in this package is built on top
of exact shortest-path distances and the conductance Laplacian defined
here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

__all__ = [
    "WeightedGraph",
    "Ball",
    "LaplacianOperator",
    "conductances_from_data",
    "shortest_distances",
    "ball",
    "graph_laplacian",
    "lattice_ball",
    "graph_to_json",
    "graph_from_json",
]

#: default bound on the per-vertex max/min incident edge length ratio
DEFAULT_QUASI_UNIFORMITY = 4.0


@dataclass(frozen=True)
class WeightedGraph:
    """Immutable weighted graph carrying a metric-measure structure.

    positions        (n, d) coordinates in the model parameterization
    edges            (m, 2) vertex index pairs, each undirected edge once
    lengths          (m,) strictly positive edge lengths
    conductances     (m,) strictly positive edge conductances
    vertex_measure   (n,) strictly positive vertex measures
    boundary         (n,) bool, True on the outer truncation shell
    """

    positions: np.ndarray
    edges: np.ndarray
    lengths: np.ndarray
    conductances: np.ndarray
    vertex_measure: np.ndarray
    boundary: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.int64))
        object.__setattr__(self, "lengths", np.asarray(self.lengths, dtype=float))
        object.__setattr__(self, "conductances", np.asarray(self.conductances, dtype=float))
        object.__setattr__(self, "vertex_measure", np.asarray(self.vertex_measure, dtype=float))
        object.__setattr__(self, "boundary", np.asarray(self.boundary, dtype=bool))
        if np.any(self.lengths <= 0) or np.any(self.conductances <= 0):
            raise ValueError("edge lengths and conductances must be strictly positive")
        if np.any(self.vertex_measure <= 0):
            raise ValueError("vertex measures must be strictly positive")

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def edge_csr(self, values: np.ndarray) -> sp.csr_matrix:
        """Symmetric sparse matrix with ``values`` on both edge orientations."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        n = self.n_vertices
        mat = sp.coo_matrix(
            (np.concatenate([values, values]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(n, n),
        )
        return mat.tocsr()

    def length_matrix(self) -> sp.csr_matrix:
        key = "length_csr"
        if key not in self._cache:
            self._cache[key] = self.edge_csr(self.lengths)
        return self._cache[key]

    def degrees(self) -> np.ndarray:
        key = "degrees"
        if key not in self._cache:
            adj = self.edge_csr(np.ones(self.n_edges))
            self._cache[key] = np.asarray(adj.sum(axis=1)).ravel().astype(int)
        return self._cache[key]

    def incident_length_ratio(self) -> np.ndarray:
        """Per-vertex ratio of max to min incident edge length."""
        n = self.n_vertices
        lo = np.full(n, np.inf)
        hi = np.zeros(n)
        for col in (0, 1):
            idx = self.edges[:, col]
            np.minimum.at(lo, idx, self.lengths)
            np.maximum.at(hi, idx, self.lengths)
        return hi / lo

    def validate(self, quasi_uniformity: float | None = DEFAULT_QUASI_UNIFORMITY) -> None:
        """Check connectivity and (optionally) quasi-uniformity.

        Product-type spaces mix the scales of their factors and are
        validated per factor instead; pass ``quasi_uniformity=None`` there.
        """
        n_comp, _ = sp.csgraph.connected_components(self.length_matrix(), directed=False)
        if n_comp != 1:
            raise ValueError(f"graph is not connected ({n_comp} components)")
        if quasi_uniformity is not None:
            ratio = self.incident_length_ratio()
            worst = float(ratio.max())
            if worst > quasi_uniformity * (1 + 1e-12):
                raise ValueError(
                    f"quasi-uniformity violated: worst incident length ratio {worst:.3f} "
                    f"> {quasi_uniformity}"
                )


@dataclass(frozen=True)
class Ball:
    """Geodesic ball: all vertices within ``radius`` of ``center``.

    ``kind`` is 'anchored' (center is the basepoint), 'remote'
    (radius <= c * rho(center)) or 'general'.
    """

    center: int
    radius: float
    members: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")

    @property
    def n_members(self) -> int:
        return len(self.members)


def conductances_from_data(lengths: np.ndarray, measure_u: np.ndarray, measure_v: np.ndarray) -> np.ndarray:
    """Default conductance convention c_uv = (m_u + m_v) / (2 len^2).

    On quasi-uniform graphs this makes the Dirichlet form scale like the
    continuum energy integral, which is all the downstream two-sided
    estimates use.
    """
    return (measure_u + measure_v) / (2.0 * lengths**2)


def shortest_distances(g: WeightedGraph, sources) -> np.ndarray:
    """Exact single- or multi-source shortest-path distances.

    Returns shape (n,) for a scalar source, (len(sources), n) otherwise.
    Unreachable vertices get ``inf`` (signals multi-end misuse).
    """
    scalar = np.isscalar(sources)
    idx = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    dist = _csgraph_dijkstra(g.length_matrix(), directed=False, indices=idx)
    return dist[0] if scalar else dist


def ball(
    g: WeightedGraph,
    center: int,
    r: float,
    dist: np.ndarray | None = None,
    basepoint: int | None = None,
    rho: np.ndarray | None = None,
    remote_c: float = 0.125,
) -> Ball:
    """Geodesic ball around ``center``; pass a precomputed ``dist`` row to
    avoid repeating the Dijkstra sweep."""
    if r < 0:
        raise ValueError("ball radius must be nonnegative")
    if dist is None:
        dist = shortest_distances(g, center)
    members = np.flatnonzero(dist <= r + 1e-12)
    kind = "general"
    if basepoint is not None and center == basepoint:
        kind = "anchored"
    elif rho is not None and r <= remote_c * rho[center] + 1e-12:
        kind = "remote"
    return Ball(center=center, radius=float(r), members=members, kind=kind)


class LaplacianOperator:
    """Positive graph Laplacian (Delta f)(u) = (1/m_u) sum_v c_uv (f_u - f_v).

    ``matrix_sym`` is the symmetric conductance form L (so Delta = M^{-1} L);
    the operator is self-adjoint in the measure-weighted inner product and
    positive semidefinite, with constants in its kernel when no Dirichlet
    rows are imposed.
    """

    def __init__(self, graph: WeightedGraph, measure: np.ndarray):
        measure = np.asarray(measure, dtype=float)
        if np.any(measure <= 0):
            raise ValueError("measure must be strictly positive")
        self.graph = graph
        self.measure = measure
        c = graph.conductances
        adj = graph.edge_csr(c)
        deg = np.asarray(adj.sum(axis=1)).ravel()
        self.matrix_sym = (sp.diags(deg) - adj).tocsr()

    def apply(self, f: np.ndarray) -> np.ndarray:
        return (self.matrix_sym @ f) / self.measure

    def matrix(self) -> sp.csr_matrix:
        """Non-symmetric matrix M^{-1} L of the operator itself."""
        return sp.diags(1.0 / self.measure) @ self.matrix_sym

    def dirichlet_form(self, f: np.ndarray, h: np.ndarray | None = None) -> float:
        h = f if h is None else h
        return float(f @ (self.matrix_sym @ h))


def graph_laplacian(g: WeightedGraph, measure: np.ndarray | None = None) -> LaplacianOperator:
    if measure is None:
        measure = g.vertex_measure
    return LaplacianOperator(g, measure)


def lattice_ball(dim: int, radius: int, norm: str = "euclidean") -> WeightedGraph:
    """Unit lattice Z^dim intersected with a ball of the given radius.

    Unit lengths, unit measures, conductance 1; the outermost lattice layer
    (vertices with a missing neighbor) is flagged as boundary.
    """
    rng = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    pts = np.stack([a.ravel() for a in grids], axis=1)
    if norm == "euclidean":
        keep = (pts**2).sum(axis=1) <= radius**2
    elif norm == "linf":
        keep = np.abs(pts).max(axis=1) <= radius
    else:
        raise ValueError(f"unknown norm {norm!r}")
    pts = pts[keep]
    side = 2 * radius + 1
    flat = (pts + radius) @ np.array([side**i for i in range(dim - 1, -1, -1)])
    order = np.argsort(flat)
    flat_sorted = flat[order]

    edge_blocks = []
    for axis in range(dim):
        step = side ** (dim - 1 - axis)
        src = np.flatnonzero(pts[:, axis] + 1 <= radius)
        target = flat[src] + step
        pos = np.searchsorted(flat_sorted, target)
        pos = np.clip(pos, 0, len(flat_sorted) - 1)
        hit = flat_sorted[pos] == target
        edge_blocks.append(np.stack([src[hit], order[pos[hit]]], axis=1))
    edges = np.concatenate(edge_blocks).astype(np.int64)

    n = len(pts)
    deg = np.zeros(n, dtype=int)
    np.add.at(deg, edges[:, 0], 1)
    np.add.at(deg, edges[:, 1], 1)
    boundary = deg < 2 * dim

    return WeightedGraph(
        positions=pts.astype(float),
        edges=edges,
        lengths=np.ones(len(edges)),
        conductances=np.ones(len(edges)),
        vertex_measure=np.ones(n),
        boundary=boundary,
    )


# ---------------------------------------------------------------------------
# JSON serialization (round-trip lossless: floats stored via repr)

def graph_to_json(g: WeightedGraph) -> str:
    doc = {
        "vertices": [
            {
                "id": int(i),
                "pos": [float(x) for x in g.positions[i]],
                "measure": float(g.vertex_measure[i]),
                "boundary": bool(g.boundary[i]),
            }
            for i in range(g.n_vertices)
        ],
        "edges": [
            {
                "u": int(g.edges[i, 0]),
                "v": int(g.edges[i, 1]),
                "length": float(g.lengths[i]),
                "conductance": float(g.conductances[i]),
            }
            for i in range(g.n_edges)
        ],
    }
    return json.dumps(doc)


def graph_from_json(text: str) -> WeightedGraph:
    doc = json.loads(text)
    verts = sorted(doc["vertices"], key=lambda d: d["id"])
    edges = doc["edges"]
    return WeightedGraph(
        positions=np.array([d["pos"] for d in verts]),
        edges=np.array([[e["u"], e["v"]] for e in edges], dtype=np.int64),
        lengths=np.array([e["length"] for e in edges]),
        conductances=np.array([e["conductance"] for e in edges]),
        vertex_measure=np.array([d["measure"] for d in verts]),
        boundary=np.array([d["boundary"] for d in verts], dtype=bool),
    )
