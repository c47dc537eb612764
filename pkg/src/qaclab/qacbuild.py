"""Builders for discrete iterated-cone (QAC-type) spaces.

A :class:`QacSpace` is a weighted graph together with a radial function
``rho``, a vector of weight functions ``w`` taking values in (0, 1], piece
labels, end labels and the dimension bookkeeping needed by the volume and
Green-function estimates.

Supported constructions:

* ``build_compact_base`` -- unit-scale compact cross-sections (circles,
  tori, cube-sphere graphs);
* ``build_ac_space`` -- a cone over a compact cross-section with
  geometrically spaced radial shells (depth 0);
* ``build_product`` -- product of two depth-0 spaces (depth 1);
* ``build_qac`` -- recipe-driven recursion, including single-stratum cone
  bundles with a lower-depth fiber;
* ``build_two_ended`` -- two cones glued over a common cap (for the
  multi-end parametrix checks).

The weight recursion on a cone-bundle piece is
``w_k = rho_fiber / rho``, ``w_i = w_k * w_i^fiber`` for ``i < k``, clamped
at 1 on the conic bulk; piece labels are assigned by which weights sit
strictly below 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphgeom import (
    WeightedGraph,
    Ball,
    ball as _ball,
    conductances_from_data,
    shortest_distances,
)

__all__ = [
    "WeightParams",
    "QacSpace",
    "RemoteChain",
    "build_compact_base",
    "build_ac_space",
    "build_lattice_cone",
    "build_product",
    "build_qac",
    "build_two_ended",
    "remote_chain",
    "place_probe",
]

#: weights clamp to 1 once the fiber radius exceeds this fraction of rho
W_CLAMP = 0.5

DEFAULT_REMOTE_C = 0.125
DEFAULT_ETA = 0.5


@dataclass(frozen=True)
class WeightParams:
    """Weight exponents (a, b) plus the dimension bookkeeping.

    ``dims`` is (m_0, ..., m_{k-1}, n): fiber dimensions of the strata in
    increasing depth followed by the total dimension.
    """

    a: float
    b: tuple[float, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if len(self.b) != self.depth:
            raise ValueError("b must have one entry per depth level")

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def n(self) -> int:
        return self.dims[-1]

    @property
    def m(self) -> tuple[int, ...]:
        return self.dims[:-1]

    @property
    def nu(self) -> tuple[float, ...]:
        m = self.m
        return tuple(m[0] if j == 0 else m[j] - m[j - 1] for j in range(len(m)))

    def b_prefix(self, ell: int) -> tuple[float, ...]:
        return self.b[:ell]

    def b_abs(self, ell: int) -> float:
        """|b(ell)| = b_1 + ... + b_ell, with |b(0)| = 0."""
        return float(sum(self.b[:ell]))

    def nu_abs(self, j: int) -> float:
        """|nu(j)|, which equals m_{j-1} by construction."""
        return float(sum(self.nu[:j]))


@dataclass
class QacSpace:
    """Discrete model of an iterated-cone space of the given depth."""

    graph: WeightedGraph
    depth: int
    basepoint: int
    rho: np.ndarray
    w: np.ndarray  # (n_vertices, depth), empty second axis at depth 0
    piece: np.ndarray  # labels in {0..depth}
    dims: tuple[int, ...]
    ends: np.ndarray
    truncation_radius: float
    remote_c: float = DEFAULT_REMOTE_C
    eta: float = DEFAULT_ETA
    #: per-vertex fiber radius rho_{j-1}(z_{j-1}) for vertices on piece >= 1
    fiber_rho: np.ndarray | None = None
    _dist_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.dims[-1]

    @property
    def n_vertices(self) -> int:
        return self.graph.n_vertices

    def distances_from(self, source: int) -> np.ndarray:
        if source not in self._dist_cache:
            if len(self._dist_cache) > 64:
                self._dist_cache.clear()
            self._dist_cache[source] = shortest_distances(self.graph, source)
        return self._dist_cache[source]

    def ball(self, center: int, r: float) -> Ball:
        return _ball(
            self.graph,
            center,
            r,
            dist=self.distances_from(center),
            basepoint=self.basepoint,
            rho=self.rho,
            remote_c=self.remote_c,
        )

    def params(self, a: float, b=()) -> WeightParams:
        b = tuple(b)
        if len(b) != self.depth:
            raise ValueError(f"need {self.depth} fiber exponents, got {len(b)}")
        return WeightParams(a=a, b=b, dims=self.dims)

    def check_invariants(self, monotone_const: float = 4.0) -> None:
        """Re-derive the piece labels from the weights and check eq-level
        consistency of the stored structure."""
        w = self.w
        if w.shape != (self.n_vertices, self.depth):
            raise AssertionError("weight array shape mismatch")
        if np.any(w <= 0) or np.any(w > 1 + 1e-12):
            raise AssertionError("weights must lie in (0, 1]")
        # monotone chain w_1 <= C w_2 <= ... and the 'once 1, stays 1' rule
        for i in range(self.depth - 1):
            if np.any(w[:, i] > monotone_const * w[:, i + 1]):
                raise AssertionError(f"weight chain w_{i+1} <= C w_{i+2} violated")
            bad = (w[:, i + 1] < 1 - 1e-12) & (w[:, i] >= 1 - 1e-12)
            if np.any(bad):
                raise AssertionError("w_l = 1 must force w_i = 1 for i >= l")
        piece = derive_piece_labels(w)
        if np.any(piece != self.piece):
            raise AssertionError("piece labels inconsistent with weights")
        if self.piece[self.basepoint] != 0:
            raise AssertionError("basepoint must lie on piece 0")
        rho_cap = self.rho.min()
        if self.rho[self.basepoint] > rho_cap + 1e-12:
            raise AssertionError("rho must attain its minimum on the cap")
        if self.rho.max() > self.truncation_radius * (1 + 1e-9):
            raise AssertionError("rho exceeds the truncation radius")


@dataclass(frozen=True)
class RemoteChain:
    """Chain of strata indices j_1 > ... > j_s a point is close to, with the
    radius-band edges c * w_{j_l}(p) * rho(p) used by the sharp volume and
    Green estimates."""

    vertex: int
    indices: tuple[int, ...]
    fiber_rho: tuple[float, ...]

    @property
    def length(self) -> int:
        return len(self.indices)

    def band_edges(self, z: QacSpace, c: float | None = None) -> np.ndarray:
        """Radii separating the bands: [c*rho, c*w_{j_1}*rho, ..., 0]."""
        c = z.remote_c if c is None else c
        p = self.vertex
        rho = z.rho[p]
        vals = [c * rho]
        for j in self.indices:
            vals.append(c * z.w[p, j - 1] * rho)
        vals.append(0.0)
        return np.array(vals)


def derive_piece_labels(w: np.ndarray) -> np.ndarray:
    """piece(z) = largest j with w_j < 1 (0 when all weights are 1)."""
    n, k = w.shape
    piece = np.zeros(n, dtype=np.int64)
    for j in range(1, k + 1):
        piece[w[:, j - 1] < 1 - 1e-12] = j
    return piece


# ---------------------------------------------------------------------------
# compact bases


def build_compact_base(descriptor: dict) -> WeightedGraph:
    kind = descriptor.get("type")
    res = int(descriptor.get("resolution", 16))
    dim = int(descriptor.get("dimension", 1))
    if res < 3:
        raise ValueError("resolution must be >= 3")
    if kind == "sphere_graph":
        if dim == 1:
            return _circle_graph(res)
        if dim == 2:
            return _cube_sphere_graph(res)
        raise ValueError("sphere_graph supports dimension 1 or 2")
    if kind == "torus_graph":
        return _torus_graph(res, dim)
    raise ValueError(f"unsupported compact base type {kind!r}")


def _circle_graph(res: int) -> WeightedGraph:
    theta = 2 * np.pi * np.arange(res) / res
    step = 2 * np.pi / res
    pos = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    edges = np.stack([np.arange(res), (np.arange(res) + 1) % res], axis=1)
    measure = np.full(res, step)
    lengths = np.full(res, step)
    return WeightedGraph(
        positions=pos,
        edges=edges,
        lengths=lengths,
        conductances=conductances_from_data(lengths, measure[edges[:, 0]], measure[edges[:, 1]]),
        vertex_measure=measure,
        boundary=np.zeros(res, dtype=bool),
    )


def _torus_graph(res: int, dim: int) -> WeightedGraph:
    step = 2 * np.pi / res
    axes = [np.arange(res)] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([a.ravel() for a in grids], axis=1)
    n = len(coords)
    flat = coords @ np.array([res**i for i in range(dim - 1, -1, -1)])
    lookup = np.empty(res**dim, dtype=np.int64)
    lookup[flat] = np.arange(n)
    blocks = []
    for axis in range(dim):
        nb = coords.copy()
        nb[:, axis] = (nb[:, axis] + 1) % res
        j = lookup[nb @ np.array([res**i for i in range(dim - 1, -1, -1)])]
        blocks.append(np.stack([np.arange(n), j], axis=1))
    edges = np.concatenate(blocks)
    measure = np.full(n, step**dim)
    lengths = np.full(len(edges), step)
    return WeightedGraph(
        positions=coords * step,
        edges=edges,
        lengths=lengths,
        conductances=conductances_from_data(lengths, measure[edges[:, 0]], measure[edges[:, 1]]),
        vertex_measure=measure,
        boundary=np.zeros(n, dtype=bool),
    )


def _cube_sphere_graph(res: int) -> WeightedGraph:
    """Unit 2-sphere discretized by projecting the 6 faces of a cube grid.

    Quasi-uniform within a modest factor; vertex measures follow the local
    spherical cell areas so the total measure tracks 4*pi.
    """
    # grid points on each face, excluding the overlapping seams by hashing
    # projected coordinates on the sphere.
    u = np.linspace(-1, 1, res + 1)
    pts = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            a, bgrid = np.meshgrid(u, u, indexing="ij")
            face = np.zeros((res + 1, res + 1, 3))
            face[..., axis] = sign
            face[..., (axis + 1) % 3] = a
            face[..., (axis + 2) % 3] = bgrid
            pts.append(face.reshape(-1, 3))
    pts = np.concatenate(pts)
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    # deduplicate seam vertices
    key = np.round(pts * 1e8).astype(np.int64)
    _, uniq_idx, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    verts = pts[uniq_idx]
    n = len(verts)

    edge_set = set()
    side = res + 1
    for f in range(6):
        base = f * side * side
        idx = inverse[base : base + side * side].reshape(side, side)
        for (du, dv) in ((1, 0), (0, 1)):
            a = idx[: side - du, : side - dv].ravel()
            b = idx[du:, dv:].ravel()
            for x, y in zip(a, b):
                if x != y:
                    edge_set.add((min(x, y), max(x, y)))
    edges = np.array(sorted(edge_set), dtype=np.int64)
    chords = np.linalg.norm(verts[edges[:, 0]] - verts[edges[:, 1]], axis=1)
    lengths = 2 * np.arcsin(np.clip(chords / 2, 0, 1))

    measure = np.zeros(n)
    # distribute the sphere area by mean incident edge length squared
    acc = np.zeros(n)
    cnt = np.zeros(n)
    for col in (0, 1):
        np.add.at(acc, edges[:, col], lengths**2)
        np.add.at(cnt, edges[:, col], 1.0)
    cell = acc / cnt
    measure = cell * (4 * np.pi / cell.sum())
    return WeightedGraph(
        positions=verts,
        edges=edges,
        lengths=lengths,
        conductances=conductances_from_data(lengths, measure[edges[:, 0]], measure[edges[:, 1]]),
        vertex_measure=measure,
        boundary=np.zeros(n, dtype=bool),
    )


# ---------------------------------------------------------------------------
# depth 0: cones over compact cross-sections


def shell_radii(r_max: float, h: float) -> np.ndarray:
    """Geometric shell radii (1+h)^i from 1 up to (at least) r_max."""
    n_shells = int(np.ceil(np.log(r_max) / np.log1p(h))) + 1
    radii = (1 + h) ** np.arange(n_shells)
    return radii


def build_ac_space(
    cross_section: WeightedGraph,
    r_max: float,
    cap_style: str = "cone_point_smoothing",
    remote_c: float = DEFAULT_REMOTE_C,
) -> QacSpace:
    """Cone over a compact cross-section with geometrically spaced shells.

    The shell ratio h matches the mean cross-section edge length so that
    radial and angular edge lengths stay comparable (quasi-uniformity in
    the cone metric); the cap is a single apex vertex at rho = 1.
    """
    if r_max < 4:
        raise ValueError("r_max must be >= 4 to exhibit cone asymptotics")
    if cap_style != "cone_point_smoothing":
        raise ValueError(f"unsupported cap style {cap_style!r}")
    cs = cross_section
    ny = cs.n_vertices
    h = float(np.mean(cs.lengths))
    radii = shell_radii(r_max, h)
    n_shells = len(radii)
    n = 1 + n_shells * ny  # apex + shells
    dim_cs = _cross_section_dim(cs)
    ndim = dim_cs + 1

    def vid(i, y):
        return 1 + i * ny + y

    # shell thicknesses for the measure
    thick = np.empty(n_shells)
    thick[1:-1] = (radii[2:] - radii[:-2]) / 2
    thick[0] = radii[1] - radii[0]
    thick[-1] = radii[-1] - radii[-2]

    rho = np.empty(n)
    measure = np.empty(n)
    positions = np.zeros((n, cs.positions.shape[1] + 1))
    rho[0] = 1.0
    measure[0] = float(cs.vertex_measure.sum()) / ndim  # unit-ball cap volume
    for i in range(n_shells):
        sl = slice(vid(i, 0), vid(i, ny - 1) + 1)
        rho[sl] = radii[i]
        measure[sl] = radii[i] ** (ndim - 1) * thick[i] * cs.vertex_measure
        positions[sl, 0] = radii[i]
        positions[sl, 1:] = cs.positions

    blocks = []
    lengths = []
    # angular edges within each shell
    for i in range(n_shells):
        e = cs.edges + vid(i, 0)
        blocks.append(e)
        lengths.append(radii[i] * cs.lengths)
    # radial edges between consecutive shells
    for i in range(n_shells - 1):
        a = np.arange(ny) + vid(i, 0)
        blocks.append(np.stack([a, a + ny], axis=1))
        lengths.append(np.full(ny, radii[i + 1] - radii[i]))
    # cap: apex to every shell-0 vertex
    blocks.append(np.stack([np.zeros(ny, dtype=np.int64), np.arange(ny) + vid(0, 0)], axis=1))
    lengths.append(np.full(ny, 1.0))

    edges = np.concatenate(blocks)
    lengths = np.concatenate(lengths)
    boundary = np.zeros(n, dtype=bool)
    boundary[vid(n_shells - 1, 0) :] = True

    graph = WeightedGraph(
        positions=positions,
        edges=edges,
        lengths=lengths,
        conductances=conductances_from_data(lengths, measure[edges[:, 0]], measure[edges[:, 1]]),
        vertex_measure=measure,
        boundary=boundary,
    )
    return QacSpace(
        graph=graph,
        depth=0,
        basepoint=0,
        rho=rho,
        w=np.empty((n, 0)),
        piece=np.zeros(n, dtype=np.int64),
        dims=(ndim,),
        ends=np.zeros(n, dtype=np.int64),
        truncation_radius=float(radii[-1]),
        remote_c=remote_c,
    )


def build_lattice_cone(
    dim: int,
    r_max: float,
    sector: bool = False,
    remote_c: float = DEFAULT_REMOTE_C,
) -> QacSpace:
    """Unit-lattice model of a flat cone (depth 0), mesh 1 at every scale.

    Geometric-shell cones keep a fixed cross-section resolution, so their
    mesh grows like h * rho and balls of radius c * rho(p) around remote
    points are never resolved.  A unit lattice refines the cross-section
    automatically with radius, at the price of vertex count growing like
    r_max^dim; it is the right model for the local (remote-ball) checks.

    ``sector=True`` keeps the positive orthant: the cone over a spherical
    simplex, with reflecting side faces.  Only the outer shell is marked
    as boundary.
    """
    from .graphgeom import lattice_ball

    g = lattice_ball(dim, int(np.ceil(r_max)))
    norms = np.linalg.norm(g.positions, axis=1)
    keep = norms <= r_max + 1e-9
    if sector:
        keep &= np.all(g.positions >= 0, axis=1)
    idx = np.flatnonzero(keep)
    lookup = np.full(g.n_vertices, -1, dtype=np.int64)
    lookup[idx] = np.arange(len(idx))
    emask = keep[g.edges[:, 0]] & keep[g.edges[:, 1]]
    edges = lookup[g.edges[emask]]
    pos = g.positions[idx]
    n = len(idx)
    rho = np.maximum(1.0, np.linalg.norm(pos, axis=1))
    boundary = np.linalg.norm(pos, axis=1) > r_max - 1.5
    graph = WeightedGraph(
        positions=pos,
        edges=edges,
        lengths=g.lengths[emask],
        conductances=g.conductances[emask],
        vertex_measure=g.vertex_measure[idx],
        boundary=boundary,
    )
    basepoint = int(np.flatnonzero(np.all(pos == 0, axis=1))[0])
    return QacSpace(
        graph=graph,
        depth=0,
        basepoint=basepoint,
        rho=rho,
        w=np.empty((n, 0)),
        piece=np.zeros(n, dtype=np.int64),
        dims=(dim,),
        ends=np.zeros(n, dtype=np.int64),
        truncation_radius=float(r_max),
        remote_c=remote_c,
    )


def _cross_section_dim(cs: WeightedGraph) -> int:
    """Intrinsic dimension of a compact base, inferred from its regular
    structure (cycle -> 1, grid-like -> 2, ...)."""
    deg = cs.degrees()
    return int(round(np.median(deg) / 2))


# ---------------------------------------------------------------------------
# depth 1: product of two depth-0 spaces


def build_product(z1: QacSpace, z2: QacSpace, remote_c: float = DEFAULT_REMOTE_C) -> QacSpace:
    """Product of two depth-0 spaces; a depth-1 space.

    rho = sqrt(rho_1^2 + rho_2^2); w_1 clamps min(rho_1, rho_2)/rho at 1 on
    the diagonal bulk where neither factor dominates.  The stored fiber
    radius is min(rho_1, rho_2), which drives the remote-chain bands.
    """
    if z1.depth != 0 or z2.depth != 0:
        raise ValueError("build_product expects two depth-0 factors")
    if abs(z1.truncation_radius - z2.truncation_radius) > 1e-9 * z1.truncation_radius:
        raise ValueError("factors must share the truncation radius")
    g1, g2 = z1.graph, z2.graph
    n1, n2 = g1.n_vertices, g2.n_vertices
    n = n1 * n2

    idx1 = np.repeat(np.arange(n1), n2)
    idx2 = np.tile(np.arange(n2), n1)
    measure = g1.vertex_measure[idx1] * g2.vertex_measure[idx2]
    positions = np.concatenate([g1.positions[idx1], g2.positions[idx2]], axis=1)

    # edges changing the first coordinate: conductance c1 * m2
    e1 = g1.edges
    k2 = np.arange(n2)
    a = (e1[:, 0][:, None] * n2 + k2[None, :]).ravel()
    b = (e1[:, 1][:, None] * n2 + k2[None, :]).ravel()
    len_a = np.repeat(g1.lengths, n2)
    cond_a = (g1.conductances[:, None] * g2.vertex_measure[None, :]).ravel()
    # edges changing the second coordinate
    e2 = g2.edges
    k1 = np.arange(n1)
    c = (k1[:, None] * n2 + e2[:, 0][None, :]).ravel()
    d = (k1[:, None] * n2 + e2[:, 1][None, :]).ravel()
    len_b = np.tile(g2.lengths, n1)
    cond_b = (g1.vertex_measure[:, None] * g2.conductances[None, :]).ravel()

    edges = np.concatenate([np.stack([a, b], axis=1), np.stack([c, d], axis=1)])
    lengths = np.concatenate([len_a, len_b])
    conds = np.concatenate([cond_a, cond_b])
    boundary = g1.boundary[idx1] | g2.boundary[idx2]

    graph = WeightedGraph(
        positions=positions,
        edges=edges,
        lengths=lengths,
        conductances=conds,
        vertex_measure=measure,
        boundary=boundary,
    )

    r1 = z1.rho[idx1]
    r2 = z2.rho[idx2]
    rho = np.sqrt(r1**2 + r2**2)
    fiber_rho = np.minimum(r1, r2)
    w1 = np.minimum(1.0, fiber_rho / (W_CLAMP * rho))
    w = w1[:, None]
    piece = derive_piece_labels(w)
    m0 = z2.dims[-1]
    ndim = z1.dims[-1] + z2.dims[-1]
    basepoint = z1.basepoint * n2 + z2.basepoint

    return QacSpace(
        graph=graph,
        depth=1,
        basepoint=basepoint,
        rho=rho,
        w=w,
        piece=piece,
        dims=(m0, ndim),
        ends=np.zeros(n, dtype=np.int64),
        truncation_radius=float(np.sqrt(2) * z1.truncation_radius),
        remote_c=remote_c,
        fiber_rho=fiber_rho,
    )


# ---------------------------------------------------------------------------
# general recursion


def build_qac(recipe: dict, r_max: float | None = None) -> QacSpace:
    """Build a space from a nested recipe.

    Recipe forms:
      {"type": "ac", "cross_section": {...}, "r_max": R}
      {"type": "product", "factors": [recipe, recipe]}
      {"type": "cone_bundle", "stratum": {...}, "fiber": recipe, "r_max": R}
    ``r_max`` overrides the recipe's own value when given.
    """
    kind = recipe.get("type")
    if kind == "ac":
        r = float(r_max if r_max is not None else recipe["r_max"])
        cs = build_compact_base(recipe["cross_section"])
        return build_ac_space(cs, r, remote_c=recipe.get("c", DEFAULT_REMOTE_C))
    if kind == "product":
        f1, f2 = recipe["factors"]
        z1 = build_qac(f1, r_max=r_max)
        z2 = build_qac(f2, r_max=r_max)
        return build_product(z1, z2, remote_c=recipe.get("c", DEFAULT_REMOTE_C))
    if kind == "cone_bundle":
        r = float(r_max if r_max is not None else recipe["r_max"])
        stratum = build_compact_base(recipe["stratum"])
        fiber = build_qac(recipe["fiber"], r_max=r)
        return _build_cone_bundle(stratum, fiber, r, remote_c=recipe.get("c", DEFAULT_REMOTE_C))
    if kind == "lattice":
        r = float(r_max if r_max is not None else recipe["r_max"])
        return build_lattice_cone(
            int(recipe["dimension"]),
            r,
            sector=bool(recipe.get("sector", False)),
            remote_c=recipe.get("c", DEFAULT_REMOTE_C),
        )
    if kind == "two_ended":
        r = float(r_max if r_max is not None else recipe["r_max"])
        cs = build_compact_base(recipe["cross_section"])
        return build_two_ended(cs, r, remote_c=recipe.get("c", DEFAULT_REMOTE_C))
    raise ValueError(f"unsupported recipe type {kind!r}")


def _build_cone_bundle(
    stratum: WeightedGraph, fiber: QacSpace, r_max: float, remote_c: float = DEFAULT_REMOTE_C
) -> QacSpace:
    """Cone bundle over a stratum cross-section with a lower-depth fiber.

    Vertices are (shell i, stratum node s, fiber point z) with the fiber
    truncated at rho_fiber <= shell radius; the fiber keeps its own metric
    while the stratum directions scale with the shell radius.  The outer
    fiber layers (fiber radius comparable to rho) are the conic bulk where
    the new weight clamps at 1.
    """
    h = float(np.mean(stratum.lengths))
    radii = shell_radii(r_max, h)
    n_shells = len(radii)
    ns = stratum.n_vertices
    fg = fiber.graph
    nf = fg.n_vertices
    k = fiber.depth + 1
    m = fiber.dims[-1]
    ndim = _cross_section_dim(stratum) + 1 + m

    # fiber vertex sets per shell: rho_fiber <= shell radius
    fiber_keep = [np.flatnonzero(fiber.rho <= radii[i] * (1 + 1e-9)) for i in range(n_shells)]
    offsets = np.zeros(n_shells + 1, dtype=np.int64)
    for i in range(n_shells):
        offsets[i + 1] = offsets[i] + ns * len(fiber_keep[i])
    n = int(offsets[-1])

    # local index of each kept fiber vertex per shell
    local = [np.full(nf, -1, dtype=np.int64) for _ in range(n_shells)]
    for i in range(n_shells):
        local[i][fiber_keep[i]] = np.arange(len(fiber_keep[i]))

    def vid(i, s, fz_local):
        return offsets[i] + s * len(fiber_keep[i]) + fz_local

    thick = np.empty(n_shells)
    thick[1:-1] = (radii[2:] - radii[:-2]) / 2
    thick[0] = radii[1] - radii[0]
    thick[-1] = radii[-1] - radii[-2]

    rho = np.empty(n)
    measure = np.empty(n)
    fiber_rho = np.empty(n)
    w = np.empty((n, k))
    pos_dim = 1 + stratum.positions.shape[1] + fg.positions.shape[1]
    positions = np.zeros((n, pos_dim))
    edge_blocks, len_blocks, cond_blocks = [], [], []

    for i in range(n_shells):
        keep = fiber_keep[i]
        nk = len(keep)
        sl = slice(offsets[i], offsets[i + 1])
        r_i = radii[i]
        rho[sl] = r_i
        fr = fiber.rho[keep]
        fiber_rho[sl] = np.tile(fr, ns)
        radial_factor = r_i ** (ndim - m - 1) * thick[i]
        mloc = radial_factor * (stratum.vertex_measure[:, None] * fg.vertex_measure[keep][None, :])
        measure[sl] = mloc.ravel()
        positions[sl, 0] = r_i
        positions[sl, 1 : 1 + stratum.positions.shape[1]] = np.repeat(stratum.positions, nk, axis=0)
        positions[sl, 1 + stratum.positions.shape[1] :] = np.tile(fg.positions[keep], (ns, 1))

        # weights: w_k = fiber_rho / (W_CLAMP * rho) clamped, lower ones via recursion
        wk = np.minimum(1.0, fr / (W_CLAMP * r_i))
        w_sl = np.empty((ns * nk, k))
        w_sl[:, k - 1] = np.tile(wk, ns)
        if k > 1:
            lower = fiber.w[keep]  # (nk, k-1)
            w_sl[:, : k - 1] = np.tile(wk[:, None] * lower, (ns, 1))
            # clamp: weights equal to 1 wherever the parent weight clamps
            bulk = np.tile(wk >= 1 - 1e-12, ns)
            w_sl[bulk, : k - 1] = np.tile(lower, (ns, 1))[bulk]
        w[sl] = w_sl

        # fiber edges inside each (shell, stratum node)
        fe_mask = (local[i][fg.edges[:, 0]] >= 0) & (local[i][fg.edges[:, 1]] >= 0)
        fe = fg.edges[fe_mask]
        fl = fg.lengths[fe_mask]
        fc_scale = radial_factor * stratum.vertex_measure  # per stratum node
        la = local[i][fe[:, 0]]
        lb = local[i][fe[:, 1]]
        for s in range(ns):
            base = offsets[i] + s * nk
            edge_blocks.append(np.stack([base + la, base + lb], axis=1))
            len_blocks.append(fl)
            cond_blocks.append(fg.conductances[fe_mask] * fc_scale[s])

        # stratum edges, length scaled by r_i, conductance from product rule
        for (su, sv), slen, in zip(stratum.edges, stratum.lengths):
            au = offsets[i] + su * nk + np.arange(nk)
            av = offsets[i] + sv * nk + np.arange(nk)
            edge_blocks.append(np.stack([au, av], axis=1))
            len_blocks.append(np.full(nk, r_i * slen))
            cond_blocks.append((mloc[su] + mloc[sv]) / (2 * (r_i * slen) ** 2))

        # radial edges to the next shell (fiber sets nest)
        if i + 1 < n_shells:
            nk2 = len(fiber_keep[i + 1])
            l_next = local[i + 1][keep]
            gap = radii[i + 1] - r_i
            for s in range(ns):
                a = offsets[i] + s * nk + np.arange(nk)
                b = offsets[i + 1] + s * nk2 + l_next
                edge_blocks.append(np.stack([a, b], axis=1))
                len_blocks.append(np.full(nk, gap))
                m_a = measure[a]
                m_b = measure[b]
                cond_blocks.append((m_a + m_b) / (2 * gap**2))

    edges = np.concatenate(edge_blocks)
    lengths = np.concatenate(len_blocks)
    conds = np.concatenate(cond_blocks)
    boundary = np.zeros(n, dtype=bool)
    boundary[offsets[n_shells - 1] :] = True

    graph = WeightedGraph(
        positions=positions,
        edges=edges,
        lengths=lengths,
        conductances=conds,
        vertex_measure=measure,
        boundary=boundary,
    )
    piece = derive_piece_labels(w)
    basepoint = 0  # shell 0, stratum node 0, fiber cap
    dims = fiber.dims[:-1] + (m, ndim)
    return QacSpace(
        graph=graph,
        depth=k,
        basepoint=int(basepoint),
        rho=rho,
        w=w,
        piece=piece,
        dims=dims,
        ends=np.zeros(n, dtype=np.int64),
        truncation_radius=float(radii[-1]),
        remote_c=remote_c,
        fiber_rho=fiber_rho,
    )


# ---------------------------------------------------------------------------
# multi-end model


def build_two_ended(cross_section: WeightedGraph, r_max: float, remote_c: float = DEFAULT_REMOTE_C) -> QacSpace:
    """Two cones glued along their rho = 1 shells; a two-ended depth-0 space."""
    cs = cross_section
    ny = cs.n_vertices
    h = float(np.mean(cs.lengths))
    radii = shell_radii(r_max, h)
    n_shells = len(radii)
    ndim = _cross_section_dim(cs) + 1
    n = 2 * n_shells * ny

    thick = np.empty(n_shells)
    thick[1:-1] = (radii[2:] - radii[:-2]) / 2
    thick[0] = radii[1] - radii[0]
    thick[-1] = radii[-1] - radii[-2]

    def vid(side, i, y):
        return side * n_shells * ny + i * ny + y

    rho = np.empty(n)
    measure = np.empty(n)
    positions = np.zeros((n, cs.positions.shape[1] + 1))
    ends = np.empty(n, dtype=np.int64)
    for side in (0, 1):
        sgn = 1.0 if side == 0 else -1.0
        for i in range(n_shells):
            sl = slice(vid(side, i, 0), vid(side, i, ny - 1) + 1)
            rho[sl] = radii[i]
            measure[sl] = radii[i] ** (ndim - 1) * thick[i] * cs.vertex_measure
            positions[sl, 0] = sgn * radii[i]
            positions[sl, 1:] = cs.positions
            ends[sl] = side

    blocks, lengths = [], []
    for side in (0, 1):
        for i in range(n_shells):
            e = cs.edges + vid(side, i, 0)
            blocks.append(e)
            lengths.append(radii[i] * cs.lengths)
        for i in range(n_shells - 1):
            a = np.arange(ny) + vid(side, i, 0)
            blocks.append(np.stack([a, a + ny], axis=1))
            lengths.append(np.full(ny, radii[i + 1] - radii[i]))
    # glue the two rho = 1 shells vertex-by-vertex
    a = np.arange(ny) + vid(0, 0, 0)
    b = np.arange(ny) + vid(1, 0, 0)
    blocks.append(np.stack([a, b], axis=1))
    lengths.append(np.full(ny, h))

    edges = np.concatenate(blocks)
    lengths = np.concatenate(lengths)
    boundary = np.zeros(n, dtype=bool)
    for side in (0, 1):
        boundary[vid(side, n_shells - 1, 0) : vid(side, n_shells - 1, ny - 1) + 1] = True

    graph = WeightedGraph(
        positions=positions,
        edges=edges,
        lengths=lengths,
        conductances=conductances_from_data(lengths, measure[edges[:, 0]], measure[edges[:, 1]]),
        vertex_measure=measure,
        boundary=boundary,
    )
    return QacSpace(
        graph=graph,
        depth=0,
        basepoint=0,
        rho=rho,
        w=np.empty((n, 0)),
        piece=np.zeros(n, dtype=np.int64),
        dims=(ndim,),
        ends=ends,
        truncation_radius=float(radii[-1]),
        remote_c=remote_c,
    )


# ---------------------------------------------------------------------------
# remote chains and probe placement


def remote_chain(z: QacSpace, p: int, c: float | None = None) -> RemoteChain:
    """Remote chain of strata indices at p, by the 1 - 2c thresholding.

    j_1 is the largest index with w_{j_1}(p) < 1 - 2c (all higher weights
    at least 1 - 2c); the recursion continues on the fiber weight ratios
    w_i / w_{j_l}.  Empty chain when every weight is >= 1 - 2c.
    """
    c = z.remote_c if c is None else c
    if not (0 < c < 1):
        raise ValueError("remote parameter c must lie in (0, 1)")
    thresh = 1 - 2 * c
    w = z.w[p].copy()
    rho_here = float(z.rho[p])
    indices: list[int] = []
    fibers: list[float] = []
    j_hi = z.depth
    scale = 1.0
    while True:
        j1 = 0
        for j in range(j_hi, 0, -1):
            if w[j - 1] / scale < thresh:
                j1 = j
                break
        if j1 == 0:
            break
        indices.append(j1)
        scale = w[j1 - 1]
        fibers.append(scale * rho_here)
        j_hi = j1 - 1
        if j_hi == 0:
            break
    return RemoteChain(vertex=p, indices=tuple(indices), fiber_rho=tuple(fibers))


def place_probe(
    z: QacSpace,
    w1: float | None = None,
    rho: float | None = None,
    interior_margin: float = 0.0,
) -> int:
    """Vertex whose (w_1, rho) is closest (in log space) to the request.

    The Green-function band checks need probes constructed at specific
    weight values; random sampling essentially never hits deep wedges.
    """
    score = np.zeros(z.n_vertices)
    if w1 is not None:
        if z.depth < 1:
            raise ValueError("w1 probes need depth >= 1")
        score = score + np.log(z.w[:, 0] / w1) ** 2
    if rho is not None:
        score = score + np.log(z.rho / rho) ** 2
    if interior_margin > 0:
        score = np.where(
            z.rho <= z.truncation_radius / (1 + interior_margin), score, np.inf
        )
    return int(np.argmin(score))
