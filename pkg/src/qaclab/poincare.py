"""Discrete Poincare-inequality probes.

For a ball B = B(x, r) and the weighted measure mu = rho^a w^b dV, the
constant verified is the smallest C with

    sum_B (f - mean_B f)^2 dmu  <=  C r^2 sum_{(1/delta) B} |grad f|^2 dmu

over all f, computed as a generalized eigenvalue problem: the gradient
energy lives on the enlarged ball (Neumann boundary, vertex-induced
subgraph), the mass and the mean-zero constraint on the inner ball.  With
delta = 1 this is the Neumann spectral gap of the ball itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graphgeom import Ball
from .measure import weight_vector
from .qacbuild import QacSpace, WeightParams
from .report import ComparabilityReport, compare_samples

__all__ = ["PoincareProbe", "poincare_constant", "verify_pi_scaling"]

DENSE_CUTOFF = 2000


@dataclass(frozen=True)
class PoincareProbe:
    ball: Ball
    mu_params: WeightParams
    lambda1: float
    C_P: float
    delta: float

    def __post_init__(self):
        if self.lambda1 <= 0:
            raise ValueError("Neumann gap must be positive on a connected ball")


def _subgraph_energy(z: QacSpace, members: np.ndarray, p: WeightParams) -> sp.csr_matrix:
    """Weighted Dirichlet-energy matrix of the vertex-induced subgraph.

    Edge conductances are scaled by the mean density of their endpoints,
    so f^T A f = sum_edges c_uv * (dens_u + dens_v)/2 * (f_u - f_v)^2.
    """
    g = z.graph
    lookup = np.full(z.n_vertices, -1, dtype=np.int64)
    lookup[members] = np.arange(len(members))
    keep = (lookup[g.edges[:, 0]] >= 0) & (lookup[g.edges[:, 1]] >= 0)
    e = lookup[g.edges[keep]]
    dens = weight_vector(z, p)
    cw = g.conductances[keep] * 0.5 * (dens[g.edges[keep, 0]] + dens[g.edges[keep, 1]])
    n = len(members)
    i = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    j = np.concatenate([e[:, 1], e[:, 0], e[:, 0], e[:, 1]])
    v = np.concatenate([-cw, -cw, cw, cw])
    return sp.csr_matrix((v, (i, j)), shape=(n, n))


def _is_connected(a: sp.csr_matrix) -> bool:
    from scipy.sparse.csgraph import connected_components

    ncomp, _ = connected_components(a, directed=False)
    return ncomp == 1


def poincare_constant(
    z: QacSpace, ball: Ball, p: WeightParams, delta: float = 0.5
) -> PoincareProbe:
    """Smallest eigenvalue of the (PI) variational problem on a ball.

    lambda1 = min { E_{(1/delta)B}(f) / ||f - mean f||^2_{L^2(mu, B)} },
    C_P = 1 / (lambda1 r^2).
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    dist = z.distances_from(ball.center)
    big = np.flatnonzero(dist <= ball.radius / delta + 1e-12)
    a_mat = _subgraph_energy(z, big, p)
    if not _is_connected(a_mat):
        raise ValueError(f"ball at {ball.center} (r={ball.radius}) is disconnected")
    lookup = np.full(z.n_vertices, -1, dtype=np.int64)
    lookup[big] = np.arange(len(big))
    inner = lookup[ball.members]
    mass = np.zeros(len(big))
    dens = weight_vector(z, p, ball.members)
    mass[inner] = dens * z.graph.vertex_measure[ball.members]
    total = mass.sum()

    def apply_bt(f):
        # B~ f = M f - (M 1)(1^T M f)/(1^T M 1): mass with mean deflated
        mf = mass * f
        return mf - mass * (mf.sum() / total)

    n = len(big)
    if n <= DENSE_CUTOFF:
        bt = np.diag(mass) - np.outer(mass, mass) / total
        ad = a_mat.toarray()
        ad += 1e-12 * np.trace(ad) / n * np.eye(n)
        theta = scipy.linalg.eigh(bt, ad, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
    else:
        reg = 1e-12 * (a_mat.diagonal().sum() / n)
        solve = spla.splu((a_mat + reg * sp.eye(n)).tocsc()).solve
        rng = np.random.default_rng(0)
        f = rng.standard_normal(n)
        theta = 0.0
        for _ in range(400):
            g_vec = solve(apply_bt(f))
            nrm = np.linalg.norm(g_vec)
            if nrm == 0:
                raise ValueError("mass matrix degenerate on this ball")
            g_vec /= nrm
            new = float(g_vec @ apply_bt(g_vec)) / float(g_vec @ (a_mat @ g_vec))
            if theta > 0 and abs(new - theta) <= 1e-8 * theta:
                theta = new
                break
            theta, f = new, g_vec
    lam = 1.0 / theta
    return PoincareProbe(
        ball=ball, mu_params=p, lambda1=float(lam), C_P=float(1.0 / (lam * ball.radius**2)), delta=delta
    )


def verify_pi_scaling(
    z: QacSpace,
    p: WeightParams,
    samples: list[tuple[int, float]],
    delta: float = 0.5,
) -> ComparabilityReport:
    """Report on the r^2 scaling of the inverse Neumann gap.

    ``samples`` is a list of (center, radius).  Passing means the fitted
    slope of log(1/lambda1) against log(r) is close to 2, i.e. C_P is
    uniform over centers and scales.
    """
    scales, lhs, rhs = [], [], []
    for center, r in samples:
        probe = poincare_constant(z, z.ball(center, r), p, delta=delta)
        scales.append(r)
        lhs.append(1.0 / probe.lambda1)
        rhs.append(r**2)
    return compare_samples(f"poincare r^2 scaling (delta={delta})", scales, lhs, rhs)
