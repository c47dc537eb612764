"""Operator assembly and heat kernels.

Operators over a space Z with weight data (rho, w) and measure m:

* plain Laplacian   (Delta f)(u) = (1/m_u) sum_v c_uv (f_u - f_v);
* Doob transform    Delta_mu = h^{-1} Delta h + V with h = rho^{a/2} w^{b/2}
  and V = -(Delta h)/h.  Discretely this conjugation is *exact*: Delta_mu
  is the graph Laplacian with conductances c_uv h_u h_v and vertex measure
  h^2 m, so the identity holds to machine precision, as does the kernel
  relation H_{Delta+V}(t,z,z') = h(z) h(z') H_{Delta_mu}(t,z,z').
* Schrodinger       Delta + V;
* connection Laplacian on a rank-r bundle with per-edge orthogonal
  transports U_uv: (D*D s)(u) = (1/m_u) sum_v c_uv (s_u - U_uv s_v),
  plus a symmetric endomorphism R_endo.

Heat columns are computed with Dirichlet truncation at the outer shell,
by ``expm_multiply`` on the interior operator (default) or by
Crank-Nicolson stepping for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .measure import ball_volume_function
from .qacbuild import QacSpace, WeightParams
from .report import ComparabilityReport

__all__ = [
    "OperatorBundle",
    "assemble",
    "random_bundle_spec",
    "HeatKernelSnapshot",
    "heat_column",
    "verify_gaussian_bounds",
    "verify_domination",
    "trotter_convergence",
]


def _sym_laplacian(z: QacSpace, conductances: np.ndarray) -> sp.csr_matrix:
    e = z.graph.edges
    n = z.n_vertices
    i = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    j = np.concatenate([e[:, 1], e[:, 0], e[:, 0], e[:, 1]])
    c = conductances
    v = np.concatenate([-c, -c, c, c])
    return sp.csr_matrix((v, (i, j)), shape=(n, n))


@dataclass
class OperatorBundle:
    """The operators of interest over one space, sharing its truncation."""

    space: QacSpace
    params: WeightParams
    h: np.ndarray
    V: np.ndarray
    L_sym: sp.csr_matrix  # symmetric form of Delta (conductance Laplacian)
    Lmu_sym: sp.csr_matrix  # symmetric form of Delta_mu
    mu_measure: np.ndarray  # h^2 m
    bundle_rank: int = 1
    edge_unitaries: np.ndarray | None = None  # (n_edges, r, r)
    R_endo: np.ndarray | None = None  # (n_vertices, r, r)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> np.ndarray:
        return self.space.graph.vertex_measure

    def apply_plain(self, f: np.ndarray) -> np.ndarray:
        return (self.L_sym @ f) / self.m

    def apply_mu(self, f: np.ndarray) -> np.ndarray:
        return (self.Lmu_sym @ f) / self.mu_measure

    def apply_schrodinger(self, f: np.ndarray) -> np.ndarray:
        return (self.L_sym @ f) / self.m + self.V * f

    def sym_matrix(self, which: str) -> tuple[sp.csr_matrix, np.ndarray]:
        """(symmetric form, measure) pair for the requested operator.

        The operator acts as f -> (S f) / measure and is self-adjoint in
        l^2(measure)."""
        if which == "plain":
            return self.L_sym, self.m
        if which == "mu":
            return self.Lmu_sym, self.mu_measure
        if which == "schrodinger":
            return self.L_sym + sp.diags(self.V * self.m), self.m
        if which == "bundle":
            return self.bundle_sym_matrix(), np.repeat(self.m, self.bundle_rank)
        raise ValueError(f"unknown operator tag {which!r}")

    def bundle_sym_matrix(self) -> sp.csr_matrix:
        """Symmetric form of D*D + R_endo over the rank-r vertex blocks."""
        if self.edge_unitaries is None:
            raise ValueError("no bundle data attached")
        if "bundle_sym" in self._cache:
            return self._cache["bundle_sym"]
        r = self.bundle_rank
        e = self.space.graph.edges
        c = self.space.graph.conductances
        n = self.space.n_vertices
        rows, cols, vals = [], [], []
        eye = np.eye(r)
        deg = np.zeros(n)
        np.add.at(deg, e[:, 0], c)
        np.add.at(deg, e[:, 1], c)
        for blk in range(r):
            rows.append(np.arange(n) * r + blk)
            cols.append(np.arange(n) * r + blk)
            vals.append(deg)
        # off-diagonal blocks -c_uv U_uv at (u, v) and -c_uv U_uv^T at (v, u)
        for i_blk in range(r):
            for j_blk in range(r):
                rows.append(e[:, 0] * r + i_blk)
                cols.append(e[:, 1] * r + j_blk)
                vals.append(-c * self.edge_unitaries[:, i_blk, j_blk])
                rows.append(e[:, 1] * r + i_blk)
                cols.append(e[:, 0] * r + j_blk)
                vals.append(-c * self.edge_unitaries[:, j_blk, i_blk])
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n * r, n * r),
        )
        if self.R_endo is not None:
            u_idx = np.repeat(np.arange(n), r * r)
            i_blk = np.tile(np.repeat(np.arange(r), r), n)
            j_blk = np.tile(np.tile(np.arange(r), r), n)
            vals_r = (self.R_endo * self.m[:, None, None]).ravel()
            mat = mat + sp.csr_matrix(
                (vals_r, (u_idx * r + i_blk, u_idx * r + j_blk)), shape=(n * r, n * r)
            )
        self._cache["bundle_sym"] = mat
        return mat

    def check_domination_hypothesis(self) -> bool:
        """R_endo - V Id positive semidefinite at every vertex."""
        if self.R_endo is None:
            raise ValueError("no bundle data attached")
        for u in range(self.space.n_vertices):
            evals = np.linalg.eigvalsh(self.R_endo[u] - self.V[u] * np.eye(self.bundle_rank))
            if evals[0] < -1e-10:
                return False
        return True


def assemble(z: QacSpace, p: WeightParams, bundle=None) -> OperatorBundle:
    dens = z.rho ** (p.a / 2)
    for j in range(z.depth):
        dens = dens * z.w[:, j] ** (p.b[j] / 2)
    h = dens
    e = z.graph.edges
    c = z.graph.conductances
    L_sym = _sym_laplacian(z, c)
    Lmu_sym = _sym_laplacian(z, c * h[e[:, 0]] * h[e[:, 1]])
    V = -(L_sym @ h) / (z.graph.vertex_measure * h)
    op = OperatorBundle(
        space=z,
        params=p,
        h=h,
        V=V,
        L_sym=L_sym,
        Lmu_sym=Lmu_sym,
        mu_measure=h**2 * z.graph.vertex_measure,
    )
    if bundle is not None:
        rank = int(bundle["rank"])
        op.bundle_rank = rank
        op.edge_unitaries = np.asarray(bundle["edge_unitaries"], dtype=float)
        op.R_endo = np.asarray(bundle["R_endo"], dtype=float)
        if op.edge_unitaries.shape != (len(e), rank, rank):
            raise ValueError("edge unitary array has the wrong shape")
        utu = np.einsum("eij,eik->ejk", op.edge_unitaries, op.edge_unitaries)
        if not np.allclose(utu, np.eye(rank), atol=1e-10):
            raise ValueError("edge transports must be orthogonal")
    return op


def random_bundle_spec(z: QacSpace, rank: int, V: np.ndarray, shift: float, seed=0) -> dict:
    """Rank-r bundle with random rotations and R = V Id + shift Id."""
    rng = np.random.default_rng(seed)
    n_e = len(z.graph.edges)
    us = np.empty((n_e, rank, rank))
    for i in range(n_e):
        q, _ = np.linalg.qr(rng.standard_normal((rank, rank)))
        us[i] = q
    r_endo = (V + shift)[:, None, None] * np.eye(rank)[None]
    return {"rank": rank, "edge_unitaries": us, "R_endo": r_endo}


@dataclass
class HeatKernelSnapshot:
    t: float
    source: int
    column: np.ndarray
    which: str
    scheme: str
    steps: int = 0


def _interior(z: QacSpace, rank: int = 1) -> np.ndarray:
    keep = ~z.graph.boundary
    if rank == 1:
        return np.flatnonzero(keep)
    return np.flatnonzero(np.repeat(keep, rank))


def heat_column(
    op: OperatorBundle,
    which: str,
    t: float | np.ndarray,
    source: int,
    scheme: str = "expm",
    steps_per_decade: int = 24,
) -> HeatKernelSnapshot | list[HeatKernelSnapshot]:
    """Heat kernel column H(t, ., source) with Dirichlet truncation.

    The column is normalized as a kernel against the operator's measure,
    so H(t,u,v) is symmetric.  ``t`` may be an increasing array; then one
    propagation serves all times.
    """
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be positive and increasing")
    s_mat, meas = op.sym_matrix(which)
    rank = op.bundle_rank if which == "bundle" else 1
    idx = _interior(op.space, rank)
    sub = s_mat[idx][:, idx].tocsc()
    m_sub = meas[idx]
    a_mat = sp.diags(1.0 / m_sub) @ sub
    src_local = np.searchsorted(idx, source)
    if src_local >= len(idx) or idx[src_local] != source:
        raise ValueError("source lies on the Dirichlet boundary")
    u = np.zeros(len(idx))
    u[src_local] = 1.0 / m_sub[src_local]

    outs = []
    t_prev = 0.0
    n_steps = 0
    for t_i in times:
        dt_total = t_i - t_prev
        if scheme == "expm":
            u = spla.expm_multiply(-dt_total * a_mat, u)
        elif scheme == "crank-nicolson":
            # geometric substep ramp out of the delta singularity
            n_sub = max(8, steps_per_decade)
            hs = np.full(n_sub, dt_total / n_sub)
            for h_step in hs:
                lhs = sp.eye(len(idx)) + (h_step / 2) * a_mat
                rhs_v = u - (h_step / 2) * (a_mat @ u)
                u, info = spla.cg(lhs.tocsr(), rhs_v, x0=u, rtol=1e-10, atol=0.0)
                if info != 0:
                    raise RuntimeError(f"heat step solver failed (info={info})")
                n_steps += 1
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        t_prev = t_i
        col = np.zeros(op.space.n_vertices * rank)
        col[idx] = u
        outs.append(
            HeatKernelSnapshot(
                t=float(t_i), source=source, column=col, which=which, scheme=scheme, steps=n_steps
            )
        )
    return outs if np.ndim(t) else outs[0]


def verify_gaussian_bounds(
    op: OperatorBundle,
    centers: list[int],
    times: np.ndarray,
    pairs: list[tuple[int, int, float]] | None = None,
) -> dict:
    """On- and off-diagonal Gaussian bound checks for Delta_mu.

    On-diagonal: log H(t,z,z) + log muB(z, sqrt t) has a bounded band over
    the time grid and the centers.  Off-diagonal (when ``pairs`` of
    (z, z', t) given): log H + (log muB(z,sqrt t) + log muB(z',sqrt t))/2
    regressed against d^2/t must be affine with slope -c, c in a sane
    range.
    """
    z = op.space
    times = np.asarray(times, dtype=float)
    ondiag_logs = []
    scales = []
    for center in centers:
        snaps = heat_column(op, "mu", times, center)
        dists, cum = ball_volume_function(z, center, op.params)
        for snap in snaps:
            r = np.sqrt(snap.t)
            vol = cum[max(0, np.searchsorted(dists, r, side="right") - 1)]
            val = snap.column[center]
            if val <= 0:
                continue
            ondiag_logs.append(np.log(val) + np.log(vol))
            scales.append(snap.t)
    ondiag_logs = np.array(ondiag_logs)
    report = ComparabilityReport(
        name="gaussian on-diagonal",
        scales=np.array(scales),
        log_lhs=ondiag_logs,
        log_rhs=np.zeros_like(ondiag_logs),
    )
    out = {"on_diagonal": report}
    if pairs:
        xs, ys = [], []
        by_source: dict[int, list] = {}
        for z1, z2, t_i in pairs:
            by_source.setdefault(z1, []).append((z2, t_i))
        for z1, rest in by_source.items():
            ts = np.array(sorted({t_i for _, t_i in rest}))
            snaps = {s.t: s for s in heat_column(op, "mu", ts, z1)}
            d1, c1 = ball_volume_function(z, z1, op.params)
            for z2, t_i in rest:
                snap = snaps[t_i]
                d2, c2 = ball_volume_function(z, z2, op.params)
                r = np.sqrt(t_i)
                v1 = c1[max(0, np.searchsorted(d1, r, side="right") - 1)]
                v2 = c2[max(0, np.searchsorted(d2, r, side="right") - 1)]
                val = snap.column[z2]
                if val <= 0:
                    continue
                d = z.distances_from(z1)[z2]
                xs.append(d * d / t_i)
                ys.append(np.log(val) + 0.5 * (np.log(v1) + np.log(v2)))
        slope, intercept = np.polyfit(xs, ys, 1)
        resid = np.array(ys) - (slope * np.array(xs) + intercept)
        out["off_diagonal"] = {
            "c": float(-slope),
            "intercept": float(intercept),
            "resid_band": float(resid.max() - resid.min()),
            "n_pairs": len(xs),
        }
    return out


def verify_domination(
    op: OperatorBundle, samples: list[tuple[float, int, int]], tol: float = 1e-6
) -> dict:
    """|H_bundle(t,z,z')|_op <= H_{Delta+V}(t,z,z') pointwise at samples."""
    if not op.check_domination_hypothesis():
        raise ValueError("R_endo is not bounded below by V Id; hypothesis fails")
    r = op.bundle_rank
    rows = []
    worst = 0.0
    by_t: dict[tuple[float, int], dict] = {}
    for t_i, z1, z2 in samples:
        key = (t_i, z1)
        if key not in by_t:
            scalar = heat_column(op, "schrodinger", t_i, z1)
            blocks = [heat_column(op, "bundle", t_i, z1 * r + blk) for blk in range(r)]
            by_t[key] = {"scalar": scalar, "blocks": blocks}
        data = by_t[key]
        block = np.stack(
            [data["blocks"][blk].column[z2 * r : (z2 + 1) * r] for blk in range(r)], axis=1
        )
        h_block = float(np.linalg.norm(block, ord=2))
        h_scalar = float(data["scalar"].column[z2])
        rows.append({"t": t_i, "z": z1, "z2": z2, "bundle": h_block, "scalar": h_scalar})
        if h_scalar > 0:
            worst = max(worst, h_block / h_scalar)
    return {"dominated": worst <= 1 + tol, "worst_ratio": worst, "samples": rows}


def trotter_convergence(
    op: OperatorBundle, t: float, source: int, ks=(4, 16, 64)
) -> dict:
    """First-order Trotter splitting error for e^{-t(Delta + V)}.

    Splits A = Delta, B = V and measures the distance of the k-step
    product column to the exact column; the error should scale like 1/k.
    """
    idx = _interior(op.space)
    s_mat, meas = op.sym_matrix("schrodinger")
    sub = s_mat[idx][:, idx]
    m_sub = meas[idx]
    a_full = sp.diags(1.0 / m_sub) @ sub
    lap = op.L_sym[idx][:, idx]
    a_lap = sp.diags(1.0 / m_sub) @ lap
    v_sub = op.V[idx]
    u0 = np.zeros(len(idx))
    src_local = np.searchsorted(idx, source)
    u0[src_local] = 1.0 / m_sub[src_local]
    exact = spla.expm_multiply(-t * a_full, u0)
    errs = {}
    for k in ks:
        u = u0.copy()
        decay = np.exp(-(t / k) * v_sub)
        for _ in range(k):
            u = spla.expm_multiply(-(t / k) * a_lap, u)
            u = decay * u
        errs[k] = float(np.linalg.norm(u - exact) / np.linalg.norm(exact))
    return errs
