"""Weighted measures and ball-volume statistics.

The family of measures is ``mu_{a,b} = rho^a w^b dV`` where ``dV`` is the
graph vertex measure.  The central asymptotic facts checked here:

* anchored volume: ``A(R; a, b) ~ 1 + R^{a+n} (1 + sum_j R^{-m_{j-1} - |b(j)|})``;
* remote volume at a point with remote chain ``j_1 > ... > j_s``, in the
  radius band ``c w_{j_l} rho <= r <= c w_{j_{l-1}} rho``:
  ``R(p, r) ~ rho^{a - |b(j_l)|} w^{b - b(j_l)} r^{n + |b(j_l)|}``;
* nonremote volume: ``V(p, r) ~ r^{a+n}`` once ``r >= c rho(p)``;
* volume doubling, and the anchored/remote comparison
  ``A(rho(p)) <= C_V R(p, c rho(p))``.

Volume growth is uniformly controlled exactly when ``a + n >= 0`` and
``|b(j)| + m_{j-1} >= 0`` for every j; parameters breaking these must make
the doubling check fail (negative control).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphgeom import Ball
from .qacbuild import QacSpace, WeightParams, remote_chain
from .report import ComparabilityReport, compare_samples

__all__ = [
    "BallStats",
    "weight_vector",
    "weighted_volume",
    "growth_conditions_hold",
    "anchored_target",
    "verify_anchored_volume",
    "verify_remote_volume",
    "verify_nonremote_volume",
    "doubling_constant",
    "verify_volume_comparison",
    "stratified_sample",
    "ball_volume_function",
]


@dataclass(frozen=True)
class BallStats:
    center: int
    radius: float
    kind: str
    mu: float
    params: WeightParams

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("weighted ball volume must be positive")


def weight_vector(z: QacSpace, p: WeightParams, members=None) -> np.ndarray:
    """Per-vertex density rho^a w^b (restricted to ``members`` if given)."""
    rho = z.rho if members is None else z.rho[members]
    vals = rho**p.a
    for j in range(z.depth):
        wj = z.w[:, j] if members is None else z.w[members, j]
        vals = vals * wj ** p.b[j]
    return vals


def weighted_volume(z: QacSpace, ball: Ball, p: WeightParams) -> BallStats:
    members = ball.members
    dens = weight_vector(z, p, members)
    mu = float(np.dot(dens, z.graph.vertex_measure[members]))
    return BallStats(center=ball.center, radius=ball.radius, kind=ball.kind, mu=mu, params=p)


def mu_of_members(z: QacSpace, members: np.ndarray, p: WeightParams) -> float:
    dens = weight_vector(z, p, members)
    return float(np.dot(dens, z.graph.vertex_measure[members]))


def growth_conditions_hold(p: WeightParams) -> bool:
    """a + n >= 0 and |b(j)| + m_{j-1} >= 0 for every level j."""
    if p.a + p.n < 0:
        return False
    for j in range(1, p.depth + 1):
        if p.b_abs(j) + p.m[j - 1] < 0:
            return False
    return True


def anchored_target(R: np.ndarray, p: WeightParams) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    corr = np.ones_like(R)
    for j in range(1, p.depth + 1):
        corr = corr + R ** (-p.m[j - 1] - p.b_abs(j))
    return 1.0 + R ** (p.a + p.n) * corr


def _anchored_radii(z: QacSpace, r_lo: float = 2.0, n_points: int = 12) -> np.ndarray:
    """Geometric radius grid for anchored balls.

    The top radius stays inside the distance to the truncation shell so no
    anchored ball is clipped; the bottom stays a couple of mesh cells above
    the cap."""
    dist = z.distances_from(z.basepoint)
    d_bdry = float(dist[z.graph.boundary].min()) if z.graph.boundary.any() else float(dist.max())
    r_hi = 0.85 * d_bdry
    r_lo = max(r_lo, r_hi / 10**2)
    if r_hi / r_lo < 10**1.5:
        r_lo = max(1.5, r_hi / 10**1.75)
    return np.geomspace(r_lo, r_hi, n_points)


def verify_anchored_volume(z: QacSpace, p: WeightParams, n_points: int = 12) -> ComparabilityReport:
    dist = z.distances_from(z.basepoint)
    radii = _anchored_radii(z, n_points=n_points)
    measured = []
    for r in radii:
        members = np.flatnonzero(dist <= r)
        measured.append(mu_of_members(z, members, p))
    return compare_samples(
        f"anchored volume a={p.a} b={p.b}",
        radii,
        measured,
        anchored_target(radii, p),
    )


def verify_remote_volume(
    z: QacSpace, p: WeightParams, sample_points, c: float | None = None
) -> list[ComparabilityReport]:
    """Per-band comparability of the remote ball volume at each sample.

    For each point and each band of its remote chain, compare mu(B(p, r))
    against rho^{a-|b(j_l)|} w^{b-b(j_l)} r^{n+|b(j_l)|}.  Bands narrower
    than a quarter decade of radii are skipped (no usable fit range).
    """
    c = z.remote_c if c is None else c
    reports = []
    for pt in sample_points:
        chain = remote_chain(z, pt, c=c)
        dist = z.distances_from(pt)
        edges = chain.band_edges(z, c=c)
        # radii below the local mesh carry no geometric information
        local = float(np.min(z.graph.lengths[np.any(z.graph.edges == pt, axis=1)]))
        edges = np.maximum(edges, 2 * local)
        rho_p = float(z.rho[pt])
        for ell in range(len(edges) - 1):
            r_hi, r_lo = edges[ell], edges[ell + 1]
            j_ell = chain.indices[ell] if ell < chain.length else 0
            if j_ell >= 1:
                # below r ~ 2 w_j rho the ball has not wrapped the stratum
                # yet and the next-inner form still rules (the two agree
                # there only up to c-dependent constants), so fit above it
                r_lo = max(r_lo, 2 * z.w[pt, j_ell - 1] * rho_p)
            if r_hi <= r_lo * 10**0.25:
                continue
            b_abs = p.b_abs(j_ell)
            pref = rho_p ** (p.a - b_abs)
            for i in range(z.depth):
                exponent = p.b[i] - (p.b[i] if i < j_ell else 0.0)
                pref *= z.w[pt, i] ** exponent
            radii = np.geomspace(r_lo, r_hi, max(8, int(4 * np.log10(r_hi / r_lo)) + 8))
            measured = np.array(
                [mu_of_members(z, np.flatnonzero(dist <= r), p) for r in radii]
            )
            target = pref * radii ** (p.n + b_abs)
            rep = compare_samples(
                f"remote volume p={pt} band={ell} (j={j_ell})", radii, measured, target
            )
            # bands rarely span 1.5 decades; judge on slope and band only
            rep.passed = abs(rep.slope) <= rep.slope_tol and rep.band <= rep.band_tol
            reports.append(rep)
    return reports


def verify_nonremote_volume(
    z: QacSpace, p: WeightParams, sample_points=None, rng=None
) -> ComparabilityReport:
    if not growth_conditions_hold(p):
        raise ValueError("volume growth conditions fail for these parameters")
    rng = np.random.default_rng(rng)
    if sample_points is None:
        sample_points = stratified_sample(z, rng, 6)
    scales, lhs, rhs = [], [], []
    for pt in sample_points:
        dist = z.distances_from(pt)
        r_lo = max(z.remote_c * z.rho[pt] * 1.05, 2.0)
        # balls reaching the truncation shell are clipped and undercount
        r_hi = min(0.5 * z.truncation_radius, 0.9 * dist[z.graph.boundary].min())
        if r_hi <= r_lo * 1.3:
            continue
        for r in np.geomspace(r_lo, r_hi, 6):
            scales.append(r)
            lhs.append(mu_of_members(z, np.flatnonzero(dist <= r), p))
            rhs.append(r ** (p.a + p.n))
    return compare_samples(f"nonremote volume a={p.a} b={p.b}", scales, lhs, rhs)


def ball_volume_function(z: QacSpace, pt: int, p: WeightParams) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distances from pt and the cumulative weighted volume at each,
    i.e. the exact step function s -> mu(B(pt, s))."""
    dist = z.distances_from(pt)
    order = np.argsort(dist)
    dens = weight_vector(z, p) * z.graph.vertex_measure
    cum = np.cumsum(dens[order])
    return dist[order], cum


def stratified_sample(z: QacSpace, rng, n_per_stratum: int = 4) -> list[int]:
    """Sample vertices stratified over (piece label, log-rho band).

    Uniform sampling almost never reaches deep wedges or the cap, so every
    (piece, radius-decade) cell contributes up to ``n_per_stratum`` picks.
    Points hugging the truncation shell are excluded.
    """
    interior = z.rho <= z.truncation_radius / 2
    picks: list[int] = []
    log_rho = np.log10(np.maximum(z.rho, 1.0))
    bands = np.floor(log_rho * 2).astype(int)  # half-decade bands
    for piece in np.unique(z.piece):
        for band in np.unique(bands):
            cell = np.flatnonzero((z.piece == piece) & (bands == band) & interior)
            if len(cell) == 0:
                continue
            take = min(n_per_stratum, len(cell))
            picks.extend(rng.choice(cell, size=take, replace=False).tolist())
    return sorted(set(picks))


def doubling_constant(
    z: QacSpace, p: WeightParams, n_samples: int = 24, rng=None
) -> dict:
    """Max observed mu(B(x, 2r)) / mu(B(x, r)) over a stratified sample."""
    rng = np.random.default_rng(rng)
    centers = stratified_sample(z, rng, max(1, n_samples // 8))
    worst = (None, None)
    c_d = 0.0
    ratios = []
    for pt in centers:
        dists, cum = ball_volume_function(z, pt, p)
        r_max = 0.45 * z.truncation_radius
        local = max(2.0, float(dists[min(8, len(dists) - 1)]))
        if r_max <= 2 * local:
            continue
        for r in np.geomspace(local, r_max / 2, 5):
            v1 = cum[np.searchsorted(dists, r, side="right") - 1]
            v2 = cum[np.searchsorted(dists, 2 * r, side="right") - 1]
            ratio = v2 / v1
            ratios.append(ratio)
            if ratio > c_d:
                c_d = ratio
                worst = (pt, float(r))
    return {"C_D": float(c_d), "worst_case": worst, "n_ratios": len(ratios)}


def verify_volume_comparison(z: QacSpace, p: WeightParams, rng=None) -> dict:
    """A(rho(p)) <= C_V mu(B(p, c rho(p))) with C_V uniform over samples."""
    if not growth_conditions_hold(p):
        raise ValueError("volume growth conditions fail for these parameters")
    rng = np.random.default_rng(rng)
    centers = stratified_sample(z, rng, 3)
    dist0 = z.distances_from(z.basepoint)
    dens = weight_vector(z, p) * z.graph.vertex_measure
    rows = []
    for pt in centers:
        rho_p = float(z.rho[pt])
        r = z.remote_c * rho_p
        dist = z.distances_from(pt)
        remote = float(dens[dist <= max(r, 1.5)].sum())
        anchored = float(dens[dist0 <= rho_p].sum())
        rows.append({"vertex": pt, "rho": rho_p, "C_V": anchored / remote})
    c_v = max(row["C_V"] for row in rows)
    return {"C_V": c_v, "samples": rows}
