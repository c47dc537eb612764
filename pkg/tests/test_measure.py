import numpy as np
import pytest

from qaclab.measure import (
    ball_volume_function,
    doubling_constant,
    growth_conditions_hold,
    stratified_sample,
    verify_anchored_volume,
    verify_nonremote_volume,
    verify_remote_volume,
    verify_volume_comparison,
    weighted_volume,
)
from qaclab.qacbuild import WeightParams, place_probe


def test_flat3_ball_volume_matches_cross_polytope(flat3):
    # graph distance on the unit lattice is the l1 metric, so the ball is
    # a cross-polytope of volume (4/3) r^3 up to an O(r^2) surface term
    p = WeightParams(a=0.0, b=(), dims=flat3.dims)
    r = 8.0
    stats = weighted_volume(flat3, flat3.ball(flat3.basepoint, r), p)
    l1_vol = 4 / 3 * r**3
    assert 0.8 * l1_vol <= stats.mu <= 1.5 * l1_vol


def test_flat3_anchored_exponent(flat3):
    p = WeightParams(a=0.0, b=(), dims=flat3.dims)
    rep = verify_anchored_volume(flat3, p)
    assert abs(rep.slope) <= 0.25
    assert rep.band <= np.log(10.0)


def test_flat3_doubling_constant_near_eight(flat3):
    p = WeightParams(a=0.0, b=(), dims=flat3.dims)
    out = doubling_constant(flat3, p, rng=0)
    assert 4.0 <= out["C_D"] <= 16.0


def test_growth_conditions():
    dims = (2, 4)
    assert growth_conditions_hold(WeightParams(a=0.0, b=(0.0,), dims=dims))
    assert growth_conditions_hold(WeightParams(a=1.0, b=(0.0,), dims=dims))
    assert growth_conditions_hold(WeightParams(a=0.0, b=(-1.0,), dims=dims))
    assert not growth_conditions_hold(WeightParams(a=-5.0, b=(0.0,), dims=dims))


def test_anchored_volume_weighted_exponents(product64):
    # fitted growth exponent of the anchored volume, away from the cap
    # where the first couple of shells distort the count
    z = product64
    dist = z.distances_from(z.basepoint)
    r_hi = 0.85 * dist[z.graph.boundary].min()
    radii = np.geomspace(4.0, r_hi, 12)
    for a, b1 in ((0.0, 0.0), (1.0, 0.0), (0.0, -1.0)):
        p = WeightParams(a=a, b=(b1,), dims=z.dims)
        mu = [
            weighted_volume(z, z.ball(z.basepoint, r), p).mu for r in radii
        ]
        expo = np.polyfit(np.log(radii), np.log(mu), 1)[0]
        assert abs(expo - (a + p.n)) <= 0.25, (a, b1, expo)


def test_volume_comparison_constant_finite(product64):
    p = WeightParams(a=0.0, b=(0.0,), dims=product64.dims)
    out = verify_volume_comparison(product64, p, rng=0)
    assert np.isfinite(out["C_V"])
    assert out["C_V"] >= 1.0


def test_volume_comparison_rejects_bad_growth(product64):
    p = WeightParams(a=-5.0, b=(0.0,), dims=product64.dims)
    with pytest.raises(ValueError):
        verify_volume_comparison(product64, p)


def test_nonremote_volume_scaling():
    # 2d keeps the discrete radius offset small at desk-scale radii; the
    # 4d product only reaches its asymptotic exponent at radii >~ 40
    from qaclab.qacbuild import build_lattice_cone

    z = build_lattice_cone(2, 32.0)
    p = WeightParams(a=0.0, b=(), dims=z.dims)
    rep = verify_nonremote_volume(z, p, rng=0)
    assert abs(rep.slope) <= 0.25, rep.summary()
    assert rep.band <= rep.band_tol, rep.summary()


def test_remote_volume_bands():
    # a product of two lattice half-lines: remote bands around deep-wedge
    # probes are wide and the 2d discrete radius offset stays small
    from qaclab.qacbuild import build_lattice_cone, build_product

    z = build_product(
        build_lattice_cone(1, 200.0, remote_c=0.25),
        build_lattice_cone(1, 200.0, remote_c=0.25),
        remote_c=0.25,
    )
    p = WeightParams(a=0.0, b=(0.0,), dims=z.dims)
    # w must sit well below c/2 = 1/8, or the stratum wrap radius
    # 2 w rho swallows the whole band
    probes = [place_probe(z, w1=1 / 16, rho=120.0, interior_margin=0.2)]
    reps = verify_remote_volume(z, p, probes)
    assert reps, "no usable bands at the probe"
    for rep in reps:
        assert abs(rep.slope) <= rep.slope_tol, rep.summary()
        assert rep.band <= rep.band_tol, rep.summary()


def test_ball_volume_function_is_cumulative(flat2):
    p = WeightParams(a=0.0, b=(), dims=flat2.dims)
    dists, cum = ball_volume_function(flat2, flat2.basepoint, p)
    assert np.all(np.diff(dists) >= 0)
    assert np.all(np.diff(cum) > 0)
    stats = weighted_volume(flat2, flat2.ball(flat2.basepoint, 5.0), p)
    idx = np.searchsorted(dists, 5.0, side="right") - 1
    assert np.isclose(cum[idx], stats.mu)


def test_stratified_sample_covers_strata(product64):
    rng = np.random.default_rng(1)
    pts = stratified_sample(product64, rng, 4)
    w = product64.w[pts, 0]
    assert w.min() < 0.25 and w.max() > 0.75
