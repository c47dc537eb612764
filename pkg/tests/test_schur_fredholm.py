import numpy as np
import pytest

import qaclab.schur_fredholm as sf
from qaclab.green import GreenSolver
from qaclab.qacbuild import WeightParams
from qaclab.spectral import assemble
from tests.conftest import circle_product


@pytest.fixture(scope="module")
def product32():
    return circle_product(32.0)


def _center(window):
    delta = sum(window["delta"]) / 2
    tau = tuple(sum(t) / 2 for t in window["tau"])
    return delta, tau


def test_window_derivation_matches_closed_form():
    cases = [
        WeightParams(a=0.0, b=(0.0,), dims=(2, 4)),
        WeightParams(a=1.0, b=(1.0,), dims=(2, 4)),
        WeightParams(a=0.5, b=(1.0, -0.5), dims=(2, 5, 3)),
    ]
    for p in cases:
        derived = sf.derive_window_symbolic(p)
        predicted = sf.predicted_window(p)
        assert np.allclose(derived["delta"], predicted["delta"])
        assert np.allclose(derived["tau"], predicted["tau"])
        assert derived["delta_endpoints_open"] == (True, True)
        assert derived["tau_endpoints_open"] == (False, False)
        assert derived["cumulative_bounds_implied"]


def test_schur_conditions_name_violations():
    p = WeightParams(a=1.0, b=(1.0,), dims=(2, 4))
    assert sf.schur_conditions(p, alpha=-2.0, beta=(-2.0,)) == []
    bad = sf.schur_conditions(p, alpha=-1.0, beta=(-2.0,))
    assert any("alpha" in name for name in bad)
    bad = sf.schur_conditions(p, alpha=-2.0, beta=(5.0,))
    assert any("beta" in name for name in bad)


def test_schur_bound_check_accepts_valid_point(product32):
    z = product32
    p = WeightParams(a=1.0, b=(1.0,), dims=z.dims)
    op = assemble(z, p)
    solver = GreenSolver(op, "schrodinger")
    out = sf.schur_bound_check(z, p, alpha=-2.0, beta=(-2.0,), solver=solver)
    assert np.isfinite(out["sup_ratio"])
    assert out["sup_ratio"] <= 10.0


def test_schur_bound_check_rejects_bad_alpha(product32):
    z = product32
    p = WeightParams(a=1.0, b=(1.0,), dims=z.dims)
    op = assemble(z, p)
    solver = GreenSolver(op, "schrodinger")
    with pytest.raises(ValueError, match="alpha"):
        sf.schur_bound_check(z, p, alpha=-1.0, beta=(-2.0,), solver=solver)


def test_weighted_norm_is_homogeneous(product32):
    z = product32
    rng = np.random.default_rng(0)
    f = rng.standard_normal(z.n_vertices)
    wn = sf.WeightedNorm(delta=-1.0, tau=(0.5,), order="L2")
    n1 = sf.weighted_norm(z, f, wn)
    n3 = sf.weighted_norm(z, 3.0 * f, wn)
    assert np.isclose(n3, 3.0 * n1, rtol=1e-12)


def test_sobolev_mapping_bound_stable_under_doubling(product32):
    # the Green operator maps the shifted L2 space into the weighted H2
    # space with a norm that does not drift as the truncation doubles
    def max_ratio(z, n_f=20):
        p = WeightParams(a=1.0, b=(1.0,), dims=z.dims)
        op = assemble(z, p)
        solver = GreenSolver(op, "schrodinger")
        delta, tau = _center(sf.predicted_window(p))
        wn_out = sf.WeightedNorm(delta=delta, tau=tau, order="H2")
        wn_in = sf.WeightedNorm(
            delta=delta - 2, tau=tuple(t - 2 for t in tau), order="L2"
        )
        rng = np.random.default_rng(0)
        worst = 0.0
        interior = ~z.graph.boundary
        for _ in range(n_f):
            f = rng.standard_normal(z.n_vertices) * interior
            g = solver.apply_kernel(f)
            ratio = sf.weighted_norm(z, g, wn_out, op) / sf.weighted_norm(
                z, f, wn_in
            )
            worst = max(worst, ratio)
        return worst

    c32 = max_ratio(product32)
    c64 = max_ratio(circle_product(64.0))
    assert np.isfinite(c32)
    assert 1 / 1.25 <= c64 / c32 <= 1.25


def test_kernel_norm_estimate_reproducible(product32):
    z = product32
    p = WeightParams(a=0.0, b=(0.0,), dims=z.dims)
    solver = GreenSolver(assemble(z, p), "schrodinger")
    delta, tau = _center(sf.predicted_window(p))
    n1 = sf.kernel_norm_estimate(z, p, delta, tau, solver, n_iters=20, seed=0)
    n2 = sf.kernel_norm_estimate(z, p, delta, tau, solver, n_iters=20, seed=0)
    assert n1 > 0
    assert np.isclose(n1, n2, rtol=1e-12)


def test_end_cutoffs_partition_of_unity(two_ended8):
    z = two_ended8
    cuts = [
        sf.make_end_cutoffs(z, e, ramp_lo=-4.0, ramp_hi=4.0, gap=4.0)
        for e in (0, 1)
    ]
    total = cuts[0].chi + cuts[1].chi
    assert np.abs(total - 1.0).max() < 1e-12
    for c in cuts:
        assert np.all(c.chi_tilde[c.chi > 0] >= 1 - 1e-12)
        assert c.collar.any()


def test_parametrix_remainder_supported_on_collar(two_ended8):
    z = two_ended8
    p = WeightParams(a=0.0, b=(), dims=z.dims)
    op = assemble(z, p)
    cuts = [
        sf.make_end_cutoffs(z, e, ramp_lo=-4.0, ramp_hi=4.0, gap=4.0)
        for e in (0, 1)
    ]
    out = sf.parametrix_glue(op, cuts, n_checks=4, seed=0)
    assert out["remainder_off_collar"] <= 1e-10
    assert out["collar_size"] > 0

    rng = np.random.default_rng(5)
    f = rng.standard_normal(z.n_vertices) * ~z.graph.boundary
    _, hist = out["glued"].corrected_solve(f)
    assert hist[-1] <= 1e-8


def test_glued_operator_rejects_bad_partition(two_ended8):
    z = two_ended8
    p = WeightParams(a=0.0, b=(), dims=z.dims)
    op = assemble(z, p)
    c0 = sf.make_end_cutoffs(z, 0, ramp_lo=-4.0, ramp_hi=4.0, gap=4.0)
    with pytest.raises(ValueError):
        sf.GluedOperator(op, [c0, c0])
