import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qaclab.qacbuild import (
    WeightParams,
    build_compact_base,
    build_lattice_cone,
    build_product,
    build_qac,
    place_probe,
    remote_chain,
)
from tests.conftest import circle_cone


def test_weight_params_derived_quantities():
    p = WeightParams(a=0.5, b=(1.0, -0.5), dims=(2, 5, 3))
    assert p.depth == 2
    assert p.n == 3
    assert p.m == (2, 5)
    # nu_1 = m_0, nu_2 = m_1 - m_0
    assert p.nu == (2.0, 3.0)
    assert p.b_abs(0) == 0.0
    assert p.b_abs(1) == 1.0
    assert p.b_abs(2) == 0.5


@settings(deadline=None, max_examples=30)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=3))
def test_b_abs_is_prefix_sum(b):
    dims = tuple(range(2, 2 + len(b))) + (4,)
    p = WeightParams(a=0.0, b=tuple(b), dims=dims)
    for ell in range(len(b) + 1):
        assert np.isclose(p.b_abs(ell), sum(b[:ell]))


def test_lattice_cone_invariants():
    z = build_lattice_cone(2, 16.0)
    z.check_invariants()
    assert z.depth == 0
    assert np.all(z.rho >= 1.0)
    assert z.w.shape == (z.n_vertices, 0)
    assert z.rho[z.basepoint] == 1.0


def test_ac_space_invariants(product64):
    cone = circle_cone(32.0)
    cone.check_invariants()
    product64.check_invariants()
    assert product64.depth == 1
    assert np.all(product64.w > 0) and np.all(product64.w <= 1.0)


def test_product_radial_function(product64):
    z = product64
    # rho is comparable to max of the factor radii: between max and sqrt(2) max
    assert z.rho[z.basepoint] <= 2.0
    assert z.rho.max() <= np.sqrt(2.0) * z.truncation_radius * 1.01


def test_remote_chain_on_and_off_axis(product64):
    z = product64
    axis = place_probe(z, w1=0.05, rho=40.0)
    bulk = place_probe(z, w1=1.0, rho=40.0)
    assert remote_chain(z, axis).indices == (1,)
    assert remote_chain(z, bulk).indices == ()


def test_remote_chain_rejects_bad_c(product64):
    with pytest.raises(ValueError):
        remote_chain(product64, 0, c=1.5)


def test_place_probe_hits_requested_weight(product64):
    for w1 in (1 / 8, 1 / 16):
        v = place_probe(product64, w1=w1, rho=40.0)
        assert 0.5 * w1 <= product64.w[v, 0] <= 2.0 * w1


def test_build_qac_recipes_match_direct_builders():
    recipe = {"type": "lattice", "dimension": 2, "r_max": 12}
    z = build_qac(recipe)
    z2 = build_lattice_cone(2, 12.0)
    assert z.n_vertices == z2.n_vertices
    assert z.dims == z2.dims


def test_build_qac_rejects_unknown_type():
    with pytest.raises(ValueError):
        build_qac({"type": "moebius", "r_max": 8})


def test_two_ended_has_both_ends(two_ended8):
    z = two_ended8
    z.check_invariants()
    assert set(np.unique(z.ends)) == {0, 1}
    # Dirichlet boundary sits at both outer shells
    for e in (0, 1):
        assert z.graph.boundary[z.ends == e].any()


def test_compact_base_torus():
    g = build_compact_base({"type": "torus_graph", "resolution": 6, "dimension": 2})
    assert g.n_vertices == 36
    deg = g.degrees()
    assert np.all(deg == 4)


def test_weight_params_validation():
    with pytest.raises(ValueError):
        WeightParams(a=0.0, b=(1.0,), dims=(4,))  # depth mismatch
