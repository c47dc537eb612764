import numpy as np
import pytest

from qaclab.poincare import poincare_constant, verify_pi_scaling
from qaclab.qacbuild import WeightParams, build_lattice_cone


def test_path_graph_neumann_eigenvalue():
    # segment of N vertices with unit conductances and unit measure: the
    # first nonzero Neumann eigenvalue is 2 (1 - cos(pi / N))
    z = build_lattice_cone(1, 12.0)
    p = WeightParams(a=0.0, b=(), dims=z.dims)
    r = 5.0
    probe = poincare_constant(z, z.ball(z.basepoint, r), p, delta=1.0)
    n_pts = 2 * int(r) + 1
    oracle = 2.0 * (1.0 - np.cos(np.pi / n_pts))
    assert np.isclose(probe.lambda1, oracle, rtol=1e-8)


def test_poincare_constant_positive_and_scale_free(flat2):
    p = WeightParams(a=0.0, b=(), dims=flat2.dims)
    probes = [
        poincare_constant(flat2, flat2.ball(flat2.basepoint, r), p)
        for r in (5.0, 8.0)
    ]
    assert all(pr.lambda1 > 0 for pr in probes)
    # C_P = 1 / (lambda1 r^2) should be comparable across radii
    ratio = probes[0].C_P / probes[1].C_P
    assert 0.5 <= ratio <= 2.0


def test_pi_scaling_on_flat_lattice():
    z = build_lattice_cone(2, 32.0)
    p = WeightParams(a=0.0, b=(), dims=z.dims)
    samples = [(z.basepoint, r) for r in (6.0, 8.5, 12.0)]
    rep = verify_pi_scaling(z, p, samples)
    assert abs(rep.slope) <= 0.3, rep.summary()


def test_delta_validation(flat2):
    p = WeightParams(a=0.0, b=(), dims=flat2.dims)
    with pytest.raises(ValueError):
        poincare_constant(flat2, flat2.ball(flat2.basepoint, 4.0), p, delta=1.5)
