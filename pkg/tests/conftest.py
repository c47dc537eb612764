"""Shared spaces for the test suite.

Building spaces dominates test runtime, so anything used by more than
one module test is session-scoped here.
"""

import pytest

from qaclab.qacbuild import (
    build_ac_space,
    build_compact_base,
    build_lattice_cone,
    build_product,
    build_two_ended,
)


def circle_cone(r_max, res=12):
    cs = build_compact_base(
        {"type": "sphere_graph", "resolution": res, "dimension": 1}
    )
    return build_ac_space(cs, r_max)


def circle_product(r_max, res=12):
    return build_product(circle_cone(r_max, res), circle_cone(r_max, res))


@pytest.fixture(scope="session")
def flat2():
    return build_lattice_cone(2, 24.0)


@pytest.fixture(scope="session")
def flat3():
    return build_lattice_cone(3, 24.0)


@pytest.fixture(scope="session")
def product64():
    return circle_product(64.0)


@pytest.fixture(scope="session")
def sector_product40():
    # product of two quarter-plane lattice wedges; unit mesh at every
    # scale, so remote balls around deep-wedge probes are resolved
    f1 = build_lattice_cone(2, 40.0, sector=True, remote_c=0.25)
    f2 = build_lattice_cone(2, 40.0, sector=True, remote_c=0.25)
    return build_product(f1, f2, remote_c=0.25)


@pytest.fixture(scope="session")
def two_ended8():
    cs = build_compact_base(
        {"type": "sphere_graph", "resolution": 8, "dimension": 2}
    )
    return build_two_ended(cs, 48.0)
