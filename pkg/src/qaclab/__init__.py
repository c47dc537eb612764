"""qaclab: a numerical laboratory for weighted-graph models of
iterated-cone geometries.

Builds quasi-isometric graph models of spaces with iterated conic ends,
then checks the estimate chain those geometries support: ball-volume
asymptotics, volume doubling, Poincare inequalities, heat-kernel Gaussian
bounds, Green-function decay, Schur-test boundedness and the weighted
mapping window.
"""

from .graphgeom import WeightedGraph, Ball, graph_laplacian, lattice_ball
from .qacbuild import (
    QacSpace,
    WeightParams,
    build_ac_space,
    build_compact_base,
    build_product,
    build_qac,
    build_two_ended,
    place_probe,
    remote_chain,
)
from .report import ComparabilityReport, compare_samples

__version__ = "0.1.0"

__all__ = [
    "WeightedGraph",
    "Ball",
    "QacSpace",
    "WeightParams",
    "ComparabilityReport",
    "graph_laplacian",
    "lattice_ball",
    "build_compact_base",
    "build_ac_space",
    "build_product",
    "build_qac",
    "build_two_ended",
    "place_probe",
    "remote_chain",
    "compare_samples",
    "__version__",
]
