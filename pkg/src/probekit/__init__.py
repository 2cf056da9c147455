"""Probe, singular-sources and integrated indicators for a Neumann obstacle
inside a bounded domain, computed from synthetic Dirichlet-to-Neumann data
and checked against boundary-element and series solutions."""

from probekit.bvp import BemSystem
from probekit.dtn import DtNMatrix, assemble_dtn_pair, read_dtn, write_dtn
from probekit.geometry import Domain, build_ellipsoid_mesh, build_sphere_mesh
from probekit.indicator import IndicatorRecord, sideB_classify, third_indicator
from probekit.oracle import oracle_indicators, oracle_solve
from probekit.runge import NeedleSequenceConfig, build_needle_sequence

__version__ = "0.1.0"

__all__ = [
    "BemSystem", "DtNMatrix", "Domain", "IndicatorRecord", "NeedleSequenceConfig",
    "assemble_dtn_pair", "build_ellipsoid_mesh", "build_needle_sequence", "build_sphere_mesh",
    "oracle_indicators", "oracle_solve", "read_dtn", "sideB_classify", "third_indicator",
    "write_dtn",
]
