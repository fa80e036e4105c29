"""Numerical laboratory for a coupled map/metric harmonic-map gradient flow.

Modules:
  hypgeom    hyperbolic collar geometry and degeneration bookkeeping
  torusflow  coupled map/metric flow on the flat unit-area torus
  collarflow map-only flow on a degenerating collar cylinder
  singular   concentration detection, bubble extraction, energy ledger
  ricci      conformal Ricci continuation on sphere components
  cli        orchestration, persistence, decomposition pipeline
"""

from . import collarflow, hypgeom, ricci, runio, singular, torusflow
from ._kernels import HAS_NUMBA, USE_NUMBA

__version__ = "0.1.0"

__all__ = [
    "collarflow",
    "hypgeom",
    "ricci",
    "runio",
    "singular",
    "torusflow",
    "HAS_NUMBA",
    "USE_NUMBA",
    "__version__",
]
