"""Adaptive Galerkin BEM for the weakly-singular integral equation V phi = f in 2D."""

from abem.geometry import (
    BoundaryGeometry,
    CircularArc,
    GeometryError,
    LineSegment,
    circle,
    lshape,
    square,
)
from abem.mesh import Mesh, initial_mesh, overlay, refine
from abem.operators import PdeOperator, laplace, lame

__all__ = [
    "BoundaryGeometry",
    "CircularArc",
    "GeometryError",
    "LineSegment",
    "Mesh",
    "PdeOperator",
    "circle",
    "initial_mesh",
    "lame",
    "laplace",
    "lshape",
    "overlay",
    "refine",
    "square",
]

__version__ = "0.1.0"
