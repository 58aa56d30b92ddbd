"""Hybrid facet-coupled discontinuous Galerkin solver for 2D incompressible flow.

Cell velocity and pressure fields are discontinuous across cells; continuous
facet fields enforce weak continuity of the numerical mass and momentum
fluxes. Cell unknowns are eliminated by static condensation, so the global
system is the size of a continuous method on the same mesh.
"""

from .errors import (
    CondensationError,
    ConfigError,
    HybridNSError,
    InvalidArgumentError,
    PicardDivergenceError,
    SingularMatrixError,
    UnsupportedOrderError,
)
from .forms import Params, State
from .mesh import Mesh, build_rect_mesh, tag_boundary
from .spaces import SpaceSpec, build_dofmap

__all__ = [
    "CondensationError",
    "ConfigError",
    "HybridNSError",
    "InvalidArgumentError",
    "Mesh",
    "Params",
    "PicardDivergenceError",
    "SingularMatrixError",
    "SpaceSpec",
    "State",
    "UnsupportedOrderError",
    "build_dofmap",
    "build_rect_mesh",
    "tag_boundary",
]

__version__ = "0.1.0"
