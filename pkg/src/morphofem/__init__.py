"""Growth-induced wrinkling of fibre-reinforced film/substrate bilayers
with a mixed quadratic tetrahedron (T2P0F0) and Newton continuation."""

from .material import GrowthSpec, MaterialParams
from .mesh import FILM, SUBSTRATE, Mesh, build_bilayer_box
from .solver import ContinuationConfig, PerturbationSpec, Problem, continuation_run, newton_solve

__version__ = "0.1.0"

__all__ = [
    "GrowthSpec",
    "MaterialParams",
    "Mesh",
    "FILM",
    "SUBSTRATE",
    "build_bilayer_box",
    "ContinuationConfig",
    "PerturbationSpec",
    "Problem",
    "continuation_run",
    "newton_solve",
]
