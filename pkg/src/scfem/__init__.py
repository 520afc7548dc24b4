"""Adaptive single-level stochastic collocation finite elements for parametric diffusion."""

from .adaptive import AdaptiveState, IterationRecord, RunResult, run, step
from .estimator import AdaptiveSCFEM
from .index_set import IndexSet, enrich, reduced_margin
from .mesh import SimplexMesh, l_shape_mesh, refine_with_marked, uniform_refine, unit_square_mesh
from .nodes import get_family
from .problems import cookie_problem, fourier_exp_problem, get_problem
from .sparse_grid import build_grid, expand_surpluses

__all__ = [
    "AdaptiveSCFEM", "AdaptiveState", "IterationRecord", "RunResult", "run", "step",
    "IndexSet", "enrich", "reduced_margin", "SimplexMesh", "l_shape_mesh", "refine_with_marked",
    "uniform_refine", "unit_square_mesh", "get_family", "cookie_problem", "fourier_exp_problem",
    "get_problem", "build_grid", "expand_surpluses",
]
__version__ = "0.1.0"
