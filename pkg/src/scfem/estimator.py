"""Estimator-style front end to the adaptive SC-FEM loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _validation as v
from .adaptive import run
from .problems import ParametricProblem, get_problem
from .sparse_grid import build_grid, expand_surpluses


class AdaptiveSCFEM(BaseEstimator):
    """Adaptive stochastic collocation surrogate for a parametric diffusion problem.

    ``fit`` runs the adaptive loop on a problem; ``predict`` evaluates the
    resulting sparse-grid interpolant of the Galerkin solutions.

    Parameters
    ----------
    family : {"leja", "cc"}
        Nested 1D node family.
    tol : float
        Stop once the combined estimate ``mu + tau`` falls below this value.
    theta_x, theta_y : float
        Dörfler fractions for vertices and multi-indices, in ``(0, 1]``.
    vartheta : float
        Spatial refinement is chosen when ``mu_bar >= vartheta * tau_bar``.
    estimate_period : int
        Compute the (costly) estimates every this many iterations.
    max_iter : int
        Upper bound on the number of iterations.
    solver : {"auto", "direct", "amg", "pcg"}
        Linear solver for the sample problems.
    keep_indicators : bool
        Keep spatial indicators and marked sets in the history.

    Attributes
    ----------
    history_ : list of IterationRecord
    converged_ : bool
    mesh_ : SimplexMesh
        Final mesh.
    index_set_ : IndexSet
        Final multi-index set.
    grid_ : SparseGrid
    solutions_ : ndarray of shape (n_points, n_dofs)
        Galerkin solutions on ``mesh_`` at the points of ``grid_``.
    """

    def __init__(self, family="leja", tol=2e-2, theta_x=0.3, theta_y=0.3, vartheta=1.0,
                 estimate_period=1, max_iter=200, solver="auto", keep_indicators=False):
        self.family = family
        self.tol = tol
        self.theta_x = theta_x
        self.theta_y = theta_y
        self.vartheta = vartheta
        self.estimate_period = estimate_period
        self.max_iter = max_iter
        self.solver = solver
        self.keep_indicators = keep_indicators

    def _checked_params(self) -> dict:
        return dict(
            family=v.check_choice(self.family, v.FAMILIES, "family"),
            tol=v.check_positive(self.tol, "tol"),
            theta_x=v.check_fraction(self.theta_x, "theta_x"),
            theta_y=v.check_fraction(self.theta_y, "theta_y"),
            vartheta=v.check_positive(self.vartheta, "vartheta"),
            estimate_period=v.check_positive_int(self.estimate_period, "estimate_period"),
            max_iter=v.check_positive_int(self.max_iter, "max_iter"),
            solver=v.check_choice(self.solver, v.SOLVERS, "solver"),
            keep_indicators=bool(self.keep_indicators),
        )

    def fit(self, problem, y=None, callback=None):
        """Run the adaptive loop.

        Parameters
        ----------
        problem : ParametricProblem or str
            A problem instance or a registered name (``"cookie"``, ``"fourier"``).
        y : ignored
        callback : callable, optional
            Called as ``callback(state, record)`` after every iteration.
        """
        params = self._checked_params()
        if isinstance(problem, str):
            problem = get_problem(problem)
        if not isinstance(problem, ParametricProblem):
            raise TypeError("problem must be a ParametricProblem or a registered problem name")
        result = run(problem, callback=callback, **params)
        state = result.state
        self.problem_ = problem
        self.history_ = result.history
        self.converged_ = result.converged
        self.n_iter_ = len(result.history)
        self.mesh_ = state.mesh
        self.index_set_ = state.index_set
        self.state_ = state
        self.grid_ = build_grid(state.index_set, state.family)
        self.solutions_ = state.current_solutions(self.grid_).T
        self.expansion_ = expand_surpluses(state.index_set, state.family, values=self.solutions_,
                                           grid=self.grid_).compressed()
        return self

    def predict(self, Y) -> np.ndarray:
        """Interior nodal values of the surrogate at parameter points ``Y``.

        Returns an array of shape ``(n_samples, n_dofs)`` on ``mesh_``.
        """
        check_is_fitted(self, "expansion_")
        Y = v.check_parameters(Y, self.problem_.M)
        return self.expansion_.evaluate(Y)

    @property
    def estimate_(self) -> float:
        """Last computed combined estimate ``mu + tau``."""
        check_is_fitted(self, "history_")
        finite = [r.eta for r in self.history_ if np.isfinite(r.eta)]
        return finite[-1] if finite else float("nan")
