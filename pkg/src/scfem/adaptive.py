"""Adaptive single-level SC-FEM loop with Dörfler-type marking.

One call of :func:`step` performs a full iteration: sample solves on the
current mesh, two-level spatial indicators, coarsest-mesh solves on the
enriched grid, parametric indicators, estimates, marking and either a mesh
refinement or an index-set enrichment (never both).
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .estimation import (EnrichedExpansion, SpatialIndicators, lagrange_gram, parametric_estimate,
                         parametric_indicators, spatial_estimate, spatial_indicators_for_sample,
                         weighted_sums)
from .fem import assemble, load_vector, solve_matrix
from .index_set import IndexSet, enrich
from .mesh import SimplexMesh, new_interior_vertices, refine_with_marked
from .nodes import get_family
from .sparse_grid import build_grid

log = logging.getLogger(__name__)

SPATIAL = "spatial"
PARAMETRIC = "parametric"
NONE = "none"


def _minimal_doerfler(values: np.ndarray, keys: np.ndarray, theta: float, total: float | None = None) -> np.ndarray:
    """Positions of the largest entries whose sum first reaches ``theta * total``.

    Sorting is by value descending, ties by ascending key, so the result is
    a deterministic minimal-cardinality set. The default total is summed in
    the same sorted order, so ``theta = 1`` selects exactly the nonzero entries.
    """
    if len(values) == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((keys, -values))
    csum = np.cumsum(values[order])
    total = csum[-1] if total is None else min(float(total), csum[-1])
    target = theta * total
    if target <= 0.0:
        return np.zeros(0, dtype=int)
    k = int(np.searchsorted(csum, target, side="left")) + 1
    return order[:min(k, len(values))]


def doerfler_spatial(squared, total_squared: float | None = None, theta: float = 0.3, keys=None) -> np.ndarray:
    """Minimal set with ``theta * mu_z^2 <= sum_{marked} mu_z(xi)^2``.

    ``squared`` holds the squared local indicators; returns positions into it.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta_x must lie in (0, 1]")
    squared = np.asarray(squared, dtype=float)
    keys = np.arange(len(squared)) if keys is None else np.asarray(keys)
    return np.sort(_minimal_doerfler(squared, keys, theta, total_squared))


def doerfler_parametric(tau: Dict[tuple, float], theta: float = 0.3) -> List[tuple]:
    """Minimal subset of the margin with ``theta * sum tau <= sum_{marked} tau``."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta_y must lie in (0, 1]")
    nus = sorted(tau)
    vals = np.array([tau[nu] for nu in nus], dtype=float)
    pos = _minimal_doerfler(vals, np.arange(len(nus)), theta)
    return sorted(nus[k] for k in pos)


def select_nu_star(candidates) -> Optional[tuple]:
    """Smallest ``|nu|_1``, lexicographically first among ties; ``None`` if empty."""
    candidates = [tuple(nu) for nu in candidates]
    if not candidates:
        return None
    return min(candidates, key=lambda nu: (sum(nu), nu))


def choose_refinement(mu_bar: float, tau_bar: float, vartheta: float = 1.0) -> str:
    return SPATIAL if mu_bar >= vartheta * tau_bar else PARAMETRIC


@dataclass
class IterationRecord:
    iteration: int
    refinement: str
    dof: int
    dof_total_vertices: int
    mu_bar: float
    tau_bar: float
    mu: float
    tau: float
    eta: float
    n_colpts: int
    n_triangles: int
    wall_ms: float
    n_vertices: int = 0
    index_set: list = field(default_factory=list)
    margin_size: int = 0
    n_marked: int = 0
    nu_star: Optional[tuple] = None
    tau_indicators: Dict[tuple, float] = field(default_factory=dict)
    details: dict = field(default_factory=dict)


@dataclass
class AdaptiveState:
    """Everything carried between iterations.

    Solution caches are keyed by per-dimension node ordinals. ``current``
    and ``fine`` hold solutions on ``mesh`` and ``mesh.uniform`` and are
    cleared on every mesh refinement; ``coarse`` holds initial-mesh
    solutions and is never cleared.
    """

    problem: object
    family: object
    mesh: SimplexMesh
    index_set: IndexSet
    theta_x: float = 0.3
    theta_y: float = 0.3
    vartheta: float = 1.0
    tol: float = 2e-2
    estimate_period: int = 1
    solver: str = "auto"
    keep_indicators: bool = False
    iteration: int = 0
    converged: bool = False
    coarse_mesh: SimplexMesh = None
    coarse: dict = field(default_factory=dict)
    current: dict = field(default_factory=dict)
    fine: dict = field(default_factory=dict)
    indicators: dict = field(default_factory=dict)
    solve_counts: Counter = field(default_factory=Counter)
    coarse_solve_counts: Counter = field(default_factory=Counter)
    history: list = field(default_factory=list)
    _grams: dict = field(default_factory=dict, repr=False)
    _enriched: dict = field(default_factory=dict, repr=False)
    _loads: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.family = get_family(self.family)
        if self.coarse_mesh is None:
            self.coarse_mesh = self.mesh.root

    @classmethod
    def initial(cls, problem, family, **params) -> "AdaptiveState":
        mesh = problem.initial_mesh()
        return cls(problem=problem, family=family, mesh=mesh, index_set=IndexSet.root(problem.M),
                   coarse_mesh=mesh, **params)

    def load(self, mesh: SimplexMesh) -> np.ndarray:
        key = id(mesh)
        if key not in self._loads or self._loads[key][0] is not mesh:
            self._loads = {k: v for k, v in self._loads.items() if v[0] is self.mesh or v[0] is self.mesh.uniform
                           or v[0] is self.coarse_mesh}
            self._loads[key] = (mesh, load_vector(mesh, self.problem.forcing))
        return self._loads[key][1]

    def gram(self, index_set: IndexSet, grid) -> np.ndarray:
        if index_set not in self._grams:
            self._grams[index_set] = lagrange_gram(index_set, self.family, grid)
        return self._grams[index_set]

    def enriched(self, index_set: IndexSet) -> EnrichedExpansion:
        if index_set not in self._enriched:
            self._enriched[index_set] = EnrichedExpansion.build(index_set, self.family)
        return self._enriched[index_set]

    def _solve(self, mesh, z, rhs):
        system = assemble(mesh, self.problem.sample(z), self.problem.forcing, rhs=rhs)
        return system, solve_matrix(system.matrix, system.rhs, self.solver)

    def coarse_solutions(self, grid) -> np.ndarray:
        cols = []
        for key, z in zip(map(tuple, grid.ordinals.tolist()), grid.coords):
            if key not in self.coarse:
                self.coarse[key] = self._solve(self.coarse_mesh, z, self.load(self.coarse_mesh))[1]
                self.coarse_solve_counts[key] += 1
            cols.append(self.coarse[key])
        return np.column_stack(cols)

    def current_solutions(self, grid) -> np.ndarray:
        cols = []
        for key, z in zip(map(tuple, grid.ordinals.tolist()), grid.coords):
            if key not in self.current:
                self.current[key] = self._solve(self.mesh, z, self.load(self.mesh))[1]
                self.solve_counts["current"] += 1
            cols.append(self.current[key])
        return np.column_stack(cols)

    def refined_data(self, grid, samples: np.ndarray, need_fine: bool):
        """Spatial indicators (and refined-mesh solutions when asked) per point."""
        fine_mesh = self.mesh.uniform
        ind, fine_cols = [], []
        for k, (key, z) in enumerate(zip(map(tuple, grid.ordinals.tolist()), grid.coords)):
            want_fine = need_fine and key not in self.fine
            if key not in self.indicators or want_fine:
                system = assemble(fine_mesh, self.problem.sample(z), self.problem.forcing,
                                  rhs=self.load(fine_mesh))
                if key not in self.indicators:
                    self.indicators[key] = spatial_indicators_for_sample(
                        self.mesh, None, None, samples[:, k], fine_system=system)
                if want_fine:
                    guess = self.mesh.uniform_prolongation @ samples[:, k]
                    self.fine[key] = solve_matrix(system.matrix, system.rhs, self.solver, x0=guess)
                    self.solve_counts["fine"] += 1
            ind.append(self.indicators[key])
            if need_fine:
                fine_cols.append(self.fine[key])
        values = np.array(ind).reshape(len(grid), -1)
        spatial = SpatialIndicators(vertices=new_interior_vertices(self.mesh), values=values)
        return spatial, (np.column_stack(fine_cols) if need_fine else None)


def step(state: AdaptiveState):
    """Run one iteration, updating ``state`` in place.

    Returns ``(state, record)``. When the estimate drops below the
    tolerance the record has refinement type ``"none"`` and
    ``state.converged`` is set.
    """
    t0 = time.perf_counter()
    fam = state.family
    I = state.index_set
    mesh = state.mesh
    grid = build_grid(I, fam)

    # (i) Galerkin solves on the current mesh
    U = state.current_solutions(grid)
    # (ii) spatial indicators, plus refined-mesh solves when estimating
    estimating = state.iteration % state.estimate_period == 0
    spatial, U_fine = state.refined_data(grid, U, estimating)
    # (iii) coarsest-mesh solves on the enriched grid
    enriched = state.enriched(I)
    U0 = state.coarse_solutions(enriched.grid)
    # (iv) parametric indicators
    tau_ind = parametric_indicators(I, fam, U0, state.coarse_mesh, enriched)

    lam = state.gram(I, grid)
    mu_bar, tau_bar = weighted_sums(spatial, tau_ind, np.diag(lam))
    mu = tau = float("nan")
    if estimating:
        mu = spatial_estimate(lam, U_fine, U, mesh)
        tau = parametric_estimate(I, fam, U0, state.coarse_mesh, enriched)
    eta = mu + tau

    record = IterationRecord(
        iteration=state.iteration, refinement=NONE,
        dof=len(grid) * mesh.n_dofs, dof_total_vertices=len(grid) * mesh.n_vertices,
        mu_bar=mu_bar, tau_bar=tau_bar, mu=mu, tau=tau, eta=eta,
        n_colpts=len(grid), n_triangles=mesh.n_triangles, wall_ms=0.0,
        n_vertices=mesh.n_vertices, index_set=I.to_json(), margin_size=len(enriched.margin),
        tau_indicators=dict(tau_ind),
    )
    if state.keep_indicators:
        record.details["spatial"] = spatial
        record.details["lambda_diag"] = np.diag(lam).copy()

    if estimating and eta < state.tol:
        state.converged = True
        record.wall_ms = 1e3 * (time.perf_counter() - t0)
        state.history.append(record)
        return state, record

    # (v) marking, (vi) refinement
    kind = choose_refinement(mu_bar, tau_bar, state.vartheta)
    record.refinement = kind
    if kind == SPATIAL:
        marked = set()
        per_point = []
        for k in range(len(grid)):
            sq = spatial.values[k] ** 2
            pos = doerfler_spatial(sq, None, state.theta_x, keys=spatial.vertices)
            per_point.append(len(pos))
            marked.update(spatial.vertices[pos].tolist())
        marked = np.array(sorted(marked), dtype=np.int64)
        record.n_marked = len(marked)
        if state.keep_indicators:
            record.details["marked_vertices"] = marked
            record.details["marked_per_point"] = per_point
        new_mesh = refine_with_marked(mesh, marked)
        if new_mesh is not mesh:
            state.mesh = new_mesh
            state.current.clear()
            state.fine.clear()
            state.indicators.clear()
    else:
        marked_idx = doerfler_parametric(tau_ind, state.theta_y)
        nu_star = None
        if marked_idx:
            nu_star = select_nu_star(sorted(set(enriched.margin) - set(marked_idx)))
        added = set(marked_idx) | ({nu_star} if nu_star is not None else set())
        record.n_marked = len(marked_idx)
        record.nu_star = nu_star
        if state.keep_indicators:
            record.details["marked_indices"] = marked_idx
        state.index_set = enrich(I, added)

    state.iteration += 1
    record.wall_ms = 1e3 * (time.perf_counter() - t0)
    state.history.append(record)
    log.info("iter %d %s dof=%d eta=%.4e mu_bar=%.4e tau_bar=%.4e", record.iteration, kind,
             record.dof, eta, mu_bar, tau_bar)
    return state, record


@dataclass
class RunResult:
    history: List[IterationRecord]
    converged: bool
    state: AdaptiveState

    def __iter__(self):
        return iter(self.history)

    def __len__(self):
        return len(self.history)


def run(problem, family="leja", tol: float = 2e-2, theta_x: float = 0.3, theta_y: float = 0.3,
        vartheta: float = 1.0, estimate_period: int = 1, max_iter: int = 200, solver: str = "auto",
        keep_indicators: bool = False, callback=None) -> RunResult:
    """Iterate :func:`step` until ``mu + tau < tol`` or ``max_iter`` records exist."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    state = AdaptiveState.initial(problem, family, theta_x=theta_x, theta_y=theta_y, vartheta=vartheta,
                                  tol=tol, estimate_period=estimate_period, solver=solver,
                                  keep_indicators=keep_indicators)
    while not state.converged and len(state.history) < max_iter:
        _, record = step(state)
        if callback is not None:
            callback(state, record)
    return RunResult(history=state.history, converged=state.converged, state=state)
