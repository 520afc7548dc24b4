"""Hierarchical a posteriori indicators and estimates for SC-FEM approximations.

Sample solutions are passed around as dense matrices with one column per
collocation point (in grid order) and one row per interior vertex of the
mesh they live on. Norms in ``L^2_pi(Gamma; X)`` are evaluated exactly as
``sum_{z z'} Lambda[z, z'] (grad w_z, grad w_z')`` with ``Lambda`` the
parametric Gram matrix of the relevant Lagrange functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Sequence

import numpy as np

from .fem import FESystem, assemble, laplace_matrix, x_gram
from .index_set import ContractError, IndexSet, reduced_margin
from .mesh import SimplexMesh, new_interior_vertices
from .sparse_grid import (SparseGrid, SurplusExpansion, bochner_norm_sq, build_grid,
                          expand_surpluses, parametric_gram, restrict_to_indices)


@dataclass
class SpatialIndicators:
    """Two-level indicators ``values[z, k]`` for vertex ``vertices[k]`` of the refined mesh."""

    vertices: np.ndarray
    values: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        """Aggregate ``mu_z = sqrt(sum_xi mu_z(xi)^2)`` per collocation point."""
        return np.sqrt(np.sum(self.values ** 2, axis=1))


@dataclass
class EstimateBundle:
    mu: float
    tau: float
    mu_bar: float
    tau_bar: float
    tau_indicators: Dict[tuple, float] = field(default_factory=dict)

    @property
    def eta(self) -> float:
        return self.mu + self.tau


def hat_norms(fine: SimplexMesh) -> np.ndarray:
    """``||grad phi_xi||`` for every interior vertex of ``fine`` (dof order)."""
    return np.sqrt(laplace_matrix(fine).diagonal())


def spatial_indicators_for_sample(mesh: SimplexMesh, coefficient, f, u: np.ndarray,
                                  fine_system: FESystem | None = None) -> np.ndarray:
    """``mu_z(xi)`` for all new interior vertices ``xi``, for one sample ``u``."""
    fine = mesh.uniform
    if fine_system is None:
        fine_system = assemble(fine, coefficient, f)
    P = mesh.uniform_prolongation
    res = fine_system.rhs - fine_system.matrix @ (P @ u)
    rows = fine.dof_map[new_interior_vertices(mesh)]
    return np.abs(res[rows]) / hat_norms(fine)[rows]


def spatial_indicators(mesh: SimplexMesh, grid: SparseGrid, samples: np.ndarray, problem,
                       fine_systems: Sequence[FESystem] | None = None) -> SpatialIndicators:
    """Two-level spatial indicators at every collocation point of ``grid``.

    ``samples[:, k]`` is the Galerkin solution on ``mesh`` at point ``k``.
    """
    samples = np.asarray(samples, dtype=float).reshape(mesh.n_dofs, -1)
    if samples.shape[1] != len(grid):
        raise ContractError("one sample per collocation point is required")
    vals = []
    for k, z in enumerate(grid.coords):
        sys_k = None if fine_systems is None else fine_systems[k]
        vals.append(spatial_indicators_for_sample(mesh, problem.sample(z), problem.forcing,
                                                  samples[:, k], sys_k))
    vals = np.array(vals).reshape(len(grid), -1)
    return SpatialIndicators(vertices=new_interior_vertices(mesh), values=vals)


def lagrange_gram(index_set: IndexSet, family, grid: SparseGrid | None = None) -> np.ndarray:
    """``int L_z L_z' dpi`` for the Lagrange basis of the grid of ``index_set``."""
    return parametric_gram(expand_surpluses(index_set, family, grid=grid))


def spatial_estimate(gram: np.ndarray, fine_samples: np.ndarray, samples: np.ndarray,
                     mesh: SimplexMesh) -> float:
    """``|| S (U_hat - U) ||`` with ``U`` prolonged to the uniform refinement of ``mesh``.

    ``gram`` is the Lagrange Gram matrix of the current grid.
    """
    fine = mesh.uniform
    P = mesh.uniform_prolongation
    diff = np.asarray(fine_samples).reshape(fine.n_dofs, -1) - P @ np.asarray(samples).reshape(mesh.n_dofs, -1)
    return float(np.sqrt(bochner_norm_sq(gram, x_gram(fine, diff))))


@dataclass
class EnrichedExpansion:
    """Interpolant on ``I`` united with its reduced margin, without values.

    Any sum of surplus blocks of this interpolant is a polynomial that the
    enriched grid reproduces, so it equals the Lagrange interpolant of its
    own values at the enriched points. Norms are therefore evaluated as
    ``sum Lambda[z, z'] (d_z, d_z')_X`` with ``d_z`` the block values at the
    points and ``Lambda`` the Lagrange Gram of the enriched grid. Forming
    ``d_z`` first keeps the cancellation inside vector arithmetic, which
    keeps small surpluses accurate.
    """

    index_set: IndexSet
    margin: tuple
    enriched: IndexSet
    grid: SparseGrid
    expansion: SurplusExpansion
    _blocks: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, index_set: IndexSet, family) -> "EnrichedExpansion":
        margin = reduced_margin(index_set)
        enriched = index_set.union(margin)
        grid = build_grid(enriched, family)
        return cls(index_set, margin, enriched, grid, expand_surpluses(enriched, family, grid=grid))

    @cached_property
    def gram(self) -> np.ndarray:
        """Lagrange Gram matrix of the enriched grid."""
        return parametric_gram(self.expansion)

    def block_gram(self, indices) -> np.ndarray:
        """Lagrange pairing of the surplus blocks generated by ``indices``."""
        return parametric_gram(restrict_to_indices(self.expansion, indices))

    def block_values(self, indices) -> np.ndarray:
        """``E[k, z]``: block Lagrange function of point ``z`` evaluated at point ``k``."""
        key = tuple(sorted(tuple(nu) for nu in indices))
        if key not in self._blocks:
            E = restrict_to_indices(self.expansion, key).lagrange_values(self.grid.coords)
            # nested nodes: entries are exact small integers up to round-off
            self._blocks[key] = np.where(np.abs(E) < 1e-13, 0.0, E)
        return self._blocks[key]

    def block_norm(self, values: np.ndarray, mesh: SimplexMesh, indices) -> float:
        """``L^2_pi(Gamma; X)`` norm of the blocks ``indices`` applied to ``values``."""
        D = values @ self.block_values(indices).T
        return float(np.sqrt(bochner_norm_sq(self.gram, x_gram(mesh, D))))


def _values(mesh: SimplexMesh, values: np.ndarray, n_points: int) -> np.ndarray:
    values = np.asarray(values, dtype=float).reshape(mesh.n_dofs, -1)
    if values.shape[1] != n_points:
        raise ContractError(f"{values.shape[1]} samples for {n_points} enriched collocation points")
    return values


def parametric_indicators(index_set: IndexSet, family, values: np.ndarray, mesh: SimplexMesh,
                          enriched: EnrichedExpansion | None = None) -> Dict[tuple, float]:
    """``tau_nu`` for every ``nu`` in the reduced margin of ``index_set``.

    ``values[:, k]`` is a solution on ``mesh`` at point ``k`` of the enriched
    grid (the grid of ``I`` united with its reduced margin). With coarsest-mesh
    solutions these are the indicators that drive marking; other meshes give
    the diagnostic variants.
    """
    if enriched is None:
        enriched = EnrichedExpansion.build(index_set, family)
    values = _values(mesh, values, len(enriched.grid))
    return {nu: enriched.block_norm(values, mesh, [nu]) for nu in enriched.margin}


alt_parametric_indicators = parametric_indicators


def parametric_estimate(index_set: IndexSet, family, values: np.ndarray, mesh: SimplexMesh,
                        enriched: EnrichedExpansion | None = None) -> float:
    """Norm of the sum of all reduced-margin surplus blocks."""
    if enriched is None:
        enriched = EnrichedExpansion.build(index_set, family)
    values = _values(mesh, values, len(enriched.grid))
    return enriched.block_norm(values, mesh, enriched.margin)


def weighted_sums(spatial, tau: Dict[tuple, float], gram_diag: np.ndarray) -> tuple[float, float]:
    """``mu_bar = sum_z mu_z ||L_z||`` and ``tau_bar = sum_nu tau_nu``.

    ``spatial`` is a :class:`SpatialIndicators` or the vector of ``mu_z``.
    """
    totals = spatial.totals if isinstance(spatial, SpatialIndicators) else np.asarray(spatial, dtype=float)
    mu_bar = float(np.sum(totals * np.sqrt(np.maximum(gram_diag, 0.0))))
    tau_bar = float(sum(tau[nu] for nu in sorted(tau)))
    return mu_bar, tau_bar

