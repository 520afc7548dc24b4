"""P1 finite elements for one coefficient sample.

Stiffness and load use the three-point edge-midpoint rule on every element
(exact for quadratics). Since P1 gradients are elementwise constant, the
stiffness of an element only sees the mean of the coefficient over the
three midpoints. Homogeneous Dirichlet values are eliminated, leaving an
interior-only SPD system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .index_set import ContractError
from .mesh import SimplexMesh

log = logging.getLogger(__name__)


class EllipticityError(ValueError):
    """Coefficient sample is not positive at some quadrature point."""


class SolverError(RuntimeError):
    """Linear solver failed to reach the requested residual."""


class _Geometry:
    """Per-mesh element data and a fixed CSR pattern for interior assembly."""

    def __init__(self, mesh: SimplexMesh):
        self.mesh = mesh
        tri = mesh.triangles
        p = mesh.vertices[tri]
        self.area = mesh.areas
        # gradients of barycentric coordinates, (K, 3, 2)
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        self.grads = np.stack([-e[:, :, 1], e[:, :, 0]], axis=2) / (2.0 * self.area[:, None, None])
        self.local = self.area[:, None, None] * np.einsum("kid,kjd->kij", self.grads, self.grads)
        # edge midpoints q0 = (v0 v1), q1 = (v1 v2), q2 = (v2 v0)
        self.qpoints = 0.5 * (p + p[:, [1, 2, 0]])

        dof = mesh.dof_map[tri]
        rows = np.repeat(dof, 3, axis=1).ravel()
        cols = np.tile(dof, (1, 3)).ravel()
        self.keep = (rows >= 0) & (cols >= 0)
        n = mesh.n_dofs
        key = rows[self.keep] * max(n, 1) + cols[self.keep]
        uniq, inv = np.unique(key, return_inverse=True)
        self.n = n
        self.indices = (uniq % max(n, 1)).astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // max(n, 1), minlength=n))]).astype(np.int32)
        self.scatter = sparse.csr_matrix(
            (np.ones(len(inv)), (inv.ravel(), np.arange(len(inv)))), shape=(len(uniq), len(inv))
        )
        self.load_dof = dof

    def matrix(self, elem_coef: np.ndarray) -> sparse.csr_matrix:
        data = (self.local * elem_coef[:, None, None]).ravel()[self.keep]
        return sparse.csr_matrix((self.scatter @ data, self.indices.copy(), self.indptr.copy()),
                                 shape=(self.n, self.n))

    def load(self, fq: np.ndarray) -> np.ndarray:
        # hat of local vertex k is 1/2 at the two midpoints on its edges
        contrib = self.area[:, None] / 6.0 * (fq + fq[:, [2, 0, 1]])
        mask = self.load_dof >= 0
        return np.bincount(self.load_dof[mask], weights=contrib[mask], minlength=self.n)

    @cached_property
    def laplace(self) -> sparse.csr_matrix:
        return self.matrix(np.ones(len(self.area)))


_GEOMETRY_ATTR = "_fem_geometry"


def geometry(mesh: SimplexMesh) -> _Geometry:
    geo = mesh.__dict__.get(_GEOMETRY_ATTR)
    if geo is None:
        geo = _Geometry(mesh)
        mesh.__dict__[_GEOMETRY_ATTR] = geo
    return geo


def laplace_matrix(mesh: SimplexMesh) -> sparse.csr_matrix:
    """Interior stiffness of ``a = 1``; the Gram matrix of ``(grad u, grad v)``."""
    return geometry(mesh).laplace


@dataclass
class FESystem:
    """Interior stiffness ``matrix`` and load ``rhs`` of one sample problem."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    mesh: SimplexMesh

    @property
    def dofs(self) -> np.ndarray:
        return self.mesh.interior


@dataclass
class FEFunction:
    """Interior nodal values of a P1 function (zero on the boundary)."""

    mesh: SimplexMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.mesh.n_dofs:
            raise ContractError(f"{len(self.values)} values for {self.mesh.n_dofs} interior vertices")

    def full(self) -> np.ndarray:
        out = np.zeros(self.mesh.n_vertices)
        out[self.mesh.interior] = self.values
        return out


def element_coefficient(mesh: SimplexMesh, coefficient) -> np.ndarray:
    """Midpoint-rule mean of ``coefficient`` over each element.

    Raises :class:`EllipticityError` if any sampled value is not positive.
    """
    geo = geometry(mesh)
    aq = np.asarray(coefficient(geo.qpoints.reshape(-1, 2)), dtype=float).reshape(-1, 3)
    if not np.all(aq > 0) or not np.all(np.isfinite(aq)):
        bad = int(np.sum(~(aq > 0)))
        raise EllipticityError(f"coefficient not positive at {bad} quadrature points (min {aq.min():.3e})")
    return aq.mean(axis=1)


def load_vector(mesh: SimplexMesh, f) -> np.ndarray:
    geo = geometry(mesh)
    fq = np.asarray(f(geo.qpoints.reshape(-1, 2)), dtype=float).reshape(-1, 3)
    return geo.load(fq)


def assemble(mesh: SimplexMesh, coefficient, f, rhs: np.ndarray | None = None) -> FESystem:
    """Galerkin system for ``-div(a grad u) = f`` with ``u = 0`` on the boundary.

    ``coefficient`` and ``f`` map an ``(n, 2)`` array of points to ``n`` values.
    A precomputed load vector may be passed as ``rhs``.
    """
    A = geometry(mesh).matrix(element_coefficient(mesh, coefficient))
    b = load_vector(mesh, f) if rhs is None else rhs
    return FESystem(A, b, mesh)


def _pcg(A, b, rtol=1e-12, maxiter=None):
    n = len(b)
    maxiter = 20 * n if maxiter is None else maxiter
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    bnorm = np.linalg.norm(b)
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"PCG did not converge in {maxiter} iterations "
                      f"(relative residual {np.linalg.norm(r) / bnorm:.2e})")


AUTO_DIRECT_LIMIT = 40_000


def _accept(A, b, x, rnorm, bnorm, rtol, what):
    # on fine meshes 1e-12 can sit below what double precision resolves;
    # accept anything within a small multiple of the rounding floor |A||x|
    floor = 64 * np.finfo(float).eps * np.linalg.norm(abs(A) @ np.abs(x))
    if rnorm <= max(rtol * bnorm, floor):
        log.debug("residual %.2e at rounding floor %.2e", rnorm / bnorm, floor / bnorm)
        return x
    raise SolverError(f"{what} stalled at relative residual {rnorm / bnorm:.2e} "
                      f"(rounding floor {floor / bnorm:.2e})")


def _refine(A, b, x, correct, rtol, bnorm, what, max_steps=8):
    """Defect correction ``x += correct(b - A x)`` until converged or stalled."""
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    for _ in range(max_steps):
        if rnorm <= rtol * bnorm:
            return x
        x_new = x + correct(r)
        r_new = b - A @ x_new
        rnew = np.linalg.norm(r_new)
        if rnew >= rnorm:
            break
        stalled = rnew > 0.5 * rnorm
        x, r, rnorm = x_new, r_new, rnew
        if stalled:
            break
    return _accept(A, b, x, rnorm, bnorm, rtol, what)


def _amg(A, b, x0, rtol, bnorm):
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).copy()
    return _refine(A, b, x, lambda r: ml.solve(r, tol=1e-7, accel="cg", maxiter=200), rtol, bnorm,
                   "AMG-CG solve")


def solve_matrix(A: sparse.csr_matrix, b: np.ndarray, method: str = "auto", rtol: float = 1e-12,
                 x0: np.ndarray | None = None) -> np.ndarray:
    """Solve an SPD system to relative residual ``rtol``.

    ``method="direct"`` uses a sparse LU factorisation followed by
    residual-driven iterative refinement. ``method="amg"`` applies the same
    refinement with smoothed-aggregation AMG preconditioned CG as inner
    solver (started from ``x0`` when given). ``method="pcg"`` runs
    Jacobi-preconditioned conjugate gradients. ``"auto"`` picks direct
    below ``AUTO_DIRECT_LIMIT`` unknowns and AMG above.
    """
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        return np.zeros(0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if method == "auto":
        method = "direct" if len(b) < AUTO_DIRECT_LIMIT else "amg"
    if method == "pcg":
        return _pcg(A, b, rtol)[0]
    if method == "amg":
        return _amg(A, b, x0, rtol, bnorm)
    if method != "direct":
        raise ValueError(f"unknown solver {method!r}")
    lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
    return _refine(A, b, lu.solve(b), lu.solve, rtol, bnorm, "direct solve")


def solve(system: FESystem, method: str = "auto") -> FEFunction:
    return FEFunction(system.mesh, solve_matrix(system.matrix, system.rhs, method))


def x_inner(u: FEFunction, v: FEFunction) -> float:
    """``(grad u, grad v)_{L^2(D)}``."""
    if u.mesh is not v.mesh:
        raise ContractError("functions live on different meshes")
    return float(u.values @ (laplace_matrix(u.mesh) @ v.values))


def x_gram(mesh: SimplexMesh, U: np.ndarray, V: np.ndarray | None = None) -> np.ndarray:
    """Matrix of X-inner products between columns of ``U`` and ``V``."""
    K = laplace_matrix(mesh)
    V = U if V is None else V
    return np.asarray(U.T @ (K @ V))


def fine_residuals(mesh: SimplexMesh, coefficient, f, u, fine_system: FESystem | None = None) -> np.ndarray:
    """``(f, phi_xi) - (a grad u, grad phi_xi)`` for every interior vertex of the uniform refinement.

    ``u`` holds interior values on ``mesh``; it is embedded exactly into the
    refined space, where both integrals use the refined elements.
    """
    fine = mesh.uniform
    if fine_system is None:
        fine_system = assemble(fine, coefficient, f)
    P = mesh.uniform_prolongation
    u = u.values if isinstance(u, FEFunction) else np.asarray(u)
    return fine_system.rhs - fine_system.matrix @ (P @ u)


def residual_against_fine_hat(mesh: SimplexMesh, coefficient, f, u, xi: int) -> float:
    """Residual of ``u`` tested with the refined-mesh hat function at vertex ``xi``.

    ``xi`` is a vertex id of ``mesh.uniform`` taken from the new interior vertices.
    """
    fine = mesh.uniform
    xi = int(xi)
    if xi < mesh.n_vertices or xi >= fine.n_vertices or fine.boundary[xi]:
        raise ContractError(f"vertex {xi} is not a new interior vertex")
    return float(fine_residuals(mesh, coefficient, f, u)[fine.dof_map[xi]])
