"""Conforming triangulations refined by newest vertex bisection (NVB).

Each triangle ``[a, b, c]`` is stored counter-clockwise with its reference
edge ``(a, b)`` first, so ``c`` is the newest vertex. Bisecting the
reference edge at ``m`` yields ``[c, a, m]`` and ``[b, c, m]``. Refinement
never renumbers existing vertices; new vertices are appended in order of
the (sorted) edge they bisect, which makes every refinement deterministic
and prolongation a matter of averaging two parent values.
"""

from __future__ import annotations

import hashlib
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse

from .index_set import ContractError

_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


class SimplexMesh:
    """Immutable 2D triangulation with NVB history.

    Parameters
    ----------
    vertices : (N, 2) array
    triangles : (K, 3) int array
        Counter-clockwise, reference edge between the first two entries.
    boundary : (N,) bool array, optional
        Computed from the edge topology when omitted.
    parent : SimplexMesh, optional
        Mesh this one was refined from.
    vertex_parents : (N - N_parent, 2) int array, optional
        Parent-edge end points of every appended vertex.
    """

    def __init__(self, vertices, triangles, boundary=None, parent=None,
                 vertex_parents=None, generation=0):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        if boundary is None:
            boundary = np.zeros(len(self.vertices), dtype=bool)
            boundary[self.edges[self.boundary_edges].ravel()] = True
        self.boundary = np.asarray(boundary, dtype=bool)
        self.boundary.setflags(write=False)
        self.parent = parent
        self.vertex_parents = (np.zeros((0, 2), dtype=np.int64) if vertex_parents is None
                               else np.asarray(vertex_parents, dtype=np.int64))
        self.generation = generation
        self.root = self if parent is None else parent.root

    def __repr__(self):
        return (f"SimplexMesh(vertices={self.n_vertices}, triangles={self.n_triangles}, "
                f"generation={self.generation})")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        local = self.triangles[:, _LOCAL_EDGES]  # (K, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inv, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        return edges, inv.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """Sorted vertex pairs of all edges, in lexicographic order."""
        return self._edge_data[0]

    @property
    def element_edges(self) -> np.ndarray:
        """``(K, 3)`` edge ids: reference edge, then ``(b, c)``, then ``(c, a)``."""
        return self._edge_data[1]

    @property
    def edge_use(self) -> np.ndarray:
        return self._edge_data[2]

    @property
    def boundary_edges(self) -> np.ndarray:
        return self._edge_data[2] == 1

    @cached_property
    def interior(self) -> np.ndarray:
        """Interior vertex ids; position ``k`` is degree of freedom ``k``."""
        return np.flatnonzero(~self.boundary)

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Vertex id -> dof row, -1 on the boundary."""
        out = np.full(self.n_vertices, -1, dtype=np.int64)
        out[self.interior] = np.arange(len(self.interior))
        return out

    @property
    def n_dofs(self) -> int:
        return len(self.interior)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def canonical_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.triangles.tobytes())
        h.update(self.boundary.tobytes())
        return h.hexdigest()

    @cached_property
    def uniform(self) -> "SimplexMesh":
        """Uniform refinement: every element bisected three times."""
        return _refine_edges(self, np.ones(len(self.edges), dtype=bool))

    @cached_property
    def uniform_prolongation(self) -> sparse.csr_matrix:
        """Interior-to-interior embedding into :attr:`uniform`."""
        return prolongation_matrix(self, self.uniform)

    def min_angle(self) -> float:
        """Smallest interior angle over all elements, in degrees."""
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            cos = np.sum(u * v, axis=1) / np.linalg.norm(u, axis=1) / np.linalg.norm(v, axis=1)
            angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        return float(np.min(angles))

    def is_ancestor_of(self, other: "SimplexMesh") -> bool:
        node = other
        while node is not None:
            if node is self:
                return True
            node = node.parent
        return False


def orient_reference_edges(vertices, triangles) -> np.ndarray:
    """Rotate each triangle so its longest edge comes first, counter-clockwise.

    Length ties go to the edge with the lexicographically smallest sorted
    vertex pair.
    """
    vertices = np.asarray(vertices, dtype=float)
    tri = np.array(triangles, dtype=np.int64)
    p = vertices[tri]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cw = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[cw] = tri[cw][:, [0, 2, 1]]
    out = np.empty_like(tri)
    for k, t in enumerate(tri):
        best = None
        for r in range(3):
            a, b = t[r], t[(r + 1) % 3]
            length = round(float(np.sum((vertices[a] - vertices[b]) ** 2)), 12)
            key = (-length, min(a, b), max(a, b))
            if best is None or key < best[0]:
                best = (key, r)
        r = best[1]
        out[k] = [t[r], t[(r + 1) % 3], t[(r + 2) % 3]]
    return out


def _structured(nx: int, ny: int, x0: float, y0: float, h: float, keep=None):
    xs = x0 + h * np.arange(nx + 1)
    ys = y0 + h * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = lambda i, j: j * (nx + 1) + i  # noqa: E731
    tris = []
    for j in range(ny):
        for i in range(nx):
            if keep is not None and not keep(xs[i] + h / 2, ys[j] + h / 2):
                continue
            p00, p10, p01, p11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            # diagonal from bottom-left to top-right
            tris.append([p00, p10, p11])
            tris.append([p00, p11, p01])
    tris = np.array(tris, dtype=np.int64)
    used = np.unique(tris)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    tris = remap[tris]
    return SimplexMesh(verts, orient_reference_edges(verts, tris))


def unit_square_mesh(n: int = 8) -> SimplexMesh:
    """``2 n^2`` right triangles on ``(0, 1)^2``."""
    return _structured(n, n, 0.0, 0.0, 1.0 / n)


def l_shape_mesh(n: int = 4) -> SimplexMesh:
    """Right triangles on ``(-1, 1)^2 \\ (-1, 0]^2``, ``2 n^2`` per unit square."""
    return _structured(2 * n, 2 * n, -1.0, -1.0, 1.0 / n,
                       keep=lambda x, y: not (x < 0 and y < 0))


def _bisect(a, b, c, m):
    return np.stack([c, a, m], axis=1), np.stack([b, c, m], axis=1)


def _refine_edges(mesh: SimplexMesh, marked: np.ndarray) -> SimplexMesh:
    """NVB refinement of every element touching a marked edge (after closure)."""
    marked = np.array(marked, dtype=bool)
    el = mesh.element_edges
    while True:
        flags = marked[el]
        need = flags.any(axis=1) & ~flags[:, 0]
        if not need.any():
            break
        marked[el[need, 0]] = True
    if not marked.any():
        return mesh
    N = mesh.n_vertices
    new_id = np.full(len(marked), -1, dtype=np.int64)
    new_edges = np.flatnonzero(marked)
    new_id[new_edges] = N + np.arange(len(new_edges))
    mids = mesh.vertices[mesh.edges[new_edges]].mean(axis=1)
    vertices = np.vstack([mesh.vertices, mids])
    boundary = np.concatenate([mesh.boundary, mesh.boundary_edges[new_edges]])

    flags = marked[el]
    t = mesh.triangles
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    m0, m1, m2 = new_id[el[:, 0]], new_id[el[:, 1]], new_id[el[:, 2]]
    pattern = flags[:, 0] * 1 + flags[:, 1] * 2 + flags[:, 2] * 4
    children, owner = [], []

    def emit(sel, *kids):
        idx = np.flatnonzero(sel)
        for r, kid in enumerate(kids):
            children.append(kid[idx])
            owner.append(idx * 4 + r)

    emit(pattern == 0, t)
    s = pattern == 1
    emit(s, *_bisect(a, b, c, m0))
    s = pattern == 3  # reference + (b, c)
    left, right = _bisect(a, b, c, m0)
    emit(s, left, *_bisect(b, c, m0, m1))
    s = pattern == 5  # reference + (c, a)
    emit(s, *_bisect(c, a, m0, m2), right)
    s = pattern == 7
    emit(s, *_bisect(c, a, m0, m2), *_bisect(b, c, m0, m1))
    tris = np.concatenate(children)
    order = np.argsort(np.concatenate(owner), kind="stable")
    return SimplexMesh(vertices, tris[order], boundary=boundary, parent=mesh,
                       vertex_parents=mesh.edges[new_edges], generation=mesh.generation + 1)


def uniform_refine(mesh: SimplexMesh) -> SimplexMesh:
    return mesh.uniform


def new_interior_vertices(mesh: SimplexMesh) -> np.ndarray:
    """Ids (in ``uniform_refine(mesh)``) of new vertices off the boundary.

    Uniform refinement creates exactly one vertex per edge, so these are the
    midpoints of the interior edges of ``mesh``.
    """
    interior_edges = np.flatnonzero(~mesh.boundary_edges)
    return mesh.n_vertices + interior_edges


def refine_with_marked(mesh: SimplexMesh, marked) -> SimplexMesh:
    """Coarsest NVB refinement whose vertices include every marked vertex.

    ``marked`` holds vertex ids of ``uniform_refine(mesh)`` drawn from
    :func:`new_interior_vertices`. Each maps to the edge it bisects.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if marked.size == 0:
        return mesh
    edge = marked - mesh.n_vertices
    bad = (edge < 0) | (edge >= len(mesh.edges))
    bad[~bad] = mesh.boundary_edges[edge[~bad]]
    if bad.any():
        raise ContractError(f"vertices {marked[bad].tolist()} are not new interior vertices")
    mask = np.zeros(len(mesh.edges), dtype=bool)
    mask[edge] = True
    return _refine_edges(mesh, mask)


def _step_matrix(mesh: SimplexMesh) -> sparse.csr_matrix:
    Np = mesh.parent.n_vertices
    k = len(mesh.vertex_parents)
    rows = np.concatenate([np.arange(Np), np.repeat(Np + np.arange(k), 2)])
    cols = np.concatenate([np.arange(Np), mesh.vertex_parents.ravel()])
    vals = np.concatenate([np.ones(Np), np.full(2 * k, 0.5)])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(mesh.n_vertices, Np))


def prolongation_matrix(coarse: SimplexMesh, fine: SimplexMesh, interior: bool = True):
    """Nodal interpolation from ``coarse`` to ``fine`` as a sparse matrix.

    With ``interior=True`` the matrix maps interior coefficient vectors.
    """
    if not coarse.is_ancestor_of(fine):
        raise ContractError("fine mesh does not descend from the coarse mesh")
    P = sparse.identity(coarse.n_vertices, format="csr")
    chain = []
    node = fine
    while node is not coarse:
        chain.append(node)
        node = node.parent
    for m in reversed(chain):
        P = _step_matrix(m) @ P
    if interior:
        P = P[fine.interior][:, coarse.interior]
    return P.tocsr()


def prolongation(coarse: SimplexMesh, fine: SimplexMesh, coefficients) -> np.ndarray:
    """Interior coefficients of a coarse P1 function on the fine mesh."""
    return prolongation_matrix(coarse, fine) @ np.asarray(coefficients, dtype=float)


def conformity_report(mesh: SimplexMesh) -> dict:
    """Edge-use audit: no edge in more than two elements and no hanging vertex.

    Hanging vertices show up as once-used edges off the domain boundary, so
    the once-used edge length must match that of the root mesh.
    """
    lengths = np.linalg.norm(np.diff(mesh.vertices[mesh.edges], axis=1)[:, 0], axis=1)
    root = mesh.root
    root_len = np.linalg.norm(np.diff(root.vertices[root.edges], axis=1)[:, 0], axis=1)
    return {
        "max_edge_use": int(mesh.edge_use.max()),
        "boundary_length": float(lengths[mesh.boundary_edges].sum()),
        "root_boundary_length": float(root_len[root.boundary_edges].sum()),
        "min_area": float(mesh.areas.min()),
    }


def is_conforming(mesh: SimplexMesh) -> bool:
    rep = conformity_report(mesh)
    return (rep["max_edge_use"] <= 2 and rep["min_area"] > 0
            and abs(rep["boundary_length"] - rep["root_boundary_length"]) <= 1e-10)


def write_mesh(mesh: SimplexMesh, path) -> None:
    """Plain-text export.

    Layout::

        vertices <N>
        <x> <y> <boundary_flag>     (N lines)
        triangles <K>
        <i> <j> <k>                 (K lines, 0-based, reference edge i-j)
    """
    lines = [f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g} {int(b)}" for (x, y), b in zip(mesh.vertices, mesh.boundary)]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SimplexMesh:
    rows = Path(path).read_text().splitlines()
    nv = int(rows[0].split()[1])
    vdata = np.array([r.split() for r in rows[1:1 + nv]], dtype=float).reshape(-1, 3)
    nt = int(rows[1 + nv].split()[1])
    tdata = np.array([r.split() for r in rows[2 + nv:2 + nv + nt]], dtype=np.int64).reshape(-1, 3)
    return SimplexMesh(vdata[:, :2], tdata, boundary=vdata[:, 2].astype(bool))
