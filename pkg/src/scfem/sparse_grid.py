"""Sparse collocation grids, Smolyak interpolation and parametric Gram matrices.

The interpolant on a monotone index set ``I`` is kept as an explicit sum of
tensor Lagrange terms obtained from the inclusion-exclusion form of each
hierarchical surplus,

    Delta^{m(nu)} = sum_{s in {0,1}^M} (-1)^{|s|} (x)_m L^{mf(nu_m - s_m)},

with ``L^0 = 0``. Every term is a product of univariate Lagrange
polynomials, so all ``L^2_pi`` pairings reduce to exact 1D integrals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import sparse

from .index_set import ContractError, IndexSet
from .nodes import LEJA, NodeFamily, get_family

# upper bound on the entries of one block of tensor-basis values
_CHUNK_ENTRIES = 1 << 22


class SparseGrid:
    """Collocation points of a monotone index set.

    Points are stored as integer node ordinals per dimension (``ordinals``),
    sorted lexicographically; ``coords`` holds the matching abscissae.
    """

    def __init__(self, index_set: IndexSet, family):
        if not isinstance(index_set, IndexSet):
            index_set = IndexSet(index_set)
        self.index_set = index_set
        self.family = get_family(family)
        self.M = index_set.M
        counts = np.array([[self.family.growth(v) for v in nu] for nu in index_set], dtype=int)
        self.level_counts = counts
        pts = set()
        for row in counts:
            pts.update(itertools.product(*(range(c) for c in row)))
        ordinals = np.array(sorted(pts), dtype=int).reshape(-1, self.M)
        ordinals.setflags(write=False)
        self.ordinals = ordinals
        self.point_lookup = {tuple(p): k for k, p in enumerate(ordinals.tolist())}
        max_ord = int(ordinals.max()) + 1 if ordinals.size else 1
        nodes = self.family.ordinal_nodes(max_ord)
        self.coords = nodes[ordinals]

    def __len__(self):
        return len(self.ordinals)

    def __repr__(self):
        return f"SparseGrid({self.family.kind!r}, |I|={len(self.index_set)}, points={len(self)})"

    def index_of(self, ordinal_tuple) -> int:
        return self.point_lookup[tuple(int(v) for v in ordinal_tuple)]

    def contains(self, other: "SparseGrid") -> bool:
        return all(tuple(p) in self.point_lookup for p in other.ordinals.tolist())

    def embedding(self, other: "SparseGrid") -> np.ndarray:
        """Positions in ``self`` of the points of ``other`` (a subgrid)."""
        try:
            return np.array([self.point_lookup[tuple(p)] for p in other.ordinals.tolist()], dtype=int)
        except KeyError as exc:
            raise ContractError(f"point {exc.args[0]} missing from the grid") from None


def build_grid(index_set: IndexSet, family) -> SparseGrid:
    """Deduplicated union of the tensor grids of all ``nu`` in ``index_set``."""
    return SparseGrid(index_set, family)


@dataclass
class GridFunction:
    """Values of a function at every point of a sparse grid.

    ``values`` has shape ``(len(grid),)`` for scalar data or
    ``(len(grid), n)`` for vector (finite element) data. ``mesh`` tags the
    mesh vector data lives on.
    """

    grid: SparseGrid
    values: np.ndarray
    mesh: Any = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.grid):
            raise ContractError(
                f"{self.values.shape[0]} values for a grid of {len(self.grid)} points"
            )


@dataclass
class SurplusExpansion:
    """Signed sum of tensor Lagrange terms.

    Term ``t`` is ``coef[t] * prod_m l^{counts[t, m]}_{ordinals[t, m]}(y_m)``
    multiplied by the value stored at grid point ``point[t]``; ``origin[t]``
    is the position in ``indices`` of the multi-index that produced it, or
    -1 once terms from different indices have been merged.
    """

    grid: SparseGrid
    counts: np.ndarray
    ordinals: np.ndarray
    coef: np.ndarray
    point: np.ndarray
    origin: np.ndarray
    indices: tuple
    values: np.ndarray | None = None

    @property
    def family(self) -> NodeFamily:
        return self.grid.family

    @property
    def M(self) -> int:
        return self.grid.M

    def __len__(self):
        return len(self.coef)

    def with_values(self, values) -> "SurplusExpansion":
        values = None if values is None else np.asarray(values, dtype=float)
        if values is not None and values.shape[0] != len(self.grid):
            raise ContractError("values must have one row per grid point")
        return SurplusExpansion(self.grid, self.counts, self.ordinals, self.coef,
                                self.point, self.origin, self.indices, values)

    def compressed(self) -> "SurplusExpansion":
        """Merge identical tensor terms; cancelling terms are dropped."""
        if len(self) == 0:
            return self
        key = np.concatenate([self.counts, self.ordinals], axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        coef = np.bincount(inv.ravel(), weights=self.coef, minlength=len(uniq))
        point = np.zeros(len(uniq), dtype=int)
        point[inv.ravel()] = self.point
        keep = np.abs(coef) > 0.5
        M = self.M
        return SurplusExpansion(
            self.grid, uniq[keep, :M], uniq[keep, M:], coef[keep], point[keep],
            np.full(int(keep.sum()), -1), self.indices, self.values,
        )

    def term_values(self, y) -> np.ndarray:
        """Tensor basis values, shape ``(len(y), len(self))`` (coefficients excluded)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[1] != self.M:
            raise ContractError(f"points must have {self.M} coordinates")
        out = np.ones((y.shape[0], len(self)))
        fam = self.family
        for m in range(self.M):
            cm = self.counts[:, m]
            for n in np.unique(cm):
                if n == 1:
                    continue
                rows = np.nonzero(cm == n)[0]
                basis = fam.basis(int(n), y[:, m])
                out[:, rows] *= basis[:, self.ordinals[rows, m]]
        return out

    def incidence(self) -> sparse.csr_matrix:
        """Sparse ``(terms, points)`` matrix holding the coefficients."""
        return sparse.csr_matrix(
            (self.coef, (np.arange(len(self)), self.point)), shape=(len(self), len(self.grid))
        )

    def _chunks(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        step = max(1, _CHUNK_ENTRIES // max(len(self), 1))
        for lo in range(0, len(y), step):
            yield lo, self.term_values(y[lo:lo + step])

    def lagrange_values(self, y) -> np.ndarray:
        """Multivariate Lagrange functions ``L_z(y)``, shape ``(len(y), len(grid))``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.empty((len(y), len(self.grid)))
        inc_t = self.incidence().T.tocsr()
        for lo, tv in self._chunks(y):
            out[lo:lo + len(tv)] = np.asarray(inc_t @ tv.T).T
        return out

    def tensor_blocks(self) -> list:
        """Terms merged per node-count vector: ``[(counts, coefficient tensor), ...]``.

        Each tensor has shape ``(*counts, *value_shape)``; blocks that cancel
        exactly are dropped.
        """
        if self.values is None:
            raise ContractError("expansion carries no values")
        vals = self.values[self.point]
        weighted = self.coef.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals
        uniq, inv = np.unique(self.counts, axis=0, return_inverse=True)
        inv = inv.ravel()
        blocks = []
        for g, counts in enumerate(uniq):
            rows = np.nonzero(inv == g)[0]
            flat = np.ravel_multi_index(tuple(self.ordinals[rows].T), counts)
            T = np.zeros((int(np.prod(counts)),) + vals.shape[1:])
            np.add.at(T, flat, weighted[rows])
            if np.any(T != 0.0):
                blocks.append((tuple(int(c) for c in counts), T.reshape(tuple(counts) + vals.shape[1:])))
        return blocks

    def evaluate(self, y):
        """Value of the expansion at ``y`` (one point or a batch).

        Each tensor block is contracted one dimension at a time with the 1D
        basis values, so no per-term arrays are formed.
        """
        single = np.ndim(y) == 1
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[1] != self.M:
            raise ContractError(f"points must have {self.M} coordinates")
        vshape = self.values.shape[1:] if self.values is not None else ()
        out = np.zeros((len(y),) + vshape)
        fam = self.family
        for counts, T in self.tensor_blocks():
            trailing = max(1, T.size // counts[0])
            step = max(1, _CHUNK_ENTRIES // max(trailing, max(counts)))
            for lo in range(0, len(y), step):
                yc = y[lo:lo + step]
                R = fam.basis(counts[0], yc[:, 0]) @ T.reshape(counts[0], -1)
                for m in range(1, self.M):
                    R = np.einsum("yij,yi->yj", R.reshape(len(yc), counts[m], -1), fam.basis(counts[m], yc[:, m]))
                out[lo:lo + len(yc)] += R.reshape((len(yc),) + vshape)
        return out[0] if single else out

    __call__ = evaluate


def _terms_for(nu: Sequence[int], family: NodeFamily):
    """Inclusion-exclusion terms of one surplus: (counts, ordinals, signs)."""
    active = [m for m, v in enumerate(nu) if v > 1]
    counts_l, ords_l, signs_l = [], [], []
    for r in range(len(active) + 1):
        for sub in itertools.combinations(active, r):
            shifted = list(nu)
            for m in sub:
                shifted[m] -= 1
            counts = np.array([family.growth(v) for v in shifted], dtype=int)
            ords = np.indices(counts).reshape(len(nu), -1).T
            counts_l.append(np.broadcast_to(counts, ords.shape))
            ords_l.append(ords)
            signs_l.append(np.full(len(ords), (-1.0) ** r))
    return np.concatenate(counts_l), np.concatenate(ords_l), np.concatenate(signs_l)


def expand_surpluses(index_set, family=None, values=None, grid: SparseGrid | None = None) -> SurplusExpansion:
    """Surplus-term expansion of the interpolant on ``index_set``.

    Parameters
    ----------
    index_set : IndexSet or GridFunction
        When a :class:`GridFunction` is passed its grid and values are used.
    family : node family kind, optional
    values : array, optional
        One row per grid point.
    grid : SparseGrid, optional
        Grid that point references resolve to; must contain the points of
        ``index_set``. Defaults to ``build_grid(index_set, family)``.
    """
    if isinstance(index_set, GridFunction):
        gf = index_set
        grid = gf.grid if grid is None else grid
        values = gf.values if values is None else values
        index_set, family = gf.grid.index_set, gf.grid.family
    if not isinstance(index_set, IndexSet):
        index_set = IndexSet(index_set)
    if grid is None:
        grid = build_grid(index_set, family)
    fam = grid.family if family is None else get_family(family)
    if fam != grid.family:
        raise ContractError("grid and expansion use different node families")
    counts_l, ords_l, coef_l, origin_l = [], [], [], []
    for k, nu in enumerate(index_set):
        c, o, s = _terms_for(nu, fam)
        counts_l.append(c)
        ords_l.append(o)
        coef_l.append(s)
        origin_l.append(np.full(len(s), k))
    counts = np.concatenate(counts_l)
    ordinals = np.concatenate(ords_l)
    lookup = grid.point_lookup
    try:
        point = np.array([lookup[tuple(p)] for p in ordinals.tolist()], dtype=int)
    except KeyError as exc:
        raise ContractError(f"grid lacks point {exc.args[0]}") from None
    exp = SurplusExpansion(grid, counts, ordinals, np.concatenate(coef_l), point,
                           np.concatenate(origin_l), tuple(index_set))
    return exp.with_values(values) if values is not None else exp


def evaluate(expansion: SurplusExpansion, y):
    return expansion.evaluate(y)


def restrict_to_indices(expansion: SurplusExpansion, subset: Iterable[Sequence[int]]) -> SurplusExpansion:
    """Keep only the terms generated by multi-indices in ``subset``."""
    subset = {tuple(int(v) for v in nu) for nu in subset}
    pos = {nu: k for k, nu in enumerate(expansion.indices)}
    missing = sorted(subset - set(pos))
    if missing:
        raise ContractError(f"indices {missing} are not part of the expansion")
    if np.any(expansion.origin < 0):
        raise ContractError("cannot restrict a merged expansion")
    keep = np.isin(expansion.origin, [pos[nu] for nu in subset])
    return SurplusExpansion(
        expansion.grid, expansion.counts[keep], expansion.ordinals[keep], expansion.coef[keep],
        expansion.point[keep], expansion.origin[keep], expansion.indices, expansion.values,
    )


def _basis_ids(counts: np.ndarray, ordinals: np.ndarray, table: dict) -> np.ndarray:
    ids = np.empty(len(counts), dtype=int)
    for t, key in enumerate(zip(counts.tolist(), ordinals.tolist())):
        ids[t] = table.setdefault(key, len(table))
    return ids


def term_gram(A: SurplusExpansion, B: SurplusExpansion) -> np.ndarray:
    """``int (term a)(term b) dpi`` for all term pairs (coefficients excluded)."""
    if A.M != B.M or A.family != B.family:
        raise ContractError("expansions differ in dimension or node family")
    fam = A.family
    G = np.ones((len(A), len(B)))
    for m in range(A.M):
        ca, cb = A.counts[:, m], B.counts[:, m]
        if np.all(ca == 1) and np.all(cb == 1):
            continue
        table: dict = {}
        ida = _basis_ids(ca, A.ordinals[:, m], table)
        idb = _basis_ids(cb, B.ordinals[:, m], table)
        keys = sorted(table, key=table.get)
        K = len(keys)
        tab = np.empty((K, K))
        for p, (na, ja) in enumerate(keys):
            for q, (nb, jb) in enumerate(keys):
                tab[p, q] = fam.mass(na, nb)[ja, jb]
        G *= tab[np.ix_(ida, idb)]
    return G


def parametric_gram(A: SurplusExpansion, B: SurplusExpansion | None = None) -> np.ndarray:
    """Gram matrix ``Lambda[z, z'] = int L^A_z L^B_z' dpi`` of the point functions.

    ``L^A_z`` collects every term of ``A`` attached to grid point ``z``; the
    result has shape ``(len(A.grid), len(B.grid))``. When both expansions
    carry scalar values the scalar ``int S_A S_B dpi`` is returned instead.
    """
    B = A if B is None else B
    a, b = A.compressed(), B.compressed()
    G = term_gram(a, b)
    lam = np.asarray(a.incidence().T @ (b.incidence().T @ G.T).T)
    if A.values is not None and B.values is not None and A.values.ndim == 1 and B.values.ndim == 1:
        return float(A.values @ lam @ B.values)
    return lam


def bochner_norm_sq(lam: np.ndarray, gram_values: np.ndarray) -> float:
    """``sum_{z z'} Lambda[z, z'] G[z, z']`` clipped at zero."""
    return max(float(np.sum(lam * gram_values)), 0.0)


def detail_expansion(nu: Sequence[int], family, values=None) -> SurplusExpansion:
    """Expansion of the single surplus ``Delta^{m(nu)}`` on the tensor grid of ``nu``."""
    fam = get_family(family)
    nu = tuple(int(v) for v in nu)
    closure = IndexSet(itertools.product(*(range(1, v + 1) for v in nu)))
    full = expand_surpluses(closure, fam)
    exp = restrict_to_indices(full, [nu])
    return exp.with_values(values) if values is not None else exp


def apply_detail(nu: Sequence[int], family, func):
    """Return ``y -> (Delta^{m(nu)} func)(y)`` for a callable ``func``.

    ``func`` maps an ``(n, M)`` array of points to ``n`` values.
    """
    exp = detail_expansion(nu, family)
    exp = exp.with_values(np.asarray(func(exp.grid.coords), dtype=float))
    return exp.evaluate


def lebesgue_bound(nu: Sequence[int], family) -> float:
    """Growth bound of the surplus operator norm, used as a diagnostic.

    ``prod nu_m`` for Clenshaw-Curtis and ``prod nu_m^2 max(1, ln nu_m)``
    for Leja points.
    """
    fam = get_family(family)
    nu = [int(v) for v in nu]
    if any(v < 1 for v in nu):
        raise ContractError("multi-index entries must be >= 1")
    if fam.kind == LEJA:
        return float(math.prod(v * v * max(1.0, math.log(v)) for v in nu))
    return float(math.prod(nu))


def polynomial_space_degrees(index_set: IndexSet, family) -> np.ndarray:
    """Multi-degrees spanning ``P_I = sum_nu P_{m(nu) - 1}``."""
    fam = get_family(family)
    degs = set()
    for nu in index_set:
        degs.update(itertools.product(*(range(fam.growth(v)) for v in nu)))
    return np.array(sorted(degs), dtype=int).reshape(-1, index_set.M)


def num_terms(index_set: IndexSet, family) -> int:
    """``sum_nu sum_s prod_m mf(nu_m - s_m)`` with ``mf(0) = 0``."""
    fam = get_family(family)
    total = 0
    for nu in index_set:
        for s in itertools.product((0, 1), repeat=len(nu)):
            total += math.prod(fam.growth(v - d) for v, d in zip(nu, s))
    return total

