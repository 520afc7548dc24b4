"""Nested 1D collocation nodes, growth rules and univariate Lagrange tools.

All quantities refer to the uniform probability measure ``dy/2`` on
``[-1, 1]``. A :class:`NodeFamily` stores its nodes in *hierarchical*
order: the first ``growth(i)`` entries are exactly the level-``i`` node
set, so a node is identified by its integer ordinal and never by a float.
"""

from __future__ import annotations

import math
import threading
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .index_set import ContractError

LEJA = "leja"
CLENSHAW_CURTIS = "cc"
FAMILIES = (LEJA, CLENSHAW_CURTIS)


def _check_kind(kind: str) -> str:
    kind = str(kind).lower()
    if kind not in FAMILIES:
        raise ValueError(f"unknown node family {kind!r}; expected one of {FAMILIES}")
    return kind


def growth(kind: str, i: int) -> int:
    """Number of nodes on level ``i``.

    Leja points grow by one node per level; Clenshaw-Curtis nodes follow the
    doubling rule ``2**(i-1) + 1`` for ``i > 1``.
    """
    kind = _check_kind(kind)
    if i < 0:
        raise ContractError(f"level must be >= 0, got {i}")
    if kind == LEJA or i <= 1:
        return int(i)
    return 2 ** (i - 1) + 1


def _cc_level(n: int) -> int:
    if n == 1:
        return 1
    k = n - 1
    if n < 3 or k & (k - 1):
        raise ContractError(f"{n} is not a Clenshaw-Curtis node count")
    return k.bit_length()  # 2**(i-1) == k


def cc_nodes(n: int) -> np.ndarray:
    """Clenshaw-Curtis extrema ``cos(pi j / (n - 1))`` sorted ascending."""
    _cc_level(n)
    if n == 1:
        return np.zeros(1)
    j = np.arange(n)
    # sine form keeps the midpoint at exactly 0 and the set exactly symmetric
    return np.sin(np.pi * (2 * j - (n - 1)) / (2 * (n - 1)))


def _log_abs_poly(y, xs):
    return float(np.sum(np.log(np.abs(y - xs))))


def _next_leja(xs: np.ndarray) -> float:
    """Maximiser of ``prod |y - x_j|`` over ``[-1, 1]``, ties toward +1.

    ``log|p|`` is concave between consecutive roots, so each interior
    maximiser is the unique zero of ``sum 1/(y - x_j)``; outside the hull
    of the nodes the maximum sits at an end point.
    """
    candidates = [-1.0, 1.0]
    srt = np.sort(xs)
    for lo, hi in zip(srt[:-1], srt[1:]):
        width = hi - lo
        a, b = lo + 1e-14 * width, hi - 1e-14 * width
        candidates.append(brentq(lambda y: np.sum(1.0 / (y - xs)), a, b, xtol=1e-16, rtol=1e-15))
    candidates = [c for c in candidates if not np.any(np.isclose(c, xs, rtol=0, atol=1e-13))]
    vals = np.array([_log_abs_poly(c, xs) for c in candidates])
    best = vals.max()
    ties = [c for c, v in zip(candidates, vals) if v >= best - 1e-12 * max(1.0, abs(best))]
    return max(ties)


_leja_lock = threading.Lock()
_leja_seq = [0.0]


def leja_nodes(n: int) -> np.ndarray:
    """First ``n`` points of the greedy Leja sequence started at 0.

    Returned in sequence order, so ``leja_nodes(n)`` is a prefix of
    ``leja_nodes(n + 1)``.
    """
    if n < 1:
        raise ContractError(f"need at least one Leja node, got {n}")
    with _leja_lock:
        while len(_leja_seq) < n:
            _leja_seq.append(_next_leja(np.asarray(_leja_seq)))
        return np.array(_leja_seq[:n])


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w = w / 2.0
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int):
    """Gauss-Legendre rule for ``int_{-1}^{1} g(y) dy/2``.

    Exact for polynomials of degree ``2n - 1``; the weights sum to one.
    """
    if n < 1:
        raise ContractError(f"need at least one quadrature node, got {n}")
    x, w = _gauss_legendre(int(n))
    return x.copy(), w.copy()


def barycentric_weights(nodes, chunk: int = 1024) -> np.ndarray:
    """Barycentric weights ``1 / prod_{k != j} (x_j - x_k)``, rescaled to max modulus 1.

    The products are accumulated as sums of logarithms so that thousands of
    nodes neither underflow nor overflow; the common scale cancels in the
    barycentric formula.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    logw = np.empty(n)
    sign = np.empty(n)
    for lo in range(0, n, chunk):
        diff = nodes[lo:lo + chunk, None] - nodes[None, :]
        diff[np.arange(diff.shape[0]), np.arange(lo, lo + diff.shape[0])] = 1.0
        if np.any(diff == 0.0):
            raise ContractError("Lagrange nodes must be distinct")
        logw[lo:lo + chunk] = -np.log(np.abs(diff)).sum(axis=1)
        sign[lo:lo + chunk] = np.where((diff < 0).sum(axis=1) % 2, -1.0, 1.0)
    return sign * np.exp(logw - logw.max())


def lagrange_basis(nodes, y, weights=None) -> np.ndarray:
    """All Lagrange basis polynomials of ``nodes`` evaluated at ``y``.

    Returns an array of shape ``(len(y), len(nodes))`` computed with the
    second (true) barycentric formula.
    """
    nodes = np.asarray(nodes, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if weights is None:
        weights = barycentric_weights(nodes)
    # points that coincide with a node get a unit row
    order = np.argsort(nodes)
    pos = np.clip(np.searchsorted(nodes[order], y), 0, len(nodes) - 1)
    hit_node = order[pos]
    hit = nodes[hit_node] == y
    if len(nodes) > 1:
        left = order[np.clip(pos - 1, 0, len(nodes) - 1)]
        lhit = ~hit & (nodes[left] == y)
        hit_node[lhit], hit[lhit] = left[lhit], True
    out = np.subtract.outer(y, nodes)
    with np.errstate(divide="ignore", invalid="ignore"):
        np.divide(weights, out, out=out)
        out /= out.sum(axis=1, keepdims=True)
    if hit.any():
        rows = np.nonzero(hit)[0]
        out[rows] = 0.0
        out[rows, hit_node[rows]] = 1.0
    return out


def lagrange_eval(nodes, j: int, y):
    """``l_j(y) = prod_{k != j} (y - x_k) / (x_j - x_k)``."""
    nodes = np.asarray(nodes, dtype=float)
    if not 0 <= j < len(nodes):
        raise ContractError(f"basis index {j} out of range for {len(nodes)} nodes")
    vals = lagrange_basis(nodes, y)[:, j]
    return vals[0] if np.ndim(y) == 0 else vals


def lagrange_mass_1d(nodesA, i: int, nodesB, j: int) -> float:
    """``int l_i^A(y) l_j^B(y) dy/2`` by an exact Gauss-Legendre rule."""
    nodesA = np.asarray(nodesA, dtype=float)
    nodesB = np.asarray(nodesB, dtype=float)
    x, w = gauss_legendre(math.ceil((len(nodesA) + len(nodesB)) / 2))
    la = lagrange_basis(nodesA, x)[:, i]
    lb = lagrange_basis(nodesB, x)[:, j]
    return float(np.dot(w, la * lb))


def _cc_hierarchical(n: int) -> np.ndarray:
    """CC nodes ordered so each level's set is a prefix; new nodes ascending."""
    level = _cc_level(n)
    order = [np.zeros(1)]
    for lev in range(2, level + 1):
        pts = cc_nodes(growth(CLENSHAW_CURTIS, lev))
        # new nodes sit at odd positions of the finer set, except on level 2
        order.append(pts[[0, 2]] if lev == 2 else pts[1::2])
    return np.concatenate(order)


class NodeFamily:
    """Nested node family with memoized nodes and 1D mass integrals.

    Parameters
    ----------
    kind : {"leja", "cc"}
    """

    def __init__(self, kind: str):
        self.kind = _check_kind(kind)
        self._lock = threading.RLock()
        self._nodes: dict[int, np.ndarray] = {}
        self._weights: dict[int, np.ndarray] = {}
        self._mass: dict[tuple, np.ndarray] = {}

    def __repr__(self):
        return f"NodeFamily({self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, NodeFamily) and other.kind == self.kind

    def __hash__(self):
        return hash(("NodeFamily", self.kind))

    def growth(self, i: int) -> int:
        return growth(self.kind, i)

    def valid_count(self, n: int) -> bool:
        if self.kind == LEJA:
            return n >= 1
        try:
            _cc_level(n)
        except ContractError:
            return False
        return True

    def nodes(self, n: int) -> np.ndarray:
        """The ``n`` nodes of one level, in hierarchical (ordinal) order."""
        with self._lock:
            if n not in self._nodes:
                if self.kind == LEJA:
                    pts = leja_nodes(n)
                else:
                    pts = _cc_hierarchical(n)
                pts.setflags(write=False)
                self._nodes[n] = pts
            return self._nodes[n]

    def ordinal_nodes(self, count: int) -> np.ndarray:
        """Coordinates of ordinals ``0 .. count-1`` (count need not be a level size)."""
        n = count
        if self.kind == CLENSHAW_CURTIS:
            n = 1
            while n < count:
                n = 3 if n == 1 else 2 * n - 1
        return self.nodes(n)[:count]

    def weights(self, n: int) -> np.ndarray:
        with self._lock:
            if n not in self._weights:
                if self.kind == CLENSHAW_CURTIS and n > 1:
                    # closed form for Chebyshev extrema: alternating signs, halved at the ends
                    rank = np.argsort(np.argsort(self.nodes(n)))
                    w = np.where((n - 1 - rank) % 2, -1.0, 1.0)
                    w[(rank == 0) | (rank == n - 1)] *= 0.5
                    self._weights[n] = w
                else:
                    self._weights[n] = barycentric_weights(self.nodes(n))
            return self._weights[n]

    def basis(self, n: int, y) -> np.ndarray:
        """Values of the ``n`` level basis polynomials at points ``y``."""
        return lagrange_basis(self.nodes(n), y, self.weights(n))

    def mass(self, nA: int, nB: int) -> np.ndarray:
        """Matrix ``int l_i^{nA} l_j^{nB} dpi`` for all ``i < nA, j < nB``."""
        key = (nA, nB)
        with self._lock:
            cached = self._mass.get(key)
        if cached is not None:
            return cached
        x, w = gauss_legendre(math.ceil((nA + nB) / 2))
        la = self.basis(nA, x)
        lb = self.basis(nB, x)
        mat = (la * w[:, None]).T @ lb
        mat.setflags(write=False)
        with self._lock:
            self._mass.setdefault(key, mat)
            return self._mass[key]

    def lagrange_mass(self, nA: int, i: int, nB: int, j: int) -> float:
        return float(self.mass(nA, nB)[i, j])


_FAMILIES: dict[str, NodeFamily] = {}


def get_family(kind) -> NodeFamily:
    """Shared :class:`NodeFamily` instance for ``kind`` (caches are reused)."""
    if isinstance(kind, NodeFamily):
        return kind
    kind = _check_kind(kind)
    fam = _FAMILIES.get(kind)
    if fam is None:
        fam = _FAMILIES.setdefault(kind, NodeFamily(kind))
    return fam
