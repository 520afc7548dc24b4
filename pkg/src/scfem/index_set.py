"""Downward-closed (monotone) multi-index sets and their reduced margins."""

from __future__ import annotations

from typing import Iterable, Iterator, Tuple

MultiIndex = Tuple[int, ...]


class DimensionError(ValueError):
    """Raised when multi-indices of different lengths are mixed."""


class ContractError(ValueError):
    """Raised when an operation's precondition does not hold."""


def _as_index(nu: Iterable[int]) -> MultiIndex:
    nu = tuple(int(v) for v in nu)
    if any(v < 1 for v in nu):
        raise ContractError(f"multi-index entries must be >= 1, got {nu}")
    return nu


def _common_dim(indices: Iterable[MultiIndex]) -> int | None:
    dims = {len(nu) for nu in indices}
    if len(dims) > 1:
        raise DimensionError(f"mixed multi-index dimensions {sorted(dims)}")
    return dims.pop() if dims else None


def unit(M: int, m: int) -> MultiIndex:
    return tuple(1 if k == m else 0 for k in range(M))


def backward_neighbours(nu: MultiIndex) -> Iterator[MultiIndex]:
    """Yield ``nu - e_m`` for every ``m`` with ``nu[m] > 1``."""
    for m, v in enumerate(nu):
        if v > 1:
            yield nu[:m] + (v - 1,) + nu[m + 1:]


def forward_neighbours(nu: MultiIndex) -> Iterator[MultiIndex]:
    for m, v in enumerate(nu):
        yield nu[:m] + (v + 1,) + nu[m + 1:]


def is_monotone(indices: Iterable[Iterable[int]]) -> bool:
    """Check downward-closedness of a collection of multi-indices.

    An empty collection is monotone. A nonempty one must contain the
    all-ones index, which downward-closedness already implies.
    """
    members = {_as_index(nu) for nu in indices}
    M = _common_dim(members)
    if M is None:
        return True
    if (1,) * M not in members:
        return False
    return all(mu in members for nu in members for mu in backward_neighbours(nu))


class IndexSet:
    """Immutable monotone set of multi-indices with entries >= 1.

    Indices are kept in lexicographic order so every derived quantity
    (grids, margins, marking ties) is reproducible.

    Parameters
    ----------
    indices : iterable of tuples
        Members of the set. Must be downward closed.
    M : int, optional
        Dimension, required only when ``indices`` is empty.
    """

    __slots__ = ("_indices", "_members", "M")

    def __init__(self, indices: Iterable[Iterable[int]], M: int | None = None):
        members = {_as_index(nu) for nu in indices}
        dim = _common_dim(members)
        if dim is None:
            if M is None:
                raise ContractError("dimension M is required for an empty set")
            dim = M
        elif M is not None and M != dim:
            raise DimensionError(f"indices have dimension {dim}, expected {M}")
        if not is_monotone(members):
            raise ContractError("index set is not downward closed")
        self.M = dim
        self._members = frozenset(members)
        self._indices = tuple(sorted(members))

    @classmethod
    def root(cls, M: int) -> "IndexSet":
        """The set ``{(1, ..., 1)}``."""
        return cls([(1,) * M])

    @property
    def indices(self) -> Tuple[MultiIndex, ...]:
        return self._indices

    def __iter__(self):
        return iter(self._indices)

    def __len__(self):
        return len(self._indices)

    def __contains__(self, nu):
        return tuple(nu) in self._members

    def __eq__(self, other):
        if not isinstance(other, IndexSet):
            return NotImplemented
        return self.M == other.M and self._members == other._members

    def __hash__(self):
        return hash((self.M, self._members))

    def __repr__(self):
        return f"IndexSet({list(self._indices)})"

    def union(self, other: Iterable[Iterable[int]]) -> "IndexSet":
        return IndexSet(self._members | {_as_index(nu) for nu in other}, M=self.M)

    def to_json(self):
        return [list(nu) for nu in self._indices]


def reduced_margin(I: IndexSet) -> Tuple[MultiIndex, ...]:
    """Indices outside ``I`` all of whose backward neighbours lie in ``I``.

    Candidates are the forward neighbours of members; the result is sorted
    lexicographically.
    """
    if not isinstance(I, IndexSet):
        members = [_as_index(nu) for nu in I]
        if not is_monotone(members):
            raise ContractError("reduced margin requires a monotone index set")
        I = IndexSet(members)
    margin = set()
    for nu in I:
        for cand in forward_neighbours(nu):
            if cand in I or cand in margin:
                continue
            if all(mu in I for mu in backward_neighbours(cand)):
                margin.add(cand)
    return tuple(sorted(margin))


def enrich(I: IndexSet, added: Iterable[Iterable[int]]) -> IndexSet:
    """Return ``I`` united with ``added``, a subset of its reduced margin."""
    added = {_as_index(nu) for nu in added}
    margin = set(reduced_margin(I))
    outside = sorted(added - margin)
    if outside:
        raise ContractError(f"indices {outside} are not in the reduced margin")
    return I.union(added)
