import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scfem.index_set import (ContractError, DimensionError, IndexSet, enrich, is_monotone,
                             reduced_margin)

from conftest import monotone_sets


def margin_by_definition(I, max_norm):
    """All nu outside I whose backward neighbours are all in I, by enumeration."""
    out = set()
    for nu in itertools.product(range(1, max_norm + 1), repeat=I.M):
        if nu in I or sum(nu) > max_norm:
            continue
        back = [nu[:m] + (nu[m] - 1,) + nu[m + 1:] for m in range(I.M) if nu[m] > 1]
        if all(b in I for b in back):
            out.add(nu)
    return out


@pytest.mark.parametrize("indices, expected", [
    ([(1, 1)], True),
    ([(2, 1)], False),
    ([(1, 1), (2, 1), (1, 2)], True),
    ([(1, 1), (2, 2)], False),
    ([], True),
])
def test_is_monotone_examples(indices, expected):
    assert is_monotone(indices) is expected


def test_is_monotone_dimension_mismatch():
    with pytest.raises(DimensionError):
        is_monotone([(1, 1), (1, 1, 1)])


def test_reduced_margin_examples():
    assert set(reduced_margin(IndexSet([(1, 1)]))) == {(2, 1), (1, 2)}
    assert set(reduced_margin(IndexSet([(1, 1), (2, 1)]))) == {(3, 1), (1, 2)}
    assert set(reduced_margin(IndexSet([(1,), (2,)]))) == {(3,)}


def test_reduced_margin_matches_enumeration():
    I = IndexSet([(1, 1), (2, 1)])
    assert set(reduced_margin(I)) == margin_by_definition(I, 5)


def test_non_monotone_rejected():
    with pytest.raises(ContractError):
        IndexSet([(2, 1)])


def test_enrich_examples():
    root = IndexSet([(1, 1)])
    assert set(enrich(root, [(2, 1)])) == {(1, 1), (2, 1)}
    assert set(enrich(root, [(2, 1), (1, 2)])) == {(1, 1), (2, 1), (1, 2)}
    with pytest.raises(ContractError):
        enrich(root, [(2, 2)])


def test_canonical_order_and_json():
    I = IndexSet([(1, 2), (1, 1), (2, 1)])
    assert I.indices == ((1, 1), (1, 2), (2, 1))
    assert I.to_json() == [[1, 1], [1, 2], [2, 1]]
    assert I == IndexSet(I.indices[::-1]) and hash(I) == hash(IndexSet(I.indices))


@settings(max_examples=60, deadline=None)
@given(monotone_sets(max_M=4, max_size=20), st.data())
def test_any_margin_subset_keeps_monotone(I, data):
    margin = reduced_margin(I)
    assert not set(margin) & set(I)
    subset = data.draw(st.sets(st.sampled_from(margin))) if margin else set()
    assert is_monotone(list(I) + list(subset))
    assert set(enrich(I, subset)) == set(I) | subset


@settings(max_examples=40, deadline=None)
@given(monotone_sets(max_M=3, max_size=12))
def test_margin_equals_definition(I):
    bound = max(sum(nu) for nu in I) + 1
    assert set(reduced_margin(I)) == margin_by_definition(I, bound)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.lists(st.integers(0, 10**6), min_size=1, max_size=8))
def test_margin_size_bound_along_enrichments(M, picks):
    # enrich by one margin index per step; |R(I_k)| <= (k + 1)^M
    I = IndexSet.root(M)
    for k, p in enumerate(picks, start=1):
        margin = reduced_margin(I)
        I = enrich(I, [margin[p % len(margin)]])
        assert len(reduced_margin(I)) <= (k + 1) ** M
