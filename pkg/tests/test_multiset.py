import numpy as np
import pytest

from modedec.conical import ConicalPoint, ConicalSpaceSpec, magnitude_norm
from modedec.multiset import (
    SourceMultiset,
    concat,
    include_pad,
    matching_cost,
    multiset_distance,
)

SCALAR = ConicalSpaceSpec(magnitude_dim=1, location_dim=1)


def ms(pairs, space=SCALAR):
    return SourceMultiset.of(pairs, space)


def test_canonical_form_sorts_by_descending_magnitude():
    m = ms([(1.0, 9.0), (3.0, 1.0), (2.0, 5.0)])
    assert [p.a[0] for p in m] == [3.0, 2.0, 1.0]


def test_canonical_form_breaks_ties_lexicographically():
    m = ms([(2.0, 7.0), (-2.0, 1.0), (2.0, 3.0)])
    assert [p for p in m.elements] == sorted(m.elements, key=lambda p: (-magnitude_norm(p), p.a, p.b))
    m2 = ms([(2.0, 3.0), (2.0, 7.0), (-2.0, 1.0)])
    assert m == m2


def test_construction_canonicalizes_near_vertices():
    m = ms([(1e-15, 5.0), (1.0, 2.0)])
    assert m.elements[1] == ConicalPoint((0.0,), (0.0,))


def test_distance_identity_and_exchange():
    u = ms([(1.0, 0.0), (2.0, 5.0)])
    w = ms([(2.0, 5.0), (1.0, 0.0)])  # same configuration, listed in the other order
    assert multiset_distance(u, u) == 0.0
    assert multiset_distance(u, w) == 0.0


def test_distance_two_element_example():
    # identity pairing costs 0 + min{2, 1} = 1; the swap costs 2 + 1 = 3
    u = ms([(1.0, 0.0), (1.0, 1.0)])
    w = ms([(1.0, 0.0), (1.0, 2.0)])
    assert multiset_distance(u, w) == 1.0
    assert multiset_distance(u, w, exhaustive=True) == 1.0


def test_distance_validation():
    u = ms([(1.0, 0.0)])
    w = ms([(1.0, 0.0), (1.0, 1.0)])
    with pytest.raises(ValueError):
        multiset_distance(u, w)
    other = ms([(1.0, 0.0)], ConicalSpaceSpec(1, 1, beta=2.0))
    with pytest.raises(ValueError):
        multiset_distance(u, other)


def test_empty_multiset_distance_is_zero():
    assert multiset_distance(ms([]), ms([])) == 0.0


def _random_multiset(rng, n, space):
    pts = [
        ConicalPoint(tuple(rng.normal(scale=1.5, size=space.magnitude_dim)),
                     tuple(rng.normal(scale=1.5, size=space.location_dim)))
        for _ in range(n)
    ]
    return SourceMultiset.of(pts, space)


def test_assignment_agrees_with_exhaustive_search():
    rng = np.random.default_rng(101)
    for trial in range(120):
        space = ConicalSpaceSpec(
            int(rng.integers(1, 3)), int(rng.integers(0, 3)), beta=rng.choice([0.25, 1.0, 4.0])
        )
        n = int(rng.integers(1, 6))
        u = _random_multiset(rng, n, space)
        w = _random_multiset(rng, n, space)
        assert multiset_distance(u, w) == multiset_distance(u, w, exhaustive=True)
        assert matching_cost(u, w, squared=True) == matching_cost(
            u, w, squared=True, exhaustive=True
        )


def test_metric_axioms_on_multisets():
    rng = np.random.default_rng(31)
    space = ConicalSpaceSpec(2, 1, beta=0.5)
    for _ in range(150):
        n = int(rng.integers(1, 5))
        u, v, w = (_random_multiset(rng, n, space) for _ in range(3))
        assert multiset_distance(u, u) == 0.0
        assert multiset_distance(u, v) == multiset_distance(v, u)
        assert multiset_distance(u, w) <= (
            multiset_distance(u, v) + multiset_distance(v, w) + 1e-12
        )


def test_concat_sorts_and_is_commutative():
    a = ms([(3.0, 1.0)])
    b = ms([(5.0, 2.0)])
    both = concat(a, b)
    assert [p.a[0] for p in both] == [5.0, 3.0]
    assert concat(b, a) == both
    assert concat(a, ms([])) == a


def test_concat_space_mismatch():
    with pytest.raises(ValueError):
        concat(ms([(1.0, 0.0)]), ms([(1.0, 0.0)], ConicalSpaceSpec(1, 1, beta=3.0)))


def test_include_pad():
    u = ms([(2.0, 1.5)])
    padded = include_pad(u, 2)
    assert len(padded) == 2
    assert padded.elements[0] == u.elements[0]
    assert padded.elements[1] == ConicalPoint((0.0,), (0.0,))
    assert include_pad(u, 1) == u
    assert len(include_pad(ms([]), 3)) == 3
    with pytest.raises(ValueError):
        include_pad(padded, 1)


def test_padding_is_isometric_on_equal_lengths():
    rng = np.random.default_rng(47)
    space = ConicalSpaceSpec(1, 2, beta=2.0)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        u = _random_multiset(rng, n, space)
        w = _random_multiset(rng, n, space)
        base = multiset_distance(u, w)
        padded = multiset_distance(include_pad(u, n + k), include_pad(w, n + k))
        assert padded == pytest.approx(base, abs=1e-12)


def test_restriction_is_distance_nonincreasing():
    rng = np.random.default_rng(53)
    space = ConicalSpaceSpec(2, 1)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        u = _random_multiset(rng, n, space)
        w = _random_multiset(rng, n, space)
        assert multiset_distance(include_pad(u, n + 1), include_pad(w, n + 1)) <= (
            multiset_distance(u, w) + 1e-12
        )
