"""Unordered source configurations and the permutation-minimized metric.

A configuration of N sources forgets ordering; the canonical representative
stores elements sorted by descending magnitude norm. The distance between two
configurations of equal size is the minimum over pairings of summed pointwise
distances, solved as an optimal assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .conical import (
    VERTEX_TOL,
    ConicalPoint,
    ConicalSpaceSpec,
    _check_dims,
    canonicalize,
    distance,
    magnitude_norm,
    vertex,
)


def _sort_key(p: ConicalPoint):
    # descending magnitude, deterministic lexicographic tie-break
    return (-magnitude_norm(p), p.a, p.b)


@dataclass(frozen=True)
class SourceMultiset:
    """Canonical sorted representative of an unordered source configuration."""

    elements: tuple[ConicalPoint, ...]
    space: ConicalSpaceSpec

    def __post_init__(self):
        for p in self.elements:
            _check_dims(p, self.space)
        canon = sorted((canonicalize(p) for p in self.elements), key=_sort_key)
        object.__setattr__(self, "elements", tuple(canon))

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @staticmethod
    def of(points, space: ConicalSpaceSpec) -> "SourceMultiset":
        """Build from an iterable of ConicalPoint or (a, b) pairs."""
        elems = tuple(
            p if isinstance(p, ConicalPoint) else ConicalPoint.of(*p) for p in points
        )
        return SourceMultiset(elems, space)

    @staticmethod
    def empty(space: ConicalSpaceSpec) -> "SourceMultiset":
        return SourceMultiset((), space)


def _check_same_space(u: SourceMultiset, w: SourceMultiset) -> None:
    if u.space != w.space:
        raise ValueError(f"multisets live in different spaces: {u.space} vs {w.space}")


def _pairwise_distances(u: SourceMultiset, w: SourceMultiset) -> np.ndarray:
    d = np.empty((len(u), len(w)))
    for i, p in enumerate(u.elements):
        for j, q in enumerate(w.elements):
            d[i, j] = distance(p, q, u.space)
    return d


def optimal_matching(u: SourceMultiset, w: SourceMultiset, *, squared: bool = False) -> np.ndarray:
    """Column indices pairing u's elements (in order) with w's, minimizing total cost.

    With ``squared`` the matching minimizes the sum of squared distances
    instead; the two optima can differ. Requires len(u) == len(w).
    """
    _check_same_space(u, w)
    if len(u) != len(w):
        raise ValueError(f"multiset lengths differ: {len(u)} vs {len(w)}")
    if len(u) == 0:
        return np.empty(0, dtype=int)
    cost = _pairwise_distances(u, w)
    if squared:
        cost = cost**2
    _, cols = linear_sum_assignment(cost)
    return cols


def _pair_addends(p: ConicalPoint, q: ConicalPoint, space: ConicalSpaceSpec, squared: bool):
    """Cost of one matched pair as a list of exact-summable addends.

    The plain metric has exact pairing ties: swapping two through-the-vertex
    pairs never changes the total, and with scalar magnitudes and no location
    the same holds for non-crossing direct pairs on the line. Representing a
    pair's cost by norm addends (the two endpoint norms for a through pair,
    signed norms for the scalar line case) makes tied pairings produce
    identical addend multisets, so fsum totals do not depend on which tied
    pairing the assignment solver happens to return.
    """
    a1 = np.asarray(p.a)
    a2 = np.asarray(q.a)
    b1 = np.asarray(p.b)
    b2 = np.asarray(q.b)
    n1 = float(np.linalg.norm(a1))
    n2 = float(np.linalg.norm(a2))
    through = n1 + n2
    direct = math.sqrt(
        float(np.dot(a1 - a2, a1 - a2)) + space.beta * float(np.dot(b1 - b2, b1 - b2))
    )
    if squared:
        return [min(through, direct) ** 2]
    if space.magnitude_dim == 1 and space.location_dim == 0:
        if float(a1[0]) * float(a2[0]) >= 0:
            return [max(n1, n2), -min(n1, n2)]
        return [n1, n2]
    if through <= direct:
        return [n1, n2]
    return [direct]


def _addend_table(u: SourceMultiset, w: SourceMultiset, squared: bool):
    n = len(u)
    return [
        [_pair_addends(u.elements[r], w.elements[c], u.space, squared) for c in range(n)]
        for r in range(n)
    ]


def _perm_total(table, cols) -> float:
    addends: list[float] = []
    for r, c in enumerate(cols):
        addends.extend(table[r][c])
    return math.fsum(addends)


def multiset_distance(u: SourceMultiset, w: SourceMultiset, *, exhaustive: bool = False) -> float:
    """Metric on configurations: min over pairings of summed pointwise distances.

    ``exhaustive`` searches all N! permutations instead of solving the
    assignment problem; kept as an independent cross-check.
    """
    return matching_cost(u, w, squared=False, exhaustive=exhaustive)


def matching_cost(
    u: SourceMultiset,
    w: SourceMultiset,
    *,
    squared: bool,
    exhaustive: bool = False,
) -> float:
    """Minimum over pairings of the summed (optionally squared) distances."""
    _check_same_space(u, w)
    if len(u) != len(w):
        raise ValueError(f"multiset lengths differ: {len(u)} vs {len(w)}")
    n = len(u)
    if n == 0:
        return 0.0
    table = _addend_table(u, w, squared)
    if exhaustive:
        return min(_perm_total(table, perm) for perm in permutations(range(n)))
    cost = _pairwise_distances(u, w)
    if squared:
        cost = cost**2
    _, cols = linear_sum_assignment(cost)
    return _perm_total(table, cols)


def concat(u: SourceMultiset, w: SourceMultiset) -> SourceMultiset:
    """Multiset union with multiplicity, re-sorted into canonical form."""
    _check_same_space(u, w)
    return SourceMultiset(u.elements + w.elements, u.space)


def include_pad(u: SourceMultiset, target_len: int) -> SourceMultiset:
    """Pad with canonical vertices up to ``target_len`` (the inclusion map)."""
    if target_len < len(u):
        raise ValueError(f"target_len {target_len} < multiset length {len(u)}")
    pad = (vertex(u.space),) * (target_len - len(u))
    return SourceMultiset(u.elements + pad, u.space)
