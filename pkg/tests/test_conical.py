import math

import numpy as np
import pytest

from modedec.conical import (
    ConicalPoint,
    ConicalSpaceSpec,
    canonicalize,
    distance,
    magnitude_norm,
    vertex,
)

SCALAR = ConicalSpaceSpec(magnitude_dim=1, location_dim=1)


def pt(a, b=()):
    return ConicalPoint.of(a, b)


def test_space_validation():
    with pytest.raises(ValueError):
        ConicalSpaceSpec(magnitude_dim=0, location_dim=1)
    with pytest.raises(ValueError):
        ConicalSpaceSpec(magnitude_dim=1, location_dim=-1)
    with pytest.raises(ValueError):
        ConicalSpaceSpec(magnitude_dim=1, location_dim=1, beta=0.0)


def test_distance_between_vertex_representatives_is_zero():
    # both points have zero magnitude, so they are the same element
    for beta in (0.25, 1.0, 4.0):
        space = ConicalSpaceSpec(1, 1, beta=beta)
        assert distance(pt(0.0, 3.7), pt(0.0, -12.0), space) == 0.0


def test_distance_same_location_reduces_to_magnitude_gap():
    assert distance(pt(2.0, 5.0), pt(3.0, 5.0), SCALAR) == 1.0


def test_distance_takes_through_vertex_route_when_shorter():
    # direct route sqrt(0 + 100) = 10, through-vertex route 1 + 1 = 2
    assert distance(pt(1.0, 0.0), pt(1.0, 10.0), SCALAR) == 2.0


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        distance(pt((1.0, 0.0), 0.0), pt(1.0, 0.0), SCALAR)
    with pytest.raises(ValueError):
        distance(pt(1.0, 0.0), pt(1.0, (0.0, 1.0)), SCALAR)


def test_magnitude_norm_values():
    assert magnitude_norm(pt(3.0, 42.0)) == 3.0
    assert magnitude_norm(pt(0.0, 17.0)) == 0.0


def test_magnitude_norm_scaling():
    p = pt((1.0, 1.0), 4.0)
    s = -2.0
    scaled = pt((s * 1.0, s * 1.0), s * 4.0)
    assert magnitude_norm(scaled) == pytest.approx(abs(s) * magnitude_norm(p), abs=1e-15)
    assert magnitude_norm(scaled) == pytest.approx(2 * math.sqrt(2), abs=1e-15)


def test_canonicalize():
    assert canonicalize(pt(0.0, 7.0), tol=0.0) == pt(0.0, 0.0)
    assert canonicalize(pt(1e-15, 3.0), tol=1e-12) == pt(0.0, 0.0)
    assert canonicalize(pt(2.0, 3.0), tol=1e-12) == pt(2.0, 3.0)
    with pytest.raises(ValueError):
        canonicalize(pt(1.0, 1.0), tol=-1.0)


def test_location_dim_zero_space():
    # a plain normed space is the degenerate case with no location factor
    space = ConicalSpaceSpec(magnitude_dim=2, location_dim=0)
    p = ConicalPoint((3.0, 4.0), ())
    q = ConicalPoint((0.0, 0.0), ())
    assert distance(p, q, space) == 5.0
    assert distance(p, p, space) == 0.0


def _random_point(rng, space):
    a = rng.normal(scale=2.0, size=space.magnitude_dim)
    if rng.uniform() < 0.15:
        a = a * 1e-14  # exercise near-vertex points
    b = rng.normal(scale=2.0, size=space.location_dim)
    return ConicalPoint(tuple(a), tuple(b))


def test_metric_axioms_randomized():
    rng = np.random.default_rng(20240817)
    for _ in range(800):
        space = ConicalSpaceSpec(
            int(rng.integers(1, 4)), int(rng.integers(0, 4)), beta=rng.choice([0.25, 1.0, 4.0])
        )
        p, q, r = (_random_point(rng, space) for _ in range(3))
        assert distance(p, p, space) == 0.0
        assert distance(p, q, space) == distance(q, p, space)
        assert distance(p, r, space) <= distance(p, q, space) + distance(q, r, space) + 1e-12


def test_zero_distance_implies_equal_canonical_forms():
    rng = np.random.default_rng(7)
    space = ConicalSpaceSpec(2, 2)
    for _ in range(200):
        p = _random_point(rng, space)
        q = p if rng.uniform() < 0.5 else ConicalPoint((0.0, 0.0), tuple(rng.normal(size=2)))
        p2 = ConicalPoint((0.0, 0.0), tuple(rng.normal(size=2))) if q is not p else p
        if distance(p2, q, space) == 0.0:
            assert canonicalize(p2) == canonicalize(q)


def test_magnitude_norm_is_distance_from_vertex():
    rng = np.random.default_rng(11)
    space = ConicalSpaceSpec(3, 2, beta=0.5)
    for _ in range(200):
        p = _random_point(rng, space)
        assert magnitude_norm(p) == pytest.approx(distance(vertex(space), p, space), abs=1e-15)


def test_norm_triangle_inequality_on_magnitude_sums():
    rng = np.random.default_rng(13)
    for _ in range(200):
        a1 = rng.normal(size=3)
        a2 = rng.normal(size=3)
        b = tuple(rng.normal(size=1))
        lhs = magnitude_norm(ConicalPoint(tuple(a1 + a2), b))
        rhs = magnitude_norm(ConicalPoint(tuple(a1), b)) + magnitude_norm(ConicalPoint(tuple(a2), b))
        assert lhs <= rhs + 1e-12
