"""Conical parameter space: source points, bottleneck metric, magnitude norm.

A source is a pair (a, b) of a magnitude vector and a location vector. All
points with zero magnitude are the same element (the vertex): a source with
no magnitude has no observable location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Magnitudes at or below this are folded onto the vertex by canonicalize().
VERTEX_TOL = 1e-12


@dataclass(frozen=True)
class ConicalSpaceSpec:
    """Dimensions and metric weight of a conical parameter space."""

    magnitude_dim: int      # A, length of the magnitude vector (>= 1)
    location_dim: int       # B, length of the location vector (0 allowed)
    beta: float = 1.0       # weight on location mismatch in the metric

    def __post_init__(self):
        if self.magnitude_dim < 1:
            raise ValueError("magnitude_dim must be >= 1")
        if self.location_dim < 0:
            raise ValueError("location_dim must be >= 0")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def point_dim(self) -> int:
        return self.magnitude_dim + self.location_dim


@dataclass(frozen=True)
class ConicalPoint:
    """One source's parameters: magnitude vector ``a`` and location vector ``b``.

    The canonical representative of the vertex stores b = 0; use
    `canonicalize` before comparing points for equality.
    """

    a: tuple[float, ...]
    b: tuple[float, ...]

    @staticmethod
    def of(a, b=()) -> "ConicalPoint":
        """Build a point, accepting scalars or sequences for either slot."""
        a_t = (float(a),) if np.isscalar(a) else tuple(float(x) for x in a)
        b_t = (float(b),) if np.isscalar(b) else tuple(float(x) for x in b)
        return ConicalPoint(a_t, b_t)


def magnitude_norm(p: ConicalPoint) -> float:
    """Euclidean norm of the magnitude vector; also the distance to the vertex."""
    return float(np.linalg.norm(p.a))


def vertex(space: ConicalSpaceSpec) -> ConicalPoint:
    """The canonical no-source element of the space."""
    return ConicalPoint((0.0,) * space.magnitude_dim, (0.0,) * space.location_dim)


def canonicalize(p: ConicalPoint, tol: float = VERTEX_TOL) -> ConicalPoint:
    """Map near-zero-magnitude points onto the canonical vertex representative."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if magnitude_norm(p) <= tol:
        return ConicalPoint((0.0,) * len(p.a), (0.0,) * len(p.b))
    return p


def _check_dims(p: ConicalPoint, space: ConicalSpaceSpec) -> None:
    if len(p.a) != space.magnitude_dim or len(p.b) != space.location_dim:
        raise ValueError(
            f"point dims ({len(p.a)}, {len(p.b)}) do not match space "
            f"({space.magnitude_dim}, {space.location_dim})"
        )


def distance(p: ConicalPoint, q: ConicalPoint, space: ConicalSpaceSpec) -> float:
    """Bottleneck metric between two sources.

    The smaller of the through-the-vertex route ||a1|| + ||a2|| and the
    weighted direct route sqrt(||a1 - a2||^2 + beta ||b1 - b2||^2).
    """
    _check_dims(p, space)
    _check_dims(q, space)
    a1 = np.asarray(p.a, dtype=float)
    a2 = np.asarray(q.a, dtype=float)
    b1 = np.asarray(p.b, dtype=float)
    b2 = np.asarray(q.b, dtype=float)
    through = float(np.linalg.norm(a1)) + float(np.linalg.norm(a2))
    direct = math.sqrt(
        float(np.dot(a1 - a2, a1 - a2)) + space.beta * float(np.dot(b1 - b2, b1 - b2))
    )
    return min(through, direct)
