"""Signal models: mode functions and the measurement map over a fixed grid.

A signal is a finite superposition sum_n a_n * phi(x; b_n). Complex-valued
models carry the complex magnitude as two reals (A = 2) and observations are
stored as interleaved re/im pairs, so the rest of the pipeline only ever sees
real vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .conical import ConicalSpaceSpec
from .multiset import SourceMultiset

REAL = "real"
COMPLEX = "complex"

FD_STEP = 1e-6  # central-difference step for missing location jacobians


@dataclass(frozen=True)
class MeasurementGrid:
    """Fixed measurement inputs x_1..x_M (scalars or small vectors)."""

    points: np.ndarray
    value_kind: str = COMPLEX

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim not in (1, 2) or pts.shape[0] < 1:
            raise ValueError("grid needs at least one point, as a 1-d or 2-d array")
        if not np.isfinite(pts).all():
            raise ValueError("grid points must be finite")
        if self.value_kind not in (REAL, COMPLEX):
            raise ValueError(f"value_kind must be '{REAL}' or '{COMPLEX}'")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def spacing(self) -> Optional[float]:
        """Common spacing of a sorted equispaced scalar grid, else None."""
        if self.points.ndim != 1 or self.n_points < 2:
            return None
        gaps = np.diff(self.points)
        h = gaps[0]
        if h <= 0:
            return None
        if np.allclose(gaps, h, rtol=1e-9, atol=1e-12 * max(1.0, abs(h))):
            return float(h)
        return None

    def typical_gap(self) -> Optional[float]:
        """Median consecutive gap of a scalar grid (sorted first)."""
        if self.points.ndim != 1 or self.n_points < 2:
            return None
        gaps = np.diff(np.sort(self.points))
        gaps = gaps[gaps > 0]
        if gaps.size == 0:
            return None
        return float(np.median(gaps))


@dataclass(frozen=True)
class Observation:
    """Measured values; complex observations are interleaved re/im pairs."""

    z: np.ndarray
    value_kind: str
    n_points: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        expected = self.n_points * (2 if self.value_kind == COMPLEX else 1)
        if z.shape != (expected,):
            raise ValueError(f"observation length {z.shape} does not match {expected}")
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @staticmethod
    def from_values(values: np.ndarray, value_kind: str) -> "Observation":
        values = np.asarray(values)
        if value_kind == COMPLEX:
            return Observation(pack_complex(values.astype(complex)), COMPLEX, len(values))
        return Observation(values.astype(float), REAL, len(values))

    @staticmethod
    def zero(grid: MeasurementGrid) -> "Observation":
        width = 2 if grid.value_kind == COMPLEX else 1
        return Observation(np.zeros(grid.n_points * width), grid.value_kind, grid.n_points)

    def as_complex(self) -> np.ndarray:
        if self.value_kind != COMPLEX:
            raise ValueError("observation is real-valued")
        return unpack_complex(self.z)


def pack_complex(values: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(values))
    out[0::2] = values.real
    out[1::2] = values.imag
    return out


def unpack_complex(packed: np.ndarray) -> np.ndarray:
    return packed[0::2] + 1j * packed[1::2]


@dataclass(frozen=True)
class SignalModel:
    """Behavioral contract for one mode family phi(x; b).

    ``mode(xs, b)`` evaluates phi at every grid point for one location vector
    b and returns an (M,) array, complex or real per ``value_kind``.
    ``mode_location_jacobian(xs, b)``, when given, returns the (M, B) array of
    d phi / d b; otherwise central finite differences are used.

    ``discrete_locations`` marks models whose locations form a fixed finite
    dictionary (the solver then fits magnitudes only). ``location_is_frequency``
    enables aliasing-band handling on equispaced grids.
    """

    name: str
    space: ConicalSpaceSpec
    value_kind: str
    mode: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mode_location_jacobian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    discrete_locations: Optional[tuple[tuple[float, ...], ...]] = None
    location_is_frequency: bool = False

    def __post_init__(self):
        if self.value_kind not in (REAL, COMPLEX):
            raise ValueError(f"value_kind must be '{REAL}' or '{COMPLEX}'")
        expected_a = 2 if self.value_kind == COMPLEX else 1
        if self.space.magnitude_dim != expected_a:
            raise ValueError(
                f"{self.value_kind} models need magnitude_dim {expected_a}, "
                f"got {self.space.magnitude_dim}"
            )


def scalar_magnitude(a: tuple[float, ...], value_kind: str):
    """Magnitude vector as the scalar weight it represents."""
    if value_kind == COMPLEX:
        return complex(a[0], a[1])
    return float(a[0])


def evaluate_S(model: SignalModel, grid: MeasurementGrid, sources: SourceMultiset) -> Observation:
    """Sampled superposition of all sources; the measurement map."""
    if sources.space != model.space:
        raise ValueError("sources do not live in the model's parameter space")
    if grid.value_kind != model.value_kind:
        raise ValueError(
            f"grid value_kind {grid.value_kind!r} does not match model {model.value_kind!r}"
        )
    dtype = complex if model.value_kind == COMPLEX else float
    acc = np.zeros(grid.n_points, dtype=dtype)
    for p in sources:
        c = scalar_magnitude(p.a, model.value_kind)
        if c == 0:
            continue
        acc = acc + c * np.asarray(model.mode(grid.points, np.asarray(p.b, dtype=float)))
    return Observation.from_values(acc, model.value_kind)


def location_jacobian(model: SignalModel, xs: np.ndarray, b: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """(M, B) derivative of the mode w.r.t. the location, analytic if available."""
    if model.mode_location_jacobian is not None:
        return np.asarray(model.mode_location_jacobian(xs, b))
    out = np.empty((len(xs), len(b)), dtype=complex if model.value_kind == COMPLEX else float)
    for j in range(len(b)):
        hi = b.copy()
        lo = b.copy()
        hi[j] += step
        lo[j] -= step
        out[:, j] = (np.asarray(model.mode(xs, hi)) - np.asarray(model.mode(xs, lo))) / (2 * step)
    return out


def _cisoid(xs: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.exp(2j * np.pi * b[0] * xs)


def _cisoid_jacobian(xs: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (2j * np.pi * xs * np.exp(2j * np.pi * b[0] * xs))[:, None]


def fourier_model(max_harmonic: int, beta: float = 1.0) -> SignalModel:
    """Periodic-signal model with integer harmonics -K..K as fixed locations."""
    if max_harmonic < 0:
        raise ValueError("max_harmonic must be >= 0")
    harmonics = tuple((float(k),) for k in range(-max_harmonic, max_harmonic + 1))
    return SignalModel(
        name="fourier",
        space=ConicalSpaceSpec(magnitude_dim=2, location_dim=1, beta=beta),
        value_kind=COMPLEX,
        mode=_cisoid,
        mode_location_jacobian=_cisoid_jacobian,
        discrete_locations=harmonics,
    )


def spectral_model(beta: float = 1.0) -> SignalModel:
    """Complex sinusoid model with a real frequency as the location."""
    return SignalModel(
        name="spectral",
        space=ConicalSpaceSpec(magnitude_dim=2, location_dim=1, beta=beta),
        value_kind=COMPLEX,
        mode=_cisoid,
        mode_location_jacobian=_cisoid_jacobian,
        location_is_frequency=True,
    )


@dataclass(frozen=True)
class MeasurementCountCheck:
    """Advisory verdict on whether the grid pins down a proposed source count."""

    sufficient: bool
    required_count: int     # minimum real measurement count that suffices
    real_count: int         # real measurements actually available


def check_measurement_count(
    space: ConicalSpaceSpec, proposed_sources: int, grid: MeasurementGrid
) -> MeasurementCountCheck:
    """Generic-injectivity count rule: need more than 2 N (A + B) real values.

    Advisory only; a run is never blocked on it.
    """
    if proposed_sources < 0:
        raise ValueError("proposed_sources must be >= 0")
    width = 2 if grid.value_kind == COMPLEX else 1
    real_count = grid.n_points * width
    bound = 2 * proposed_sources * space.point_dim
    return MeasurementCountCheck(
        sufficient=real_count > bound,
        required_count=bound + 1,
        real_count=real_count,
    )
