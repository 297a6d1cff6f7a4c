"""Source-count hypothesis sheaves and their consistency radii.

Both sheaves hold one proposed configuration per source count 1..P plus the
observation. The JP variant ties each column to the data only; the KP variant
additionally ties columns to each other through vertex-padded inclusions, so
its radius carries pairwise aggregation terms.

Radii are reported twice: as sums of plain norms (the metric form) and as
sums of squares (the smooth objective the solver minimizes). The squared
aggregation term re-optimizes the pairing for squared costs, so it is not
simply the square of the plain term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .conical import distance, magnitude_norm
from .model import MeasurementGrid, Observation, SignalModel, evaluate_S
from .multiset import SourceMultiset, include_pad, matching_cost, multiset_distance

JP = "JP"
KP = "KP"

SORTING_TOL = 1e-9  # containment tolerance for the sorted-chain check


@dataclass(frozen=True)
class SheafKind:
    """Which sheaf to evaluate and how many source counts it spans."""

    kind: str           # "JP" or "KP"
    max_sources: int    # P

    def __post_init__(self):
        if self.kind not in (JP, KP):
            raise ValueError(f"kind must be '{JP}' or '{KP}'")
        if self.max_sources < 1:
            raise ValueError("max_sources must be >= 1")


@dataclass(frozen=True)
class SheafAssignment:
    """One configuration per source count (columns[i] has i+1 sources) plus data."""

    columns: tuple[SourceMultiset, ...]
    observation: Observation

    def __post_init__(self):
        if len(self.columns) < 1:
            raise ValueError("assignment needs at least one column")
        space = self.columns[0].space
        for i, col in enumerate(self.columns):
            if len(col) != i + 1:
                raise ValueError(f"column {i + 1} has {len(col)} elements, expected {i + 1}")
            if col.space != space:
                raise ValueError("all columns must share one parameter space")

    @property
    def max_sources(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class RadiusBreakdown:
    """Itemized consistency radius of an assignment over a window of counts.

    ``total`` is exactly the sum of the listed plain terms; ``sq_total`` the
    sum of the squared ones. Entries outside the window are zero.
    """

    kind: str
    window_start: int
    data_terms: np.ndarray            # ||S(column) - z|| per column
    aggregation_terms: np.ndarray     # (P, P), [i, j] = padded pair distance for i < j
    total: float
    sq_data_terms: np.ndarray
    sq_aggregation_terms: np.ndarray  # pairing re-minimized for squared costs
    sq_total: float


def _compute_radius(
    kind: SheafKind,
    model: SignalModel,
    grid: MeasurementGrid,
    asg: SheafAssignment,
    window_start: int,
) -> RadiusBreakdown:
    p = asg.max_sources
    if kind.max_sources != p:
        raise ValueError(f"kind expects {kind.max_sources} columns, assignment has {p}")
    if not 1 <= window_start <= p:
        raise ValueError(f"window_start {window_start} out of range 1..{p}")
    expected = grid.n_points * (2 if grid.value_kind == "complex" else 1)
    if asg.observation.z.shape != (expected,):
        raise ValueError("observation length does not match the grid")

    data = np.zeros(p)
    sq_data = np.zeros(p)
    agg = np.zeros((p, p))
    sq_agg = np.zeros((p, p))

    for i in range(window_start - 1, p):
        r = evaluate_S(model, grid, asg.columns[i]).z - asg.observation.z
        sq_data[i] = float(np.dot(r, r))
        data[i] = float(np.sqrt(sq_data[i]))

    if kind.kind == KP:
        for i in range(window_start - 1, p):
            for j in range(i + 1, p):
                padded = include_pad(asg.columns[i], j + 1)
                agg[i, j] = multiset_distance(padded, asg.columns[j])
                sq_agg[i, j] = matching_cost(padded, asg.columns[j], squared=True)

    return RadiusBreakdown(
        kind=kind.kind,
        window_start=window_start,
        data_terms=data,
        aggregation_terms=agg,
        total=float(agg.sum() + data.sum()),
        sq_data_terms=sq_data,
        sq_aggregation_terms=sq_agg,
        sq_total=float(sq_agg.sum() + sq_data.sum()),
    )


def global_consistency_radius(
    kind: SheafKind, model: SignalModel, grid: MeasurementGrid, asg: SheafAssignment
) -> RadiusBreakdown:
    """Radius over the whole assignment (window starting at count 1)."""
    return _compute_radius(kind, model, grid, asg, window_start=1)


def local_consistency_radius(
    kind: SheafKind,
    model: SignalModel,
    grid: MeasurementGrid,
    asg: SheafAssignment,
    window_start: int,
) -> RadiusBreakdown:
    """Radius restricted to columns proposing at least ``window_start`` sources.

    Data terms run over counts >= window_start; KP aggregation terms over
    pairs inside that window. At window_start == P both reduce to the single
    residual of the top column.
    """
    return _compute_radius(kind, model, grid, asg, window_start=window_start)


def lift_truth_to_assignment(
    sources: SourceMultiset, p: int, model: SignalModel, grid: MeasurementGrid
) -> SheafAssignment:
    """Embed a known configuration as an assignment over counts 1..p.

    Columns below the true count hold its largest-magnitude truncations;
    columns above hold the truth padded with vertices. The observation is the
    truth's own forward evaluation, so the window at the true count vanishes.
    """
    n = len(sources)
    if n > p:
        raise ValueError(f"cannot lift {n} sources into {p} columns")
    cols = []
    for count in range(1, p + 1):
        if count <= n:
            cols.append(SourceMultiset(sources.elements[:count], sources.space))
        else:
            cols.append(include_pad(sources, count))
    obs = evaluate_S(model, grid, sources)
    return SheafAssignment(tuple(cols), obs)


@dataclass(frozen=True)
class SortingCheck:
    ok: bool
    violation: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def verify_sorting_property(asg: SheafAssignment, tol: float = SORTING_TOL) -> SortingCheck:
    """Check the sorted-chain shape of an assignment.

    Each column must be contained in the next (as a multiset, up to distance
    ``tol``) and every appended element must be no larger in magnitude than
    the smallest element already present. Returns the first violation found.
    """
    for i in range(asg.max_sources - 1):
        small, big = asg.columns[i], asg.columns[i + 1]
        cost = np.empty((len(small), len(big)))
        for r, pnt in enumerate(small.elements):
            for c, q in enumerate(big.elements):
                cost[r, c] = distance(pnt, q, small.space)
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if cost[r, c] > tol:
                return SortingCheck(
                    False,
                    f"column {i + 1} element {r} is not contained in column {i + 2} "
                    f"(nearest match distance {cost[r, c]:.3g})",
                )
        min_present = min(magnitude_norm(pnt) for pnt in small.elements)
        matched = set(cols.tolist())
        for c, q in enumerate(big.elements):
            if c in matched:
                continue
            if magnitude_norm(q) > min_present + tol:
                return SortingCheck(
                    False,
                    f"column {i + 2} appends element {c} with magnitude "
                    f"{magnitude_norm(q):.3g} above the column-{i + 1} minimum "
                    f"{min_present:.3g}",
                )
    return SortingCheck(True)
