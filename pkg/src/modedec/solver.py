"""Consistency-radius minimization and source-count detection.

The fixed-count solve is a multistart nonlinear least squares fit of the
superposition against the observation. Starts draw locations uniformly from a
box and get their magnitudes from a linear solve (the superposition is linear
in them); frequency-like models on equispaced grids also get one
periodogram-peak start. Local polishing uses a trust-region least-squares
method driven by the analytic jacobians.

Count detection runs over the per-count local radii: the first vanishing
count wins; otherwise the knee rule picks the destination of the first large
drop that lands on the tail plateau.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .conical import ConicalPoint, distance as point_distance, magnitude_norm, vertex
from .model import (
    COMPLEX,
    MeasurementGrid,
    Observation,
    SignalModel,
    check_measurement_count,
    evaluate_S,
    unpack_complex,
)
from .multiset import SourceMultiset, include_pad, optimal_matching
from .objective import (
    aggregation_sq_and_grads,
    block_size,
    data_residual,
    data_residual_and_jac,
    data_value_and_grad,
    flatten_multiset,
    lstsq_magnitudes,
    multiset_from_params,
    split_params,
    tied_chain_value_and_grad,
)
from .sheaf import KP, SheafAssignment, SheafKind, local_consistency_radius

# re-exported here because they are solver-facing operations
from .objective import gradient_of_objective, objective_value  # noqa: F401

JP_STRATEGY = "jp"
KP_UP = "kp-up"
KP_DOWN = "kp-down"

_EXTRA_KEY = 104729  # spawn-key tag for the greedy chain's random extra element


class SolverNumericError(RuntimeError):
    """Raised when an objective evaluates non-finite (model overflow)."""


@dataclass(frozen=True)
class InitBox:
    """Per-coordinate sampling intervals for random starts."""

    a_low: float = -2.0
    a_high: float = 2.0
    b_low: Optional[float] = None    # None: derived from the grid's natural band
    b_high: Optional[float] = None

    def __post_init__(self):
        if not self.a_low < self.a_high:
            raise ValueError("magnitude box must have a_low < a_high")
        if (self.b_low is None) != (self.b_high is None):
            raise ValueError("set both or neither of b_low/b_high")
        if self.b_low is not None and not self.b_low < self.b_high:
            raise ValueError("location box must have b_low < b_high")


@dataclass(frozen=True)
class SolverConfig:
    max_sources: int = 4             # P, largest source count considered
    restarts: int = 16
    max_iterations: int = 300
    gradient_tol: float = 1e-12
    step_init: float = 1.0           # characteristic parameter scale for the optimizer
    seed: int = 0
    init_box: InitBox = field(default_factory=InitBox)
    knee_ratio: float = 10.0
    vanish_tol: float = 1e-8
    greedy_warn_ratio: float = 0.25  # relative chain mismatch that flags greediness
    threads: int = 1

    def __post_init__(self):
        if self.max_sources < 1:
            raise ValueError("max_sources must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tol > 0:
            raise ValueError("gradient_tol must be positive")
        if not self.step_init > 0:
            raise ValueError("step_init must be positive")
        if not self.knee_ratio > 1:
            raise ValueError("knee_ratio must be > 1")
        if not self.vanish_tol >= 0:
            raise ValueError("vanish_tol must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class FixedCountResult:
    sources: SourceMultiset
    residual: float          # ||S(sources) - z||
    sq_residual: float
    iterations: int
    converged: bool
    n_starts: int
    best_start: int


@dataclass(frozen=True)
class CountResult:
    count: int
    sources: Optional[SourceMultiset]
    local_radius: float        # r(n): per-column residual (jp) or windowed radius (kp)
    sq_residual: float         # squared data residual of the reported sources
    solve_sq_residual: float   # best data objective reached by the fixed-count solve
    iterations: int
    converged: bool
    error: Optional[str] = None


@dataclass(frozen=True)
class DecompositionReport:
    strategy: str
    per_count: tuple[CountResult, ...]
    detected_count: int
    warnings: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def radii(self) -> list[float]:
        return [row.local_radius for row in self.per_count]


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _resolve_boxes(cfg: SolverConfig, model: SignalModel, grid: MeasurementGrid):
    a_box = (cfg.init_box.a_low, cfg.init_box.a_high)
    if cfg.init_box.b_low is not None:
        return a_box, (cfg.init_box.b_low, cfg.init_box.b_high)
    if model.location_is_frequency:
        gap = grid.spacing() or grid.typical_gap() or 1.0
        band = 0.5 / gap
        return a_box, (-band, band)
    return a_box, (-1.0, 1.0)


def _start_rng(cfg: SolverConfig, count: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(count, index)))


def _assemble_params(space, mags: np.ndarray, locs: np.ndarray, value_kind: str) -> np.ndarray:
    n = locs.shape[0]
    step = block_size(space)
    out = np.empty(n * step)
    for k in range(n):
        if value_kind == COMPLEX:
            out[k * step] = mags[k].real
            out[k * step + 1] = mags[k].imag
        else:
            out[k * step] = mags[k].real if np.iscomplexobj(mags) else mags[k]
        out[k * step + space.magnitude_dim : (k + 1) * step] = locs[k]
    return out


def _magnitudes_for_locations(model, grid, z, locs, a_box, rng) -> np.ndarray:
    """Linear-fit magnitudes for drawn locations, clipped to the box scale."""
    try:
        coef = lstsq_magnitudes(model, grid, z, list(locs))
    except np.linalg.LinAlgError:
        size = locs.shape[0]
        if model.value_kind == COMPLEX:
            return rng.uniform(a_box[0], a_box[1], size) + 1j * rng.uniform(a_box[0], a_box[1], size)
        return rng.uniform(a_box[0], a_box[1], size)
    cap = 4.0 * max(abs(a_box[0]), abs(a_box[1]))
    mags = np.abs(coef)
    big = mags > cap
    if np.any(big):
        coef = coef.copy()
        coef[big] *= cap / mags[big]
    return coef


def _random_start(model, grid, z, n, a_box, b_box, rng) -> np.ndarray:
    space = model.space
    locs = rng.uniform(b_box[0], b_box[1], size=(n, space.location_dim))
    mags = _magnitudes_for_locations(model, grid, z, locs, a_box, rng)
    return _assemble_params(space, mags, locs, model.value_kind)


def _peak_start(model, grid, z, n, a_box) -> Optional[np.ndarray]:
    """Periodogram-peak start for frequency-like models on equispaced grids."""
    if not model.location_is_frequency or model.space.location_dim != 1:
        return None
    if model.value_kind != COMPLEX:
        return None
    h = grid.spacing()
    if h is None:
        return None
    zc = unpack_complex(z)
    m = len(zc)
    npad = max(512, 8 * m)
    spectrum = np.abs(np.fft.fft(zc, npad))
    freqs = np.fft.fftfreq(npad, d=h)
    is_peak = (spectrum > np.roll(spectrum, 1)) & (spectrum >= np.roll(spectrum, -1))
    order = np.argsort(-spectrum, kind="stable")
    band = 1.0 / h
    min_sep = 0.3 / (m * h)
    picked: list[float] = []
    for idx in order:
        if not is_peak[idx]:
            continue
        f = float(freqs[idx])
        if any(min(abs(f - g), band - abs(f - g)) < min_sep for g in picked):
            continue
        picked.append(f)
        if len(picked) == n:
            break
    if not picked:
        picked = [0.0]
    j = 1
    while len(picked) < n:
        picked.append(picked[0] + j * 0.5 / (m * h))
        j += 1
    locs = np.array(picked[:n]).reshape(n, 1)
    rng = np.random.default_rng(0)  # only consulted on a degenerate linear solve
    mags = _magnitudes_for_locations(model, grid, z, locs, a_box, rng)
    return _assemble_params(model.space, mags, locs, model.value_kind)


def _deflation_start(model, grid, z, n, a_box) -> Optional[np.ndarray]:
    """Matching-pursuit start: peel tones off the residual's periodogram.

    Each round places the next frequency at the residual spectrum's peak and
    refits all magnitudes linearly, which exposes weak tones hidden inside a
    stronger tone's mainlobe.
    """
    if not model.location_is_frequency or model.space.location_dim != 1:
        return None
    if model.value_kind != COMPLEX:
        return None
    h = grid.spacing()
    if h is None:
        return None
    zc = unpack_complex(z)
    m = len(zc)
    npad = max(512, 8 * m)
    freqs = np.fft.fftfreq(npad, d=h)
    locs: list[float] = []
    resid = zc
    rng = np.random.default_rng(1)  # only consulted on a degenerate linear solve
    for _ in range(n):
        peak = int(np.argmax(np.abs(np.fft.fft(resid, npad))))
        locs.append(float(freqs[peak]))
        loc_arr = np.array(locs).reshape(-1, 1)
        mags = _magnitudes_for_locations(model, grid, z, loc_arr, a_box, rng)
        fitted = np.zeros(m, dtype=complex)
        for c, b in zip(np.atleast_1d(mags), locs):
            fitted += c * model.mode(grid.points, np.array([b]))
        resid = zc - fitted
    loc_arr = np.array(locs).reshape(n, 1)
    mags = _magnitudes_for_locations(model, grid, z, loc_arr, a_box, rng)
    return _assemble_params(model.space, mags, loc_arr, model.value_kind)


def _polish(model, grid, z, x0, cfg: SolverConfig, label: str) -> dict:
    r0 = data_residual(model, grid, z, x0)
    if not np.isfinite(r0).all():
        raise SolverNumericError(f"non-finite objective at start {label}")
    res = least_squares(
        lambda x: data_residual(model, grid, z, x),
        x0,
        jac=lambda x: data_residual_and_jac(model, grid, z, x)[1],
        method="trf",
        gtol=cfg.gradient_tol,
        xtol=1e-14,
        ftol=1e-14,
        x_scale=cfg.step_init,
        max_nfev=cfg.max_iterations,
    )
    sq = float(np.dot(res.fun, res.fun))
    if not math.isfinite(sq):
        raise SolverNumericError(f"non-finite objective at start {label}")
    return {"params": res.x, "sq": sq, "nfev": int(res.nfev), "ok": res.status > 0}


def _build_starts(model, grid, z, n, cfg, warm_params: Sequence[np.ndarray]):
    """Warm starts first, then the peak start, then the random draws."""
    a_box, b_box = _resolve_boxes(cfg, model, grid)
    starts: list[tuple[str, np.ndarray]] = []
    for i, w in enumerate(warm_params):
        starts.append((f"warm-{i}", np.asarray(w, dtype=float)))
    peak = _peak_start(model, grid, z, n, a_box)
    if peak is not None:
        starts.append(("peak", peak))
    deflate = _deflation_start(model, grid, z, n, a_box)
    if deflate is not None:
        starts.append(("deflate", deflate))
    n_random = cfg.restarts - 1 if warm_params else cfg.restarts
    for k in range(max(n_random, 0)):
        rng = _start_rng(cfg, n, k)
        starts.append((f"random-{k}", _random_start(model, grid, z, n, a_box, b_box, rng)))
    return starts


def _polish_all(model, grid, z, starts, cfg) -> list[dict]:
    def run(item):
        label, x0 = item
        out = _polish(model, grid, z, x0, cfg, label)
        out["label"] = label
        return out

    return _map_ordered(run, starts, cfg.threads)


def _wrap_frequencies(model, grid, params) -> tuple[np.ndarray, int]:
    """Fold frequencies into the grid's unambiguous band, rotating magnitudes.

    Only meaningful on equispaced grids, where shifting a frequency by a
    multiple of 1/h changes the fit by a constant phase absorbed into the
    magnitude.
    """
    if not model.location_is_frequency or model.space.location_dim != 1:
        return params, 0
    if model.value_kind != COMPLEX:
        return params, 0
    h = grid.spacing()
    if h is None:
        return params, 0
    x0 = float(grid.points[0])
    step = block_size(model.space)
    out = np.array(params, dtype=float)
    wrapped = 0
    for base in range(0, len(out), step):
        omega = out[base + 2]
        k = round(omega * h)
        if k == 0:
            continue
        phase = np.exp(2j * np.pi * k * x0 / h)
        c = complex(out[base], out[base + 1]) * phase
        out[base] = c.real
        out[base + 1] = c.imag
        out[base + 2] = omega - k / h
        wrapped += 1
    return out, wrapped


def _solve_discrete(model, grid, z: Observation, n: int) -> FixedCountResult:
    """Fixed-dictionary models: fit magnitudes linearly, keep the n strongest."""
    locs = list(model.discrete_locations)
    coef = lstsq_magnitudes(model, grid, z.z, locs)
    if n < len(locs):
        order = np.argsort(-np.abs(coef), kind="stable")[:n]
        order = np.sort(order)
        locs = [locs[i] for i in order]
        coef = lstsq_magnitudes(model, grid, z.z, locs)
    space = model.space
    points = []
    for c, b in zip(np.atleast_1d(coef), locs):
        if model.value_kind == COMPLEX:
            points.append(ConicalPoint((float(np.real(c)), float(np.imag(c))), tuple(b)))
        else:
            points.append(ConicalPoint((float(np.real(c)),), tuple(b)))
    while len(points) < n:
        points.append(vertex(space))
    sources = SourceMultiset.of(points, space)
    r = evaluate_S(model, grid, sources).z - z.z
    sq = float(np.dot(r, r))
    return FixedCountResult(
        sources=sources,
        residual=math.sqrt(sq),
        sq_residual=sq,
        iterations=1,
        converged=True,
        n_starts=1,
        best_start=0,
    )


def _normalize_warm(warm_start, n: int, space) -> list[np.ndarray]:
    if warm_start is None:
        return []
    if isinstance(warm_start, SourceMultiset):
        warm_start = [warm_start]
    out = []
    for ws in warm_start:
        if len(ws) > n:
            raise ValueError(f"warm start proposes {len(ws)} sources for a {n}-source solve")
        out.append(flatten_multiset(include_pad(ws, n)))
    return out


def solve_fixed_count(
    model: SignalModel,
    grid: MeasurementGrid,
    z: Observation,
    n: int,
    cfg: SolverConfig,
    warm_start=None,
) -> FixedCountResult:
    """Best local minimizer of the squared data residual with n sources.

    ``warm_start`` (one configuration or a sequence of them) joins the start
    list ahead of the random draws, replacing one of them.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if z.value_kind != grid.value_kind or z.n_points != grid.n_points:
        raise ValueError("observation does not match the grid")
    if model.discrete_locations is not None:
        return _solve_discrete(model, grid, z, n)
    warms = _normalize_warm(warm_start, n, model.space)
    starts = _build_starts(model, grid, z.z, n, cfg, warms)
    endpoints = _polish_all(model, grid, z.z, starts, cfg)
    best = min(range(len(endpoints)), key=lambda i: (endpoints[i]["sq"], i))
    ep = endpoints[best]
    params, _ = _wrap_frequencies(model, grid, ep["params"])
    sources = multiset_from_params(model.space, params)
    return FixedCountResult(
        sources=sources,
        residual=math.sqrt(ep["sq"]),
        sq_residual=ep["sq"],
        iterations=ep["nfev"],
        converged=bool(ep["ok"]),
        n_starts=len(starts),
        best_start=best,
    )


def detect_count(radii: Sequence[float], vanish_tol: float = 1e-8, knee_ratio: float = 10.0) -> int:
    """Source count from a local-radius curve: first vanish, else first knee.

    The knee is the first count n >= 2 with r(n-1) >= knee_ratio * r(n) whose
    r(n) sits on the tail plateau (within 10x its median). Returns 0 when
    neither rule fires.
    """
    values = [float(r) for r in radii]
    if not values:
        raise ValueError("radii must be non-empty")
    for i, r in enumerate(values):
        if math.isfinite(r) and r <= vanish_tol:
            return i + 1
    for i in range(1, len(values)):
        prev, cur = values[i - 1], values[i]
        if not (math.isfinite(prev) and math.isfinite(cur)) or cur <= 0:
            continue
        tail = [v for v in values[i:] if math.isfinite(v)]
        if prev >= knee_ratio * cur and cur <= 10.0 * float(np.median(tail)):
            return i + 1
    return 0


def _frequency_warnings(model, grid, columns) -> list[str]:
    if not model.location_is_frequency or grid.spacing() is not None:
        return []
    gap = grid.typical_gap()
    if gap is None:
        return []
    band = 0.5 / gap
    offenders = []
    for col in columns:
        if col is None:
            continue
        for p in col:
            if p.b and abs(p.b[0]) > band * (1 + 1e-9) and magnitude_norm(p) > 0:
                offenders.append(p.b[0])
    if offenders:
        return [
            "irregular grid: aliasing not checked; frequencies outside the nominal "
            f"band (|f| > {band:.6g}) left unwrapped: "
            + ", ".join(f"{f:.6g}" for f in sorted(offenders))
        ]
    return []


def _advisory_warnings(model, grid, cfg) -> list[str]:
    chk = check_measurement_count(model.space, cfg.max_sources, grid)
    if chk.sufficient:
        return []
    return [
        f"measurement count advisory: {chk.real_count} real values may not pin down "
        f"{cfg.max_sources} sources (want at least {chk.required_count})"
    ]


def solve_jp(model: SignalModel, grid: MeasurementGrid, z: Observation, cfg: SolverConfig) -> DecompositionReport:
    """Independent fixed-count solves for every count 1..P.

    r(n) is the per-count data residual; column failures are recorded without
    aborting the other counts.
    """
    warnings = _advisory_warnings(model, grid, cfg)

    def solve_col(n):
        try:
            return solve_fixed_count(model, grid, z, n, cfg)
        except SolverNumericError as exc:
            return exc

    outcomes = _map_ordered(solve_col, range(1, cfg.max_sources + 1), cfg.threads)
    rows = []
    for n, out in zip(range(1, cfg.max_sources + 1), outcomes):
        if isinstance(out, SolverNumericError):
            rows.append(
                CountResult(
                    count=n,
                    sources=None,
                    local_radius=math.inf,
                    sq_residual=math.inf,
                    solve_sq_residual=math.inf,
                    iterations=0,
                    converged=False,
                    error=str(out),
                )
            )
        else:
            rows.append(
                CountResult(
                    count=n,
                    sources=out.sources,
                    local_radius=out.residual,
                    sq_residual=out.sq_residual,
                    solve_sq_residual=out.sq_residual,
                    iterations=out.iterations,
                    converged=out.converged,
                )
            )
    radii = [row.local_radius for row in rows]
    warnings += _frequency_warnings(model, grid, [row.sources for row in rows])
    detected = detect_count(radii, cfg.vanish_tol, cfg.knee_ratio)
    return DecompositionReport(
        strategy=JP_STRATEGY,
        per_count=tuple(rows),
        detected_count=detected,
        warnings=tuple(warnings),
        diagnostics={"radii": radii},
    )


def _chain_tiebreak(model, grid, z, cand_params, solved: dict[int, np.ndarray], n: int) -> float:
    """Secondary score for data-equivalent endpoints in a greedy chain.

    Solves with more sources than the data needs have flat minima (extra
    sources can sit anywhere with zero magnitude, or split a true source);
    among endpoints with equivalent data fit, prefer the one cheapest to
    aggregate with the already-solved columns. The chain's first column has
    no solved neighbors; there the candidate's own nested-truncation
    objective prefers vertex-padded sorted shapes.
    """
    space = model.space
    if not solved:
        if n == 1:
            return 0.0
        canonical = flatten_multiset(multiset_from_params(space, cand_params))
        return tied_chain_value_and_grad(model, grid, z, canonical)[0]
    score = 0.0
    cand = split_params(space, cand_params)
    for m, other_params in solved.items():
        other = split_params(space, other_params)
        if m < n:
            score += aggregation_sq_and_grads(space, other, cand)[0]
        else:
            score += aggregation_sq_and_grads(space, cand, other)[0]
    return score


def _pick_chain_winner(model, grid, z, endpoints, solved, n, cfg) -> int:
    """Best data fit, with aggregation consistency breaking near-exact ties."""
    best_sq = min(ep["sq"] for ep in endpoints)
    window = best_sq * (1 + 1e-6) + cfg.vanish_tol**2
    tied = [i for i, ep in enumerate(endpoints) if ep["sq"] <= window]
    if len(tied) == 1:
        return tied[0]
    return min(
        tied,
        key=lambda i: (_chain_tiebreak(model, grid, z, endpoints[i]["params"], solved, n), i),
    )


def _refine_column(model, grid, z, col_params, later: list[np.ndarray], cfg) -> np.ndarray:
    """Relax one column against the data and the columns above it."""
    space = model.space

    def value_grad(x):
        val, grad = data_value_and_grad(model, grid, z, x)
        xs = split_params(space, x)
        for other_params in later:
            other = split_params(space, other_params)
            aval, gs, _ = aggregation_sq_and_grads(space, xs, other)
            val += aval
            for k, g in enumerate(gs):
                grad[k * len(g) : (k + 1) * len(g)] += g
        return val, grad

    f0 = value_grad(col_params)[0]
    res = minimize(
        value_grad,
        col_params,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": cfg.max_iterations, "gtol": max(cfg.gradient_tol, 1e-14)},
    )
    if math.isfinite(res.fun) and res.fun <= f0:
        return np.asarray(res.x, dtype=float)
    return np.asarray(col_params, dtype=float)


def _random_extra_block(model, grid, cfg, n) -> np.ndarray:
    a_box, b_box = _resolve_boxes(cfg, model, grid)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(n, _EXTRA_KEY)))
    space = model.space
    block = np.empty(block_size(space))
    block[: space.magnitude_dim] = rng.uniform(a_box[0], a_box[1], space.magnitude_dim)
    block[space.magnitude_dim :] = rng.uniform(b_box[0], b_box[1], space.location_dim)
    return block


def _chain_mismatch(columns: list[SourceMultiset]) -> tuple[list[float], list[float]]:
    """Transport cost between consecutive columns' shared parts, and its scale."""
    mismatch, relative = [], []
    for i in range(len(columns) - 1):
        small, big = columns[i], columns[i + 1]
        padded = include_pad(small, len(big))
        cols = optimal_matching(padded, big)
        cost = 0.0
        for r, c in zip(range(len(padded)), cols):
            p = padded.elements[r]
            if magnitude_norm(p) == 0.0:
                continue  # vertex pad rows carry the unavoidable dropped magnitude
            cost += point_distance(p, big.elements[c], small.space)
        scale = max((magnitude_norm(q) for q in big.elements), default=0.0)
        mismatch.append(cost)
        relative.append(cost / scale if scale > 0 else 0.0)
    return mismatch, relative


def solve_kp_greedy(
    model: SignalModel,
    grid: MeasurementGrid,
    z: Observation,
    cfg: SolverConfig,
    direction: str = "up",
) -> DecompositionReport:
    """Warm-started chain over the aggregation-linked sheaf's columns.

    Going up, each count is seeded from the previous solution padded with a
    vertex and with one random extra element; going down, from the next
    solution with its smallest-magnitude element dropped. Multistart winners
    are chosen by data fit plus aggregation cost to the already-solved
    columns, and a final sweep relaxes each column against the columns above
    it, so the chain respects the aggregation structure.
    """
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    p = cfg.max_sources
    warnings = _advisory_warnings(model, grid, cfg)
    order = list(range(1, p + 1)) if direction == "up" else list(range(p, 0, -1))
    space = model.space
    step = block_size(space)

    solved: dict[int, np.ndarray] = {}
    stage_info: dict[int, dict] = {}
    errors: dict[int, str] = {}

    for n in order:
        warms: list[np.ndarray] = []
        if direction == "up" and (n - 1) in solved:
            prev = solved[n - 1]
            warms.append(np.concatenate([prev, np.zeros(step)]))
            warms.append(np.concatenate([prev, _random_extra_block(model, grid, cfg, n)]))
        if direction == "down" and (n + 1) in solved:
            prev = solved[n + 1]  # canonical order: last block is the smallest
            warms.append(prev[:-step])
        try:
            if model.discrete_locations is not None:
                res = _solve_discrete(model, grid, z, n)
                solved[n] = flatten_multiset(res.sources)
                stage_info[n] = {"sq": res.sq_residual, "nfev": res.iterations, "ok": True}
                continue
            starts = _build_starts(model, grid, z.z, n, cfg, warms)
            endpoints = _polish_all(model, grid, z.z, starts, cfg)
            best_sq = min(ep["sq"] for ep in endpoints)
            winner = _pick_chain_winner(model, grid, z.z, endpoints, solved, n, cfg)
            params, _ = _wrap_frequencies(model, grid, endpoints[winner]["params"])
            solved[n] = params
            stage_info[n] = {
                "sq": best_sq,
                "nfev": endpoints[winner]["nfev"],
                "ok": bool(endpoints[winner]["ok"]),
            }
        except SolverNumericError as exc:
            errors[n] = str(exc)
            solved[n] = np.zeros(n * step)  # all-vertex placeholder keeps the chain shaped
            stage_info[n] = {"sq": math.inf, "nfev": 0, "ok": False}
            warnings.append(f"count {n} failed: {exc}")

    # Relax each column against the columns above it (highest first, so every
    # column sees its final dependees exactly once).
    for n in range(p - 1, 0, -1):
        if n in errors:
            continue
        later = [solved[j] for j in range(n + 1, p + 1)]
        refined = _refine_column(model, grid, z.z, solved[n], later, cfg)
        refined, _ = _wrap_frequencies(model, grid, refined)
        solved[n] = refined

    columns = [multiset_from_params(space, solved[n]) for n in range(1, p + 1)]
    asg = SheafAssignment(tuple(columns), z)
    kind = SheafKind(KP, p)

    rows = []
    for n in range(1, p + 1):
        breakdown = local_consistency_radius(kind, model, grid, asg, window_start=n)
        sq_res = float(breakdown.sq_data_terms[n - 1])
        rows.append(
            CountResult(
                count=n,
                sources=None if n in errors else columns[n - 1],
                local_radius=math.inf if n in errors else breakdown.total,
                sq_residual=math.inf if n in errors else sq_res,
                solve_sq_residual=stage_info[n]["sq"],
                iterations=stage_info[n]["nfev"],
                converged=stage_info[n]["ok"],
                error=errors.get(n),
            )
        )

    mismatch, relative = _chain_mismatch(columns)
    if any(r > cfg.greedy_warn_ratio for r in relative):
        worst = max(relative)
        warnings.append(
            "greedy chain inconsistency: consecutive counts disagree on shared sources "
            f"(relative mismatch {worst:.3g}); magnitudes may be too similar for a "
            "greedy decomposition"
        )
    warnings += _frequency_warnings(model, grid, columns)

    radii = [row.local_radius for row in rows]
    detected = detect_count(radii, cfg.vanish_tol, cfg.knee_ratio)
    return DecompositionReport(
        strategy=KP_UP if direction == "up" else KP_DOWN,
        per_count=tuple(rows),
        detected_count=detected,
        warnings=tuple(warnings),
        diagnostics={
            "radii": radii,
            "aggregation_mismatch": mismatch,
            "aggregation_mismatch_relative": relative,
        },
    )
