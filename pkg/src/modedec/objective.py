"""Residuals, jacobians, and gradients for consistency-radius minimization.

Parameters for n sources are flattened source-major: each source contributes
its magnitude coordinates followed by its location coordinates. Complex data
is handled through the interleaved re/im packing, so every residual vector
and gradient here is real.

Squared aggregation costs between two configurations are piecewise smooth
(the pairing and the metric branch can switch); gradients are taken through
the currently optimal pairing and branch, which is exact away from ties.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .conical import ConicalPoint, ConicalSpaceSpec, VERTEX_TOL
from .model import COMPLEX, MeasurementGrid, Observation, SignalModel, location_jacobian
from .multiset import SourceMultiset


def block_size(space: ConicalSpaceSpec) -> int:
    return space.magnitude_dim + space.location_dim


def split_params(space: ConicalSpaceSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Flat vector -> list of (a, b) coordinate arrays, one per source."""
    step = block_size(space)
    if len(params) % step != 0:
        raise ValueError(f"parameter vector length {len(params)} is not a multiple of {step}")
    out = []
    for k in range(len(params) // step):
        blk = params[k * step : (k + 1) * step]
        out.append((blk[: space.magnitude_dim], blk[space.magnitude_dim :]))
    return out


def flatten_multiset(ms: SourceMultiset) -> np.ndarray:
    parts = []
    for p in ms:
        parts.extend(p.a)
        parts.extend(p.b)
    return np.asarray(parts, dtype=float)


def multiset_from_params(
    space: ConicalSpaceSpec, params: np.ndarray, tol: float = VERTEX_TOL
) -> SourceMultiset:
    pts = [ConicalPoint(tuple(a), tuple(b)) for a, b in split_params(space, params)]
    return SourceMultiset.of(pts, space)


def design_matrix(model: SignalModel, grid: MeasurementGrid, locations) -> np.ndarray:
    """(M, n) matrix of mode columns, one per location vector."""
    cols = [np.asarray(model.mode(grid.points, np.asarray(b, dtype=float))) for b in locations]
    dtype = complex if model.value_kind == COMPLEX else float
    if not cols:
        return np.zeros((grid.n_points, 0), dtype=dtype)
    return np.stack(cols, axis=1).astype(dtype)


def data_residual(
    model: SignalModel, grid: MeasurementGrid, z: np.ndarray, params: np.ndarray
) -> np.ndarray:
    """Packed residual S(params) - z without the jacobian."""
    space = model.space
    srcs = split_params(space, params)
    m = grid.n_points
    if model.value_kind == COMPLEX:
        acc = np.zeros(m, dtype=complex)
        for a, b in srcs:
            acc += complex(a[0], a[1]) * np.asarray(model.mode(grid.points, b), dtype=complex)
        packed = np.empty(2 * m)
        packed[0::2] = acc.real
        packed[1::2] = acc.imag
        return packed - z
    acc = np.zeros(m)
    for a, b in srcs:
        acc += a[0] * np.asarray(model.mode(grid.points, b), dtype=float)
    return acc - z


def data_residual_and_jac(
    model: SignalModel, grid: MeasurementGrid, z: np.ndarray, params: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Packed residual S(params) - z and its jacobian w.r.t. the flat params."""
    space = model.space
    srcs = split_params(space, params)
    a_dim, b_dim = space.magnitude_dim, space.location_dim
    step = a_dim + b_dim
    m = grid.n_points

    if model.value_kind == COMPLEX:
        res_c = np.zeros(m, dtype=complex)
        jac = np.zeros((2 * m, len(params)))
        for k, (a, b) in enumerate(srcs):
            phi = np.asarray(model.mode(grid.points, b), dtype=complex)
            c = complex(a[0], a[1])
            res_c += c * phi
            base = k * step
            jac[0::2, base] = phi.real
            jac[1::2, base] = phi.imag
            jac[0::2, base + 1] = -phi.imag
            jac[1::2, base + 1] = phi.real
            if b_dim:
                dphi = np.asarray(location_jacobian(model, grid.points, b), dtype=complex)
                for j in range(b_dim):
                    col = c * dphi[:, j]
                    jac[0::2, base + a_dim + j] = col.real
                    jac[1::2, base + a_dim + j] = col.imag
        packed = np.empty(2 * m)
        packed[0::2] = res_c.real
        packed[1::2] = res_c.imag
        return packed - z, jac

    res = np.zeros(m)
    jac = np.zeros((m, len(params)))
    for k, (a, b) in enumerate(srcs):
        phi = np.asarray(model.mode(grid.points, b), dtype=float)
        res += a[0] * phi
        base = k * step
        jac[:, base] = phi
        if b_dim:
            dphi = np.asarray(location_jacobian(model, grid.points, b), dtype=float)
            for j in range(b_dim):
                jac[:, base + a_dim + j] = a[0] * dphi[:, j]
    return res - z, jac


def data_value_and_grad(
    model: SignalModel, grid: MeasurementGrid, z: np.ndarray, params: np.ndarray
) -> tuple[float, np.ndarray]:
    """Squared data residual and its gradient."""
    r, jac = data_residual_and_jac(model, grid, z, params)
    return float(np.dot(r, r)), 2.0 * (jac.T @ r)


def lstsq_magnitudes(model: SignalModel, grid: MeasurementGrid, z: np.ndarray, locations) -> np.ndarray:
    """Best magnitudes for fixed locations; the superposition is linear in them."""
    phi = design_matrix(model, grid, locations)
    if not np.isfinite(phi).all():
        raise np.linalg.LinAlgError("mode values are not finite")
    if model.value_kind == COMPLEX:
        target = z[0::2] + 1j * z[1::2]
    else:
        target = z
    coef, *_ = np.linalg.lstsq(phi, target, rcond=None)
    return coef


def _dsq_and_grads(a1, b1, a2, b2, beta):
    """Squared bottleneck distance with gradients for both endpoints."""
    da = a1 - a2
    db = b1 - b2
    direct = float(np.dot(da, da)) + beta * float(np.dot(db, db))
    n1 = float(np.linalg.norm(a1))
    n2 = float(np.linalg.norm(a2))
    through = (n1 + n2) ** 2
    if direct <= through:
        g1 = np.concatenate([2.0 * da, 2.0 * beta * db])
        g2 = np.concatenate([-2.0 * da, -2.0 * beta * db])
        return direct, g1, g2
    u1 = a1 / n1 if n1 > 0 else np.zeros_like(a1)
    u2 = a2 / n2 if n2 > 0 else np.zeros_like(a2)
    s = 2.0 * (n1 + n2)
    g1 = np.concatenate([s * u1, np.zeros_like(b1)])
    g2 = np.concatenate([s * u2, np.zeros_like(b2)])
    return through, g1, g2


def aggregation_sq_and_grads(
    space: ConicalSpaceSpec,
    shorter: list[tuple[np.ndarray, np.ndarray]],
    longer: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Vertex-padded squared matching cost between two configurations.

    Returns the minimum over pairings of summed squared distances, where the
    shorter side is padded with vertices, plus per-source gradient blocks for
    both sides (w.r.t. each source's stacked (a, b) coordinates).
    """
    ns, nl = len(shorter), len(longer)
    if ns > nl:
        raise ValueError("first configuration must not be longer than the second")
    beta = space.beta
    step = block_size(space)

    cost = np.empty((nl, nl))
    for r in range(nl):
        for c in range(nl):
            if r < ns:
                a1, b1 = shorter[r]
                a2, b2 = longer[c]
                cost[r, c] = _dsq_and_grads(a1, b1, a2, b2, beta)[0]
            else:
                # vertex pad row: squared distance is the squared magnitude
                cost[r, c] = float(np.dot(longer[c][0], longer[c][0]))
    rows, cols = linear_sum_assignment(cost)

    total = 0.0
    grads_short = [np.zeros(step) for _ in range(ns)]
    grads_long = [np.zeros(step) for _ in range(nl)]
    for r, c in zip(rows, cols):
        a2, b2 = longer[c]
        if r < ns:
            a1, b1 = shorter[r]
            val, g1, g2 = _dsq_and_grads(a1, b1, a2, b2, beta)
            total += val
            grads_short[r] += g1
            grads_long[c] += g2
        else:
            total += float(np.dot(a2, a2))
            grads_long[c][: space.magnitude_dim] += 2.0 * a2
    return total, grads_short, grads_long


def tied_chain_value_and_grad(
    model: SignalModel, grid: MeasurementGrid, z: np.ndarray, params: np.ndarray
) -> tuple[float, np.ndarray]:
    """Aggregation-linked squared objective with every column tied to one chain.

    The n sources in ``params`` define columns 1..n by truncation (column i
    holds the first i sources), the natural nested hypothesis chain. The value
    sums every column's squared residual plus every pair's squared padded
    matching cost; the gradient accounts for each source appearing in all
    columns from its own index up.
    """
    space = model.space
    srcs = split_params(space, params)
    n = len(srcs)
    step = block_size(space)

    total = 0.0
    grad = np.zeros_like(params)
    for i in range(1, n + 1):
        sub = params[: i * step]
        val, g = data_value_and_grad(model, grid, z, sub)
        total += val
        grad[: i * step] += g
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            val, gs, gl = aggregation_sq_and_grads(space, srcs[:i], srcs[:j])
            total += val
            for k, g in enumerate(gs):
                grad[k * step : (k + 1) * step] += g
            for k, g in enumerate(gl):
                grad[k * step : (k + 1) * step] += g
    return total, grad


DATA_ONLY = "data-only"
KP_WINDOWED = "kp-windowed"


def objective_value(
    model: SignalModel,
    grid: MeasurementGrid,
    z: Observation,
    params: np.ndarray,
    kind: str = DATA_ONLY,
) -> float:
    """Squared objective at the flat parameters (see gradient_of_objective)."""
    return _objective(model, grid, z, params, kind)[0]


def gradient_of_objective(
    model: SignalModel,
    grid: MeasurementGrid,
    z: Observation,
    params: np.ndarray,
    kind: str = DATA_ONLY,
) -> np.ndarray:
    """Gradient of the squared objective w.r.t. the flattened (a, b) coordinates.

    ``data-only`` is the plain squared residual of all n sources against the
    observation; ``kp-windowed`` is the tied-chain objective of
    `tied_chain_value_and_grad`.
    """
    return _objective(model, grid, z, params, kind)[1]


def _objective(model, grid, z, params, kind):
    params = np.asarray(params, dtype=float)
    if kind == DATA_ONLY:
        return data_value_and_grad(model, grid, z.z, params)
    if kind == KP_WINDOWED:
        return tied_chain_value_and_grad(model, grid, z.z, params)
    raise ValueError(f"unknown objective kind {kind!r}")
