"""Acceptance gates: one deterministic, tolerance-pinned check per criterion.

Run with ``pytest -s tests/test_acceptance.py`` to see every gate line.
"""

import json
import time
from itertools import combinations, permutations

import numpy as np
import pytest

from modedec.cli import decompose_main, synth_main
from modedec.conical import ConicalPoint, ConicalSpaceSpec, distance, magnitude_norm
from modedec.model import (
    COMPLEX,
    REAL,
    MeasurementGrid,
    Observation,
    evaluate_S,
    fourier_model,
    spectral_model,
)
from modedec.multiset import SourceMultiset, include_pad, multiset_distance
from modedec.objective import gradient_of_objective, objective_value
from modedec.sheaf import (
    JP,
    KP,
    SheafAssignment,
    SheafKind,
    global_consistency_radius,
    lift_truth_to_assignment,
    local_consistency_radius,
)
from modedec.solver import SolverConfig, solve_fixed_count, solve_jp, solve_kp_greedy

from conftest import gaussian_bump_model


def gate(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    line = f"[acceptance {num:02d}] {status} {name}"
    if detail:
        line += f" — {detail}"
    print(line)
    assert ok, line


def spectral_truth(pairs, model):
    return SourceMultiset.of(
        [ConicalPoint((c.real, c.imag), (w,)) for c, w in pairs], model.space
    )


def test_01_metric_axioms_randomized():
    rng = np.random.default_rng(408123)
    t0 = time.perf_counter()
    worst_gap = 0.0
    for _ in range(10_000):
        space = ConicalSpaceSpec(
            int(rng.integers(1, 4)), int(rng.integers(0, 4)),
            beta=float(rng.choice([0.25, 1.0, 4.0])),
        )
        pts = []
        for _ in range(3):
            a = rng.normal(scale=2.0, size=space.magnitude_dim)
            if rng.uniform() < 0.1:
                a = a * 1e-13
            pts.append(ConicalPoint(tuple(a), tuple(rng.normal(scale=2.0, size=space.location_dim))))
        p, q, r = pts
        assert distance(p, q, space) == distance(q, p, space)
        gap = distance(p, r, space) - distance(p, q, space) - distance(q, r, space)
        worst_gap = max(worst_gap, gap)
    elapsed = time.perf_counter() - t0
    gate(
        1,
        "metric axioms on 10,000 random triples",
        worst_gap <= 1e-12 and elapsed < 5.0,
        f"worst triangle slack {worst_gap:.2e}, {elapsed:.2f}s",
    )


def test_02_assignment_matches_exhaustive_minimization():
    rng = np.random.default_rng(77002)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1_000):
        space = ConicalSpaceSpec(
            int(rng.integers(1, 4)), int(rng.integers(0, 4)),
            beta=float(rng.choice([0.25, 1.0, 4.0])),
        )
        n = int(rng.integers(1, 8))

        def draw():
            return SourceMultiset.of(
                [
                    ConicalPoint(
                        tuple(rng.normal(scale=1.5, size=space.magnitude_dim)),
                        tuple(rng.normal(scale=1.5, size=space.location_dim)),
                    )
                    for _ in range(n)
                ],
                space,
            )

        u, w = draw(), draw()
        if multiset_distance(u, w) != multiset_distance(u, w, exhaustive=True):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    gate(
        2,
        "assignment distance equals exhaustive minimization on 1,000 pairs",
        mismatches == 0 and elapsed < 30.0,
        f"{mismatches} mismatches, {elapsed:.2f}s",
    )


def test_03_fourier_recovery_matches_inverse_dft():
    rng = np.random.default_rng(31)
    t0 = time.perf_counter()
    worst = 0.0
    for n_max in (1, 2, 3):
        m = 2 * n_max + 1
        model = fourier_model(n_max)
        grid = MeasurementGrid(np.arange(m) / m)
        coeffs = rng.normal(size=m) + 1j * rng.normal(size=m)
        truth = spectral_truth([(coeffs[k], float(k - n_max)) for k in range(m)], model)
        z = evaluate_S(model, grid, truth)
        res = solve_fixed_count(model, grid, z, m, SolverConfig(seed=0))
        zc = z.as_complex()
        for p in res.sources:
            harmonic = int(round(p.b[0]))
            oracle = np.mean(zc * np.exp(-2j * np.pi * harmonic * grid.points))
            worst = max(worst, abs(complex(p.a[0], p.a[1]) - oracle))
    elapsed = time.perf_counter() - t0
    gate(
        3,
        "Fourier magnitudes match the inverse-DFT oracle",
        worst < 1e-9 and elapsed < 1.0,
        f"max error {worst:.2e}, {elapsed:.2f}s",
    )


def test_04_vanishing_local_radius_and_count_detection():
    model = spectral_model()
    grid = MeasurementGrid(np.arange(16.0))
    t0 = time.perf_counter()
    lift_ok = 0
    successes = 0
    for run in range(50):
        rng = np.random.default_rng(1000 + run)
        n = run % 3 + 1
        freqs = []
        while len(freqs) < n:
            f = rng.uniform(-0.4, 0.4)
            if all(abs(f - g) >= 0.05 for g in freqs):
                freqs.append(f)
        mags = [rng.uniform(0.5, 2.0) * np.exp(2j * np.pi * rng.uniform()) for _ in range(n)]
        truth = spectral_truth(list(zip(mags, freqs)), model)
        z = evaluate_S(model, grid, truth)
        asg = lift_truth_to_assignment(truth, 4, model, grid)
        radii = [
            local_consistency_radius(SheafKind(kind, 4), model, grid, asg, window_start=n).total
            for kind in (JP, KP)
        ]
        if max(radii) < 1e-10:
            lift_ok += 1
        rep = solve_jp(model, grid, z, SolverConfig(max_sources=4, restarts=8, seed=run))
        if rep.detected_count == n:
            if multiset_distance(rep.per_count[n - 1].sources, truth) < 1e-4:
                successes += 1
    elapsed = time.perf_counter() - t0
    gate(
        4,
        "noiseless local radii vanish and the count is detected",
        lift_ok == 50 and successes >= 48 and elapsed < 120.0,
        f"lift {lift_ok}/50, detect+recover {successes}/50, {elapsed:.1f}s",
    )


def test_05_worked_example_parity():
    model = gaussian_bump_model()
    worst = 0.0
    # unit-magnitude pair: radius splits into location gap, dropped source,
    # and the two data residuals
    for draw in range(100):
        rng = np.random.default_rng(52000 + draw)
        beta = float(rng.choice([0.25, 1.0, 4.0]))
        m = gaussian_bump_model(beta=beta)
        grid = MeasurementGrid(np.linspace(-2.0, 2.0, 7), value_kind=REAL)
        b11, b21 = rng.uniform(0.0, 0.5, size=2)
        b22 = rng.uniform(3.0, 6.0)
        z = rng.normal(size=grid.n_points)
        obs = Observation.from_values(z, REAL)
        col1 = SourceMultiset.of([ConicalPoint((1.0,), (b11,))], m.space)
        col2 = SourceMultiset.of(
            [ConicalPoint((1.0,), (b21,)), ConicalPoint((1.0,), (b22,))], m.space
        )
        bd = global_consistency_radius(SheafKind(KP, 2), m, grid, SheafAssignment((col1, col2), obs))
        phi = lambda b: np.exp(-((grid.points - b) ** 2))
        expected = (
            beta * (b11 - b21) ** 2
            + 1.0
            + np.sum((phi(b21) + phi(b22) - z) ** 2)
            + np.sum((phi(b11) - z) ** 2)
        )
        worst = max(worst, abs(bd.sq_total - expected) / max(1.0, abs(expected)))
    # single-source subproblem of a two-source truth: the radius collapses to
    # |a22|^2 (1 + ||phi(b22)||^2)
    grid = MeasurementGrid(np.linspace(-2.0, 2.0, 7), value_kind=REAL)
    for draw in range(100):
        rng = np.random.default_rng(53000 + draw)
        a21 = rng.uniform(1.0, 2.0)
        a22 = rng.uniform(0.2, 0.9)
        b21, b22 = rng.uniform(-1.5, 1.5, size=2)
        col2 = SourceMultiset.of(
            [ConicalPoint((a21,), (b21,)), ConicalPoint((a22,), (b22,))], model.space
        )
        col1 = SourceMultiset.of([ConicalPoint((a21,), (b21,))], model.space)
        obs = evaluate_S(model, grid, col2)
        bd = global_consistency_radius(
            SheafKind(KP, 2), model, grid, SheafAssignment((col1, col2), obs)
        )
        phi22 = np.exp(-((grid.points - b22) ** 2))
        expected = a22**2 * (1.0 + np.sum(phi22**2))
        worst = max(worst, abs(bd.sq_total - expected) / max(1.0, abs(expected)))
    gate(5, "worked-example radius identities on 100 draws each", worst <= 1e-12,
         f"worst relative gap {worst:.2e}")


def _central_difference(f, params, step=1e-6):
    out = np.empty_like(params)
    for i in range(len(params)):
        hi = params.copy()
        lo = params.copy()
        hi[i] += step
        lo[i] -= step
        out[i] = (f(hi) - f(lo)) / (2 * step)
    return out


def test_06_gradient_parity():
    bump = gaussian_bump_model()
    grid_r = MeasurementGrid(np.linspace(-2, 2, 9), value_kind=REAL)
    worst_closed = 0.0
    for draw in range(100):
        rng = np.random.default_rng(61000 + draw)
        a1 = rng.uniform(1.0, 2.0)
        a2 = rng.uniform(0.2, 0.8)
        b1, b2 = rng.uniform(-1.5, 1.5, size=2)
        truth = SourceMultiset.of(
            [ConicalPoint((a1,), (b1,)), ConicalPoint((a2,), (b2,))], bump.space
        )
        z = evaluate_S(bump, grid_r, truth)
        grad = gradient_of_objective(
            bump, grid_r, z, np.array([a1, b1, a2, b2]), kind="kp-windowed"
        )
        worst_closed = max(worst_closed, abs(grad[2] - 2 * a2), abs(grad[3]))

    spec = spectral_model()
    grid_c = MeasurementGrid(np.arange(10.0))
    truth = spectral_truth([(1 + 1j, 0.25), (0.4 - 0.2j, -0.1)], spec)
    z_c = evaluate_S(spec, grid_c, truth)
    worst_fd = 0.0
    for draw in range(100):
        rng = np.random.default_rng(62000 + draw)
        params = np.concatenate(
            [
                np.concatenate([rng.normal(size=2), rng.uniform(-0.5, 0.5, 1)])
                for _ in range(2)
            ]
        )
        grad = gradient_of_objective(spec, grid_c, z_c, params, kind="data-only")
        fd = _central_difference(
            lambda x: objective_value(spec, grid_c, z_c, x, kind="data-only"), params
        )
        worst_fd = max(worst_fd, np.abs(grad - fd).max() / max(1.0, np.abs(grad).max()))
    z_r = Observation.from_values(np.random.default_rng(63).normal(size=grid_r.n_points), REAL)
    draws = 0
    draw = 0
    while draws < 100:
        rng = np.random.default_rng(64000 + draw)
        draw += 1
        a1 = rng.uniform(1.0, 2.0) * rng.choice([-1.0, 1.0])
        a2 = rng.uniform(0.2, 0.8) * rng.choice([-1.0, 1.0])
        b1, b2 = rng.uniform(-1.5, 1.5, size=2)
        if abs(b1 - b2) < 0.2:
            continue
        direct = (a1 - a2) ** 2 + (b1 - b2) ** 2
        through = (abs(a1) + abs(a2)) ** 2
        if abs(direct - through) < 1e-2:
            continue
        draws += 1
        params = np.array([a1, b1, a2, b2])
        grad = gradient_of_objective(bump, grid_r, z_r, params, kind="kp-windowed")
        fd = _central_difference(
            lambda x: objective_value(bump, grid_r, z_r, x, kind="kp-windowed"), params
        )
        worst_fd = max(worst_fd, np.abs(grad - fd).max() / max(1.0, np.abs(grad).max()))
    gate(
        6,
        "gradients match the closed form and finite differences",
        worst_closed <= 1e-10 and worst_fd <= 1e-5,
        f"closed-form gap {worst_closed:.2e}, FD relative gap {worst_fd:.2e}",
    )


def test_07_sorting_property_by_brute_force():
    space = ConicalSpaceSpec(1, 1)
    failures = 0
    for trial in range(200):
        rng = np.random.default_rng(70000 + trial)
        n = int(rng.integers(2, 6))
        mags = np.sort(rng.uniform(0.3, 3.0, size=n))[::-1]
        while np.min(-np.diff(mags)) < 0.05:  # keep magnitudes separated
            mags = np.sort(rng.uniform(0.3, 3.0, size=n))[::-1]
        locs = rng.uniform(-1.0, 1.0, size=n)
        top_points = [ConicalPoint((float(a),), (float(b),)) for a, b in zip(mags, locs)]
        top = SourceMultiset.of(top_points, space)
        # candidate pool: the top column's own elements plus off-grid decoys
        pool = list(top.elements)
        while len(pool) < n + 3:
            cand = ConicalPoint((float(rng.uniform(0.3, 3.0)),), (float(rng.uniform(-1, 1)),))
            if all(distance(cand, p, space) >= 0.02 for p in top.elements):
                pool.append(cand)
        best_cost, best_idx = None, None
        for idx in combinations(range(len(pool)), n - 1):
            sub = SourceMultiset.of([pool[i] for i in idx], space)
            cost = multiset_distance(include_pad(sub, n), top)
            if best_cost is None or cost < best_cost:
                best_cost, best_idx = cost, idx
        if best_idx != tuple(range(n - 1)):
            failures += 1
    gate(
        7,
        "minimal-radius extensions drop the smallest magnitude (200 brute-force trials)",
        failures == 0,
        f"{failures} index mismatches",
    )


def test_08_greedy_degradation_with_similar_magnitudes():
    model = spectral_model()
    grid = MeasurementGrid(np.arange(16.0))
    w1, w2 = 0.10, 0.12
    errors = {}
    warned = {}
    for ratio in (0.1, 1.0):
        truth = spectral_truth([(1 + 0j, w1), (ratio + 0j, w2)], model)
        z = evaluate_S(model, grid, truth)
        rep = solve_kp_greedy(
            model, grid, z, SolverConfig(max_sources=2, restarts=12, seed=11), direction="up"
        )
        col1 = rep.per_count[0].sources.elements[0]
        errors[ratio] = abs(col1.b[0] - w1)
        warned[ratio] = any("greedy" in w for w in rep.warnings)
    gate(
        8,
        "weak second source improves the greedy first column five-fold",
        errors[0.1] * 5 <= errors[1.0] and warned[1.0],
        f"freq errors {errors[0.1]:.2e} vs {errors[1.0]:.2e} "
        f"(ratio {errors[1.0] / errors[0.1]:.1f}x), equal-magnitude warning: {warned[1.0]}",
    )


def test_09_noisy_knee_detection():
    model = spectral_model()
    grid = MeasurementGrid(np.arange(16.0))
    m = grid.n_points
    t0 = time.perf_counter()
    hits = 0
    for run in range(20):
        rng = np.random.default_rng(5000 + run)
        f1 = rng.uniform(-0.35, 0.1)
        f2 = f1 + rng.uniform(0.15, 0.25)
        c1 = np.exp(2j * np.pi * rng.uniform())
        c2 = rng.uniform(0.8, 1.2) * np.exp(2j * np.pi * rng.uniform())
        truth = spectral_truth([(c1, f1), (c2, f2)], model)
        clean = evaluate_S(model, grid, truth)
        sigma = np.linalg.norm(clean.z) / np.sqrt(2 * m * 10 ** (30.0 / 10))  # 30 dB SNR
        noisy = clean.z + sigma * rng.standard_normal(2 * m)
        z = Observation(noisy, COMPLEX, m)
        rep = solve_jp(model, grid, z, SolverConfig(max_sources=4, restarts=6, seed=run))
        hits += rep.detected_count == 2
    elapsed = time.perf_counter() - t0
    gate(
        9,
        "knee rule finds two sources at 30 dB SNR",
        hits >= 16 and elapsed < 180.0,
        f"{hits}/20 runs, {elapsed:.1f}s",
    )


def test_10_cli_determinism(tmp_path):
    csv = tmp_path / "two_tone.csv"
    rc = synth_main(
        [
            "--sources", "1+0i@0.12;0.8+0.3i@0.37",
            "--samples", "16",
            "--sigma", "0.0",
            "--seed", "7",
            "--out", str(csv),
        ]
    )
    assert rc == 0
    out = tmp_path / "report.json"
    curve = tmp_path / "curve.csv"
    argv = [
        "--model", "spectral",
        "--strategy", "kp-up",
        "--max-sources", "4",
        "--beta", "1.0",
        "--seed", "42",
        "--restarts", "6",
        "--input", str(csv),
        "--out", str(out),
        "--curve", str(curve),
    ]
    payloads = []
    for _ in range(2):
        assert decompose_main(list(argv)) == 0
        payloads.append((out.read_bytes(), curve.read_bytes()))
    detected = json.loads(payloads[0][0])["detected_count"]
    gate(
        10,
        "identical CLI runs produce byte-identical report and curve",
        payloads[0] == payloads[1] and detected == 2,
        f"detected_count {detected}",
    )
