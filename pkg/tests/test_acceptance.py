"""The eight acceptance criteria, each at its stated tolerance.

Every test prints one line ``C<k> PASS|FAIL <detail>`` and then asserts.
"""

import itertools
import math
import time

import numpy as np

from lpkam.kam import (
    CompactGrid,
    DiophantineSchedule,
    c1_constant,
    disc_resolution,
    epsilon_vois_check,
    filter_K,
    radii_limit,
    tail_ratios,
)
from lpkam.normalform import cohomological_solve, d_m_operator, initial_state, normalize
from lpkam.psalg import PolyRadius, Ring, VectorField, lie_bracket, restrict_sigma
from lpkam.resonance import LinearMorphism, split_by_weight, weight, weight_project
from lpkam.verify import invariant_residual, oracle_equivalence, scenario_hamiltonian, scenario_volume

from conftest import CONFIGS, config, random_field, random_series

RESULTS = {}


def verdict(capsys, key, ok, detail):
    RESULTS[key] = bool(ok)
    with capsys.disabled():
        print(f"\n{key} {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def _random_a(ring, rng, l):
    """Coefficients with |a_j(b)| of order one and genuine u-dependence."""
    out = []
    for _ in range(l):
        c = complex(rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0))
        out.append(ring.const(c) + random_series(ring, rng, 3, max_deg=0, scale=0.3))
    return out


def _one_weight_B(ring, S, rng, m):
    """A random field of x-degree m+1..2m inside a single nonzero weight space."""
    while True:
        X = random_field(ring, rng, 12, min_deg=m + 1, max_deg=2 * m)
        for _, (alpha, part) in sorted(split_by_weight(X, S).items()):
            if not alpha.is_zero:
                return alpha, part


def test_c1_cohomological_residual(capsys):
    rng = np.random.default_rng(2024)
    names = sorted(CONFIGS)
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    while count < 200:
        name = names[count % len(names)]
        m = (2, 4, 8)[(count // len(names)) % 3]
        S, R = config(name)
        base = tuple(complex(*(0.2 * rng.standard_normal(2))) for _ in range(R.p))
        ring = Ring(S.n, R.p, 2 * m, 3, base)
        state = initial_state(S, R, ring, _random_a(ring, rng, S.l), None, m=m)
        alpha, B = _one_weight_B(ring, S, rng, m)
        U = cohomological_solve(B, alpha, state, twist=1)
        bracket = lie_bracket(state.nf, U)
        res = bracket + d_m_operator(U, state) - B
        worst = max(worst, res.max_abs() / max(B.max_abs(), bracket.max_abs()))
        count += 1
    elapsed = time.perf_counter() - t0
    verdict(capsys, "C1", worst <= 1e-10 and elapsed <= 60,
            f"cohomological residual: {count} instances, max relative {worst:.2e} (<= 1e-10), {elapsed:.1f} s (<= 60)")


def test_c2_d_m_nilpotent(capsys):
    rng = np.random.default_rng(7)
    names = sorted(CONFIGS)
    worst = 0.0
    for t in range(100):
        S, R = config(names[t % len(names)])
        base = tuple(complex(*(0.2 * rng.standard_normal(2))) for _ in range(R.p))
        ring = Ring(S.n, R.p, 10, 4, base)
        state = initial_state(S, R, ring, _random_a(ring, rng, S.l), None, m=2)
        U = random_field(ring, rng, 10, min_deg=2)
        worst = max(worst, d_m_operator(d_m_operator(U, state), state).max_abs())
    verdict(capsys, "C2", worst < 1e-13, f"D_m o D_m: 100 random U, max coefficient {worst:.2e} (< 1e-13)")


def test_c3_oracle_equivalence(capsys):
    cases = {
        "hamiltonian, 1 pair": scenario_hamiltonian(1, base=(0.01,)),
        "hamiltonian, 2 pairs": scenario_hamiltonian(2, base=(0.01, 0.02)),
        "volume, n=2": scenario_volume(2, base=(0.01,)),
        "volume, n=3": scenario_volume(3, base=(0.01,)),
    }
    t0 = time.perf_counter()
    diffs = {name: oracle_equivalence(scn, 16)[0] for name, scn in cases.items()}
    elapsed = time.perf_counter() - t0
    worst = max(diffs.values())
    detail = ", ".join(f"{k}: {v:.1e}" for k, v in diffs.items())
    verdict(capsys, "C3", worst <= 1e-9 and elapsed <= 300,
            f"Newton vs Poincare-Dulac at order 16 ({detail}; <= 1e-9), {elapsed:.1f} s (<= 300)")


def test_c4_norm_machinery(capsys):
    rng = np.random.default_rng(99)
    names = sorted(CONFIGS)
    bad = {"submultiplicative": 0, "order scaling": 0, "restriction": 0}
    for t in range(500):
        S, R = config(names[t % len(names)])
        base = tuple(complex(*(0.2 * rng.standard_normal(2))) for _ in range(R.p))
        ring = Ring(S.n, R.p, 8, 3, base)
        r, tt = rng.uniform(0.05, 1.5), rng.uniform(0.01, 1.0)
        rad = PolyRadius(r, tt)
        f, g = random_series(ring, rng, 8), random_series(ring, rng, 8)
        if (f * g).norm(rad) > f.norm(rad) * g.norm(rad) * (1 + 1e-12):
            bad["submultiplicative"] += 1
        h = random_series(ring, rng, 8, min_deg=int(rng.integers(1, 5)))
        shrink = rng.uniform(0.05, 0.95)
        if h.norm(PolyRadius(r * shrink, tt)) > shrink ** h.order() * h.norm(rad) * (1 + 1e-12):
            bad["order scaling"] += 1
        # the restriction remark holds once |b_k| + t <= r^|R_k|
        rr = max(r, max((abs(b) + tt) ** (1.0 / int(row.sum())) for b, row in zip(base, R.R)))
        rad2 = PolyRadius(rr, tt)
        if restrict_sigma(f, R).norm(rad2) > f.norm(rad2) * (1 + 1e-12):
            bad["restriction"] += 1
    verdict(capsys, "C4", sum(bad.values()) == 0,
            "norm machinery on 500 series each, violations " + ", ".join(f"{k}={v}" for k, v in bad.items()))


def test_c5_schedule_bounds(capsys):
    lines, ok = [], True
    c1 = c1_constant(1, 1, 1, 1.0, 1.0)
    for sched in (DiophantineSchedule.constant(0.1, c1=c1), DiophantineSchedule.power(0.1, tau=2.0, c1=c1)):
        k_max = 40
        seq, limit, k1 = radii_limit(1.0, 1, k_max, sched)
        tails = tail_ratios(k1, k_max, sched) if k1 is not None else []
        rows, thr = epsilon_vois_check(sched, k_max)
        good = (k1 is not None and limit > 0 and all(v > 0.5 for v in tails)
                and thr is not None and all(r[3] for r in rows[thr:]))
        ok &= good
        lines.append(f"{sched.label}: k1={k1} R_inf>={limit:.3e} min tail {min(tails, default=1.0):.3f}, "
                     f"eps-neighbourhood from k={thr}")
    verdict(capsys, "C5", ok, "schedules; " + "; ".join(lines))


def test_c6_invariance(capsys):
    t0 = time.perf_counter()
    scn = scenario_hamiltonian(1, mu=[[1.0]], eps=1e-3, base=(0.01,))
    state = normalize(scn.initial_state(), 16)
    sched = DiophantineSchedule.constant(1e-3)
    point = CompactGrid(np.array([[0.01 + 0j]]), 1.0, ((0.01, 0.01, 0.0, 0.0),))
    for k in range(1, 5):
        point = filter_K(point, state, k, sched, scn.S)
    survives = bool(point.alive[0])
    norm = invariant_residual(scn, state, rho=0.1, T=1.0, n_samples=16)
    raw = invariant_residual(scn, state, rho=0.1, T=1.0, n_samples=16, normalized=False)
    sd, rd = norm["straightened_max"], raw["raw_max"]
    elapsed = time.perf_counter() - t0
    ok = survives and sd <= 1e-6 and rd >= 1e2 * sd and elapsed <= 600
    verdict(capsys, "C6", ok,
            f"invariance: b=0.01 survives K_1..K_4={survives}, straightened drift {sd:.2e} (<= 1e-6), "
            f"raw drift {rd:.2e} (ratio {rd / sd if sd else math.inf:.1e} >= 1e2), {elapsed:.1f} s")


def test_c7_measure_behaviour(capsys):
    ring = Ring(2, 1, 4, 2, (0j,))
    S = LinearMorphism([[1, -1]])
    grid = CompactGrid.rectangle([(-1.0, 1.0, -1.0, 1.0)], 0.005)
    mes = grid.total_measure()
    lines, ok, prev = [], True, None
    for gam in (0.2, 0.1, 0.05):
        sched = DiophantineSchedule.constant(gam)
        out = filter_K(grid, (ring.u(0),), 1, sched, S)
        frac = 1 - out.measure() / mes
        expect = math.pi * (gam * sched.omega(2)) ** 2 / mes
        res = disc_resolution(grid, 2 * math.pi * gam)
        ok &= abs(frac - expect) <= 2 * res
        if prev is not None:
            ok &= frac <= prev
        prev = frac
        lines.append(f"gamma={gam}: {frac:.5f} vs {expect:.5f} (+-{2 * res:.5f})")
    verdict(capsys, "C7", ok, "disc exclusion; " + "; ".join(lines))


def test_c8_weight_structure(capsys):
    checked, bad = 0, 0
    for name in sorted(CONFIGS):
        S, _ = config(name)
        ring = Ring(S.n, 0, 10, 0)
        Sf = [S.field(j, ring) for j in range(S.l)]
        full = VectorField.zero(ring)
        for d in range(0, 11):
            for cut in itertools.combinations(range(d + S.n - 1), S.n - 1):
                Q = tuple(int(v) for v in np.diff((-1,) + cut + (d + S.n - 1,)) - 1)
                for i in range(S.n):
                    comps = [ring.zero()] * S.n
                    comps[i] = ring.monomial(Q)
                    p = VectorField(comps)
                    alpha = weight(Q, i, S)
                    for j in range(S.l):
                        if (lie_bracket(Sf[j], p) - p * alpha.vals[j]).max_abs() != 0.0:
                            bad += 1
                    if (weight_project(p, alpha, S) - p).max_abs() != 0.0:
                        bad += 1
                    full = full + p
                    checked += 1
        total = VectorField.zero(ring)
        for _, (alpha, part) in split_by_weight(full, S).items():
            if (weight_project(part, alpha, S) - part).max_abs() != 0.0:
                bad += 1
            total = total + part
        if (total - full).max_abs() != 0.0:
            bad += 1
    verdict(capsys, "C8", bad == 0,
            f"weight spaces: {checked} monomial fields up to degree 10, n <= 3, {bad} failures")
