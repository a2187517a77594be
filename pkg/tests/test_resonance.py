import itertools
from fractions import Fraction

import numpy as np
import pytest

from lpkam.errors import DegenerateUpToMuMax, EmptyRing, NoNonzeroWeights, OnCoordinateHyperplane
from lpkam.psalg import Ring, VectorField, lie_derivative
from lpkam.resonance import (
    LinearMorphism,
    ResonantStructure,
    dpi_minor_identity_check,
    first_integral_basis,
    is_nondegenerate,
    nondegeneracy_index,
    nonzero_weights_in,
    omega_S,
    split_by_weight,
    weight,
    weight_project,
)

from conftest import random_field

GOLDEN = (1 + 5**0.5) / 2


def brute_omega(lam, lo, hi):
    """Min max-norm of nonzero (Q, lam) - lam_i over lo <= |Q| <= hi, by plain loops."""
    lam = [[Fraction(v) for v in row] for row in lam]
    n = len(lam[0])
    best = None
    for d in range(lo, hi + 1):
        for cut in itertools.combinations(range(d + n - 1), n - 1):
            Q = np.diff((-1,) + cut + (d + n - 1,)) - 1
            for i in range(n):
                vals = [sum(int(q) * row[k] for k, q in enumerate(Q)) - row[i] for row in lam]
                if any(v != 0 for v in vals):
                    nrm = max(abs(v) for v in vals)
                    best = nrm if best is None or nrm < best else best
    return None if best is None else float(best)


def test_first_integral_basis_examples():
    assert first_integral_basis(LinearMorphism([[1, -1]]), 4).to_json() == [[1, 1]]
    S3 = LinearMorphism([[1, -1, 0], [0, 1, -1]])
    assert first_integral_basis(S3, 5).to_json() == [[1, 1, 1]]
    with pytest.raises(EmptyRing):
        first_integral_basis(LinearMorphism([[1, 2]]), 6)


def test_first_integral_basis_minimal_and_exact():
    S = LinearMorphism([[1, -1, 2]])
    R = first_integral_basis(S, 8)
    gens = [tuple(r) for r in R.to_json()]
    assert gens == [(1, 1, 0), (0, 2, 1)]
    for g in gens:
        assert sum(q * l for q, l in zip(g, (1, -1, 2))) == 0
    for g in gens:
        others = [h for h in gens if h != g]
        for a, b in itertools.combinations_with_replacement(others, 2):
            assert tuple(x + y for x, y in zip(a, b)) != g


def test_weight_examples():
    S = LinearMorphism([[1, -1]])
    assert weight((2, 1), 0, S).is_zero
    assert weight((3, 0), 1, S).vals == (4 + 0j,)
    assert weight((0, 1), 1, S).is_zero


def test_nonzero_weights_window_examples():
    S = LinearMorphism([[1, -1]])
    vals = sorted(w.vals[0].real for w in nonzero_weights_in(S, 2, 2))
    assert vals == [-3.0, -1.0, 1.0, 3.0]
    assert nonzero_weights_in(S, 3, 2) == []
    ws = nonzero_weights_in(S, 2, 2)
    assert len({w.key for w in ws}) == len(ws)
    one = [w for w in ws if w.vals[0] == 1][0]
    # (2,0)->d2 gives 2+1 = 3; (1,1)->d1 and (0,2)->d0 give 1 ... sources listed
    assert len(one.sources) >= 2


def test_omega_examples():
    S = LinearMorphism([[1, -1]])
    assert [omega_S(S, k) for k in range(1, 6)] == [1.0] * 5
    S1 = LinearMorphism([[1]])
    assert [omega_S(S1, k) for k in range(0, 6)] == [2.0**k for k in range(0, 6)]
    Sg = LinearMorphism([[1.0, -GOLDEN]])
    assert Sg.float_mode
    vals = [omega_S(Sg, k) for k in range(1, 6)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < vals[0]


@pytest.mark.parametrize("lam", [[[1, -1]], [[1, -2]], [[1, -1, 0], [0, 1, -1]], [[1, -1, 2]], [[2, 3, -5]]])
@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_omega_matches_exhaustive_enumeration(lam, k):
    S = LinearMorphism(lam)
    lo, hi = 2**k + 1, 2 ** (k + 1)
    expect = brute_omega(lam, lo, hi)
    if expect is None:
        with pytest.raises(NoNonzeroWeights):
            omega_S(S, k)
    else:
        assert omega_S(S, k) == pytest.approx(expect, abs=0, rel=1e-15)


def test_omega_intro_window():
    S1 = LinearMorphism([[1]])
    # degrees 2..2^k: smallest weight is 1 at degree 2
    assert omega_S(S1, 3, window="intro") == 1.0


def test_weight_project_examples(rng):
    S = LinearMorphism([[1, -1]])
    ring = Ring(2, 1, 6, 2, (0j,))
    p = VectorField([ring.zero(), ring.monomial((3, 0)) * ring.u(0)])
    alpha = weight((3, 0), 1, S)
    assert (weight_project(p, alpha, S) - p).is_zero()
    assert weight_project(p, weight((2, 0), 1, S), S).is_zero()
    X = random_field(ring, rng, 10, min_deg=1)
    total = VectorField.zero(ring)
    for _, (a, part) in split_by_weight(X, S).items():
        total = total + part
        assert (weight_project(X, a, S) - part).is_zero()
    assert (total - X).is_zero()


def test_invariant_monomials_are_first_integrals():
    S = LinearMorphism([[1, -1, 2]])
    R = first_integral_basis(S, 8)
    ring = Ring(3, 0, 8, 0)
    Sf = S.field(0, ring)
    for k in range(R.p):
        assert lie_derivative(Sf, R.monomial(k, ring)).is_zero()


def test_dpi_minor_examples(rng):
    R = ResonantStructure([[1, 1]])
    lhs, rhs = dpi_minor_identity_check(R, np.array([0.3 + 0.1j, -0.7j]), [0], [0])
    assert lhs == pytest.approx(rhs)
    assert lhs == pytest.approx((0.3 + 0.1j) * (-0.7j))
    with pytest.raises(OnCoordinateHyperplane):
        dpi_minor_identity_check(R, np.array([0.0, 1.0]), [0], [0])


def test_dpi_minor_identity_random(rng):
    for rows in ([[1, 1, 0], [0, 2, 1]], [[1, 1, 1]], [[2, 1, 0], [0, 1, 3], [1, 0, 1]]):
        R = ResonantStructure(rows)
        for _ in range(100):
            x = np.exp(rng.uniform(-0.5, 0.5, R.n) + 1j * rng.uniform(0, 2 * np.pi, R.n))
            for kk in range(1, min(R.n, R.p) + 1):
                for I in itertools.combinations(range(R.p), kk):
                    for J in itertools.combinations(range(R.n), kk):
                        lhs, rhs = dpi_minor_identity_check(R, x, list(I), list(J))
                        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_dpi_minor_rank_deficient_block():
    R = ResonantStructure([[1, 1, 0], [0, 1, 1]])
    # columns {0, 2} of row {0}: det R_{I,J} for the 1x1 block R[0,2] = 0
    lhs, rhs = dpi_minor_identity_check(R, np.array([0.5, 0.4, 0.3]), [0], [2])
    assert lhs == 0 and rhs == 0


def test_is_nondegenerate_examples():
    r1 = Ring(1, 1, 1, 3, (0j,))
    assert is_nondegenerate([r1.one()], 2)
    assert not is_nondegenerate([r1.u(0), r1.u(0) * 2.0], 3)
    r2 = Ring(1, 2, 1, 3, (0j, 0j))
    assert is_nondegenerate([r2.one() + r2.u(0), r2.u(1)], 1)


def test_nondegeneracy_index_examples():
    r1 = Ring(1, 1, 1, 3, (0j,))
    grid = [[0.0], [0.25], [0.5j]]
    assert nondegeneracy_index([r1.one()], grid, 3) == (0, 1.0)
    mu, beta = nondegeneracy_index([r1.u(0)], grid, 3)
    # |u|^2 has vanishing first derivative at 0; its second derivative is 2
    assert mu == 2 and beta == pytest.approx(2.0)
    with pytest.raises(DegenerateUpToMuMax):
        nondegeneracy_index([r1.zero()], grid, 3)


def test_nondegeneracy_fd_agrees_on_low_orders():
    r1 = Ring(1, 1, 1, 3, (0j,))
    grid = [[0.0], [0.3]]
    mu_c, b_c = nondegeneracy_index([r1.u(0)], grid, 2, method="cauchy")
    mu_f, b_f = nondegeneracy_index([r1.u(0)], grid, 2, method="fd")
    assert mu_c == mu_f
    assert b_f == pytest.approx(b_c, rel=1e-4)


def test_nondegeneracy_two_coefficients_never_order_zero():
    r2 = Ring(1, 2, 1, 3, (0j, 0j))
    mu, beta = nondegeneracy_index([r2.u(0), r2.u(1)], [[0.3, 0.2], [0.5j, -0.1]], 4)
    assert mu >= 1 and beta > 0
    with pytest.raises(DegenerateUpToMuMax):
        nondegeneracy_index([r2.one(), r2.one() * 2 ** 0.5], [[0.1, 0.1]], 3)


def test_linear_morphism_validation():
    from lpkam.errors import DimensionMismatch

    with pytest.raises(DimensionMismatch):
        LinearMorphism([[1, -1], [2, -2]])
    with pytest.raises(DimensionMismatch):
        LinearMorphism([[1, 0], [0, 1], [1, 1]])
    S = LinearMorphism([["1/2", "-1/2"]])
    assert not S.float_mode
    assert S.to_json() == [[["1/2", "0"], ["-1/2", "0"]]]
    with pytest.raises(ValueError):
        ResonantStructure([[1, 0]], LinearMorphism([[1, -1]]))
