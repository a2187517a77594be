import json

import numpy as np
import pytest

from lpkam.errors import BasePointMismatch, DimensionMismatch, NotTangentToIdentity, TruncationExceeded
from lpkam.psalg import (
    INFINITE_ORDER,
    FiberedField,
    PolyRadius,
    Ring,
    Series,
    VectorField,
    compose,
    compose_field,
    flow_map,
    identity_plus,
    invert_diffeo,
    jet,
    lie_bracket,
    lie_derivative,
    majorant_norm,
    order,
    pushforward,
    pushforward_explicit,
    restrict_sigma,
    series_inverse,
    sigma_reduce,
)

from conftest import random_field, random_series


def coeffs(f):
    return {k: v for k, v in f.terms.items()}


@pytest.fixture
def r21():
    return Ring(2, 1, 4, 2, (0j,))


def test_add_examples(r21):
    x1 = r21.x(0)
    assert coeffs(x1 + x1) == {((1, 0), (0,)): 2}
    f = x1 * r21.x(1) + r21.u(0)
    assert coeffs(f + r21.zero()) == coeffs(f)
    g = (x1 * x1 + r21.u(0)) + (-(x1 * x1))
    assert coeffs(g) == {((0, 0), (1,)): 1}


def test_add_rejects_mismatched_rings():
    a = Ring(2, 1, 4, 2, (0j,)).x(0)
    with pytest.raises(DimensionMismatch):
        a + Ring(3, 1, 4, 2, (0j,)).x(0)
    with pytest.raises(BasePointMismatch):
        a + Ring(2, 1, 4, 2, (0.5 + 0j,)).x(0)


def test_mul_examples():
    r = Ring(2, 0, 2, 0)
    x1, x2 = r.x(0), r.x(1)
    assert coeffs(x1 * x2) == {((1, 1), ()): 1}
    prod = (r.one() + x1) * (r.one() - x1)
    assert coeffs(prod) == {((0, 0), ()): 1, ((2, 0), ()): -1}
    rad = PolyRadius(0.5, 1.0)
    assert (x1 * x1).norm(rad) == pytest.approx(0.25)
    assert x1.norm(rad) ** 2 == pytest.approx(0.25)


def test_mul_truncates_to_tighter_ring():
    a = Ring(1, 0, 6, 0).x(0)
    b = Ring(1, 0, 3, 0).x(0)
    prod = a * a * a * a * b
    assert prod.is_zero()
    assert (a * b).ring.xmax == 3


def test_bracket_examples():
    r = Ring(2, 0, 6, 0)
    x1 = r.x(0)
    X = VectorField([x1, r.zero()])
    Y = VectorField([r.zero(), x1 * x1])
    assert lie_bracket(X, Y).terms() == [{}, {((2, 0), ()): 2}]
    S = VectorField.diagonal(r, [1.0, 0.0])
    assert lie_bracket(S, Y).terms() == [{}, {((2, 0), ()): 2}]
    assert lie_bracket(Y, Y).is_zero()


def test_lie_derivative_examples():
    r = Ring(2, 0, 6, 0)
    x1, x2 = r.x(0), r.x(1)
    assert coeffs(lie_derivative(VectorField([x1, r.zero()]), x1 * x2)) == {((1, 1), ()): 1}
    S = VectorField.diagonal(r, [1.0, -1.0])
    assert lie_derivative(S, x1 * x2).is_zero()
    assert lie_derivative(VectorField.zero(r), x1 + x2 * x2).is_zero()


def test_order_examples(r21):
    x1, x2, u = r21.x(0), r21.x(1), r21.u(0)
    assert order(x1 * x1 * x1 + x1 * x2 * u) == 2
    assert order(r21.zero()) == INFINITE_ORDER
    assert INFINITE_ORDER > 10**6
    assert order(u) == 0


def test_jet_examples(r21):
    x1 = r21.x(0)
    f = x1 + x1 * x1 * x1
    assert coeffs(jet(f, 2)) == coeffs(x1)
    assert coeffs(jet(f, r21.xmax)) == coeffs(f)
    g = r21.u(0) + x1
    assert coeffs(jet(g, 0)) == coeffs(r21.u(0))


def test_norm_examples(r21):
    assert majorant_norm(r21.x(0), PolyRadius(0.5, 1.0)) == pytest.approx(0.5)
    assert majorant_norm(r21.zero(), PolyRadius(0.5, 1.0)) == 0.0
    f = (r21.x(0) * r21.u(0)) * 3.0
    # u = b + (u - b) with b = 0, so |f| = 3 r t
    assert majorant_norm(f, PolyRadius(0.5, 0.2)) == pytest.approx(3 * 0.5 * 0.2)
    with pytest.raises(ValueError):
        PolyRadius(0.0, 1.0)


def test_norm_monotone_in_radii(rng):
    ring = Ring(3, 2, 6, 2, (0.1 + 0j, -0.2j))
    for _ in range(20):
        f = random_series(ring, rng)
        assert f.norm(PolyRadius(0.3, 0.1)) <= f.norm(PolyRadius(0.4, 0.1)) + 1e-15
        assert f.norm(PolyRadius(0.3, 0.1)) <= f.norm(PolyRadius(0.3, 0.2)) + 1e-15


def test_sigma_reduce_examples(r21):
    x1, x2, u = r21.x(0), r21.x(1), r21.u(0)
    R = [[1, 1]]
    assert coeffs(sigma_reduce(x1 * x2 + u, R)) == {((0, 0), (1,)): 2}
    assert coeffs(sigma_reduce(x1 * x1 * x1 * x2, R)) == {((2, 0), (1,)): 1}
    f = x1 * x1 + x2 * u
    assert coeffs(sigma_reduce(f, R)) == coeffs(f)


def test_restrict_sigma_examples(r21):
    R = [[1, 1]]
    assert coeffs(restrict_sigma(r21.x(0) * r21.x(1), R)) == coeffs(r21.u(0))
    assert coeffs(restrict_sigma(r21.x(0), R)) == coeffs(r21.x(0))
    # norm remark on f = x^R: |b| + t <= r^|R|
    b, r = 0.05, 0.5
    ring = Ring(2, 1, 4, 2, (b + 0j,))
    f = ring.x(0) * ring.x(1)
    t = r**2 - b
    rad = PolyRadius(r, t)
    assert restrict_sigma(f, R).norm(rad) <= f.norm(rad) * (1 + 1e-14)


def test_sigma_reduce_at_nonzero_base_uses_shifted_u():
    ring = Ring(2, 1, 4, 2, (0.5 + 0j,))
    red = sigma_reduce(ring.x(0) * ring.x(1), [[1, 1]])
    # u = b + (u - b)
    assert coeffs(red) == {((0, 0), (0,)): 0.5, ((0, 0), (1,)): 1}


def test_sigma_reduce_strict_raises_on_u_overflow():
    ring = Ring(2, 1, 6, 1, (0j,))
    f = ring.monomial((2, 2))
    assert coeffs(sigma_reduce(f, [[1, 1]])) == {}
    with pytest.raises(TruncationExceeded):
        sigma_reduce(f, [[1, 1]], strict=True)


def test_sigma_reduce_quotients_reconstruct(rng):
    ring = Ring(3, 1, 8, 4, (0.3 + 0.1j,))
    R = [[1, 1, 1]]
    xr = ring.monomial((1, 1, 1))
    for _ in range(10):
        f = random_series(ring, rng, 10)
        red, (g,) = sigma_reduce(f, R, quotients=True)
        recon = red + (xr - ring.u(0)) * g
        assert (recon - f).max_abs() < 1e-12


def test_pushforward_identity_and_tangency():
    ring = Ring(2, 1, 6, 2, (0j,))
    X = FiberedField(VectorField.diagonal(ring, [1.0, -1.0]), [ring.zero()])
    W0 = FiberedField(VectorField.zero(ring), [ring.zero()])
    with pytest.raises(NotTangentToIdentity):
        pushforward(X, FiberedField(VectorField([ring.x(0), ring.zero()]), [ring.zero()]))
    Y = pushforward(X, W0)
    assert (Y.xcomps - X.xcomps).is_zero()
    assert all(c.is_zero() for c in Y.ucomps)


def test_pushforward_weight_first_order_term():
    ring = Ring(2, 0, 8, 0)
    S = VectorField.diagonal(ring, [1.0, -1.0])
    W = VectorField([ring.zero(), ring.monomial((3, 0))])  # weight 4
    first = lie_bracket(W, S)
    assert (first + W * 4.0).is_zero()


def test_pushforward_matches_explicit_substitution(rng):
    # pure-x check: the Lie series by W equals (D Phi . X) o Phi^{-1} with Phi = exp(-W)
    ring = Ring(2, 0, 9, 0)
    for _ in range(3):
        X = random_field(ring, rng, 6, min_deg=1, max_deg=3)
        W = random_field(ring, rng, 4, min_deg=4, max_deg=4, scale=0.5)
        lie = pushforward(FiberedField(X, []), FiberedField(W, [])).xcomps
        phi = flow_map(W, -1.0)
        U = VectorField([phi[i] - ring.x(i) for i in range(ring.n)])
        expl = pushforward_explicit(X, U)
        assert (lie - expl).max_abs() < 1e-10


def test_invert_diffeo_examples():
    ring = Ring(1, 0, 3, 0)
    x = ring.x(0)
    assert invert_diffeo(VectorField.zero(ring)).is_zero()
    V = invert_diffeo(VectorField([x * x]))
    assert coeffs(V[0]) == {((2,), ()): -1, ((3,), ()): 2}
    with pytest.raises(NotTangentToIdentity):
        invert_diffeo(VectorField([x * 0.5]))


def test_invert_diffeo_composition_residual(rng):
    ring = Ring(3, 0, 7, 0)
    for _ in range(5):
        U = random_field(ring, rng, 6, min_deg=2, max_deg=5, scale=0.3)
        V = invert_diffeo(U)
        ident = compose_field(VectorField(identity_plus(U)), identity_plus(V))
        resid = ident - VectorField([ring.x(i) for i in range(ring.n)])
        assert resid.max_abs() < 1e-12


def test_compose_substitution():
    ring = Ring(2, 0, 4, 0)
    x1, x2 = ring.x(0), ring.x(1)
    f = x1 * x2
    g = compose(f, [x1 + x2 * x2, x2])
    assert coeffs(g) == {((1, 1), ()): 1, ((0, 3), ()): 1}


def test_series_inverse_and_evaluate():
    ring = Ring(1, 1, 2, 6, (0.5 + 0j,))
    a = ring.u(0) + 1.0
    inv = series_inverse(a)
    prod = (a * inv).ujet(ring.umax)
    assert (prod - ring.one()).max_abs() < 1e-12
    val = inv.evaluate([[0.0]], [[0.55]])[0]
    assert val == pytest.approx(1 / 1.55, rel=1e-7)


def test_series_json_roundtrip(rng):
    ring = Ring(2, 2, 5, 2, (0.1 + 0.2j, -0.3 + 0j))
    f = random_series(ring, rng, 12)
    obj = json.loads(json.dumps(f.to_json()))
    g = Series.from_json(obj)
    assert g.ring == ring
    assert (g - f).max_abs() == 0.0
    # deterministic ordering: graded lex on (x, u)
    keys = [(t["x"], t["u"]) for t in obj["terms"]]
    assert keys == [(t["x"], t["u"]) for t in f.to_json()["terms"]]
    assert obj["header"]["base"] == [[0.1, 0.2], [-0.3, 0.0]]


def test_pruning_relative():
    ring = Ring(1, 0, 3, 0)
    x = ring.x(0)
    f = x + ring.monomial((2,), coef=1e-17)
    assert f.nnz == 1
