"""Lindstedt-Poincare normalization along the resonant graph.

A state carries ``NF = sum_j a_j(u) S_j`` and a remainder of x-order at least
m+1.  One Newton step removes every nonzero-weight term of x-degree m+1..2m
with a fibered change of coordinates and absorbs the zero-weight terms,
restricted to the graph ``u = pi(x)``, into the coefficients ``a_j``.

Sign convention: brackets are ``[X, Y]_i = X(Y_i) - Y(X_i)``.  The
generator W of a step acts through the Lie series
``X + [W, X] + [W, [W, X]]/2 + ...``, i.e. the push-forward by the time-one
flow of ``-W``.  For that to cancel B the generator solves
``[NF, W] - D_m W = B``; ``cohomological_solve`` exposes the sign of the
D_m term through ``twist``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import (
    BasePointMismatch,
    NotDiagonalLinear,
    NotGoodPerturbation,
    NotInSpan,
    NotTangentToIdentity,
    PreconditionViolated,
    TruncationExceeded,
    UMaxTooSmall,
    ZeroSmallDivisor,
)
from .psalg import (
    FiberedField,
    PolyRadius,
    VectorField,
    compose,
    compose_xu,
    flow_map,
    identity_plus,
    invert_map_xu,
    pushforward,
    pushforward_explicit,
    series_inverse,
    sigma_reduce_field,
)
from .resonance import ResonantStructure, split_by_weight

GOOD_TOL = 1e-9
DIVISOR_FLOOR_MIN = 1e-12


def _rows(R):
    return R if isinstance(R, ResonantStructure) else ResonantStructure(R)


def fibered_lift(X, R):
    """``(X, X(x^{R_1}), ..., X(x^{R_p}))``."""
    R = _rows(R)
    ring = X.ring
    return FiberedField(X, [X.apply(R.monomial(k, ring)) for k in range(ring.p)])


def _pi_series(R, xmaps):
    ring = xmaps[0].ring
    out = []
    for row in R.R:
        acc = ring.one()
        for i, e in enumerate(row):
            for _ in range(int(e)):
                acc = acc * xmaps[i]
        out.append(acc)
    return out


class FiberedDiffeo:
    """``(x, u) -> (x + U, u + pi(x + U) - pi(x))`` for U of x-order >= 2."""

    def __init__(self, U, R):
        if not U.is_zero() and U.order() < 2:
            raise NotTangentToIdentity("displacement must have order at least 2")
        self.U = U
        self.R = _rows(R)

    @property
    def ring(self):
        return self.U.ring

    def xmaps(self):
        return identity_plus(self.U)

    def umaps(self):
        ring = self.ring
        moved = _pi_series(self.R, self.xmaps())
        still = _pi_series(self.R, [ring.x(i) for i in range(ring.n)])
        return [ring.u(k) + moved[k] - still[k] for k in range(ring.p)]

    def inverse_maps(self):
        """Coordinate functions of the inverse map."""
        ring = self.ring
        du = [um - ring.u(k) for k, um in enumerate(self.umaps())]
        ex, eu = invert_map_xu(list(self.U.comps), du)
        return ([ring.x(i) + ex[i] for i in range(ring.n)],
                [ring.u(k) + eu[k] for k in range(ring.p)])

    def __call__(self, x, u):
        x = np.asarray(x, dtype=np.complex128)
        u = np.asarray(u, dtype=np.complex128)
        y = x + self.U.evaluate(x, u)
        v = u + self.R.pi(y) - self.R.pi(x)
        return y, v

    def to_json(self):
        return self.U.to_json()


def apply_fibered_diffeo(X, phi):
    """``(D phi . X) o phi^{-1}`` by explicit substitution."""
    if not isinstance(phi, FiberedDiffeo):
        raise NotTangentToIdentity("expected a FiberedDiffeo")
    ring = X.ring
    xm, um = phi.xmaps(), phi.umaps()
    images = [X.apply(c) for c in xm + um]
    ixm, ium = phi.inverse_maps()
    comps = [compose_xu(c, ixm, ium) for c in images]
    return FiberedField(VectorField(comps[: ring.n]), comps[ring.n:])


@dataclass(frozen=True)
class StepMap:
    """One Newton step's change of coordinates.

    ``generator`` is W; ``forward`` holds the coordinate functions of
    ``exp(-L_W)`` (old -> normalized) and ``inverse`` those of ``exp(L_W)``.
    """

    m: int
    generator: VectorField
    forward: tuple
    inverse: tuple

    @property
    def displacement(self):
        ring = self.generator.ring
        return VectorField([self.forward[i] - ring.x(i) for i in range(ring.n)])


@dataclass(frozen=True)
class NormalizationState:
    S: object
    R: ResonantStructure
    ring: object
    m: int
    a: tuple
    remainder: VectorField
    sigma_part: tuple = ()
    psi: tuple = ()
    ledger: tuple = ()
    resonant_part: VectorField = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def nf(self):
        return self.S.combination(self.a, self.ring)

    @property
    def field(self):
        return self.nf + self.remainder

    def sigma_field(self):
        """``sum_k (x^{R_k} - u_k) g_k`` from the stored ideal coefficients."""
        out = VectorField.zero(self.ring)
        for k, g in enumerate(self.sigma_part):
            out = out + g * (self.R.monomial(k, self.ring) - self.ring.u(k))
        return out

    def to_json(self):
        return {
            "m": self.m,
            "a": [c.to_json() for c in self.a],
            "remainder": self.remainder.to_json(),
            "resonant_rows": self.R.to_json(),
            "psi": [{"m": s.m, "U": s.displacement.to_json()} for s in self.psi],
            "ledger": list(self.ledger),
        }


def initial_state(S, R, ring, a, perturbation, m=1):
    """State normalized to order m: ``NF = sum a_j S_j``, remainder = perturbation."""
    R = _rows(R)
    a = tuple(ring.const(c) if not hasattr(c, "ring") else c.retruncate(ring) for c in a)
    if len(a) != S.l:
        raise ValueError(f"expected {S.l} coefficients, got {len(a)}")
    rem = perturbation.retruncate(ring) if perturbation is not None else VectorField.zero(ring)
    if rem.order() < m + 1:
        raise ValueError(f"perturbation has order {rem.order()} < m+1 = {m + 1}")
    return NormalizationState(S, R, ring, m, a, rem, resonant_part=VectorField.zero(ring))


def small_divisor(alpha, state):
    """``A(u) = sum_j a_j(u) alpha(g_j)``."""
    ring = state.ring
    out = ring.zero()
    for j, c in enumerate(state.a):
        if alpha.vals[j] != 0:
            out = out + c * alpha.vals[j]
    return out


def d_m_operator(U, state, R=None):
    """``sum_j (sum_k da_j/du_k (D pi . U)_k) S_j``."""
    ring = state.ring
    if ring.umax < 1:
        raise UMaxTooSmall("the D_m operator needs u-derivatives (umax >= 1)")
    R = state.R if R is None else _rows(R)
    dpi_u = [U.apply(R.monomial(k, ring)) for k in range(ring.p)]
    coeffs = []
    for aj in state.a:
        acc = ring.zero()
        for k in range(ring.p):
            d = aj.du(k)
            if not d.is_zero() and not dpi_u[k].is_zero():
                acc = acc + d * dpi_u[k]
        coeffs.append(acc)
    return state.S.combination(coeffs, ring)


def cohomological_solve(B, alpha, state, *, twist=1, divisor_floor=DIVISOR_FLOOR_MIN):
    """U in the alpha-weight space with ``[NF, U] + twist * D_m(U) = B``.

    ``U = (Id - twist D_m / A)(B / A)``; exact because ``D_m(D_m(V)/A) = 0``.
    """
    ring = state.ring
    A = small_divisor(alpha, state)
    a0 = A.value_at_base()
    if abs(a0) < divisor_floor:
        raise ZeroSmallDivisor(
            f"|A(b)| = {abs(a0):.3e} below floor {divisor_floor:.3e} for weight source {alpha.source}",
            alpha=alpha, value=a0, base=ring.base)
    if B.is_zero():
        return B
    inv = series_inverse(A)
    V = B * inv
    if ring.p == 0 or ring.umax == 0:
        return V
    return V - d_m_operator(V, state) * (twist * inv)


def cohom_norm_bound_check(U, B, state, *, gamma, omega, c1, rad):
    """``(|U|, c1/(gamma omega)^2 |B|)`` at the given radii."""
    rad = rad if isinstance(rad, PolyRadius) else PolyRadius(*rad)
    for aj in state.a:
        for k in range(state.ring.p):
            dn = aj.du(k).norm(rad)
            if dn > 1.0:
                raise PreconditionViolated(f"|da/du| = {dn:.3e} exceeds 1 on the u-ball")
    lhs = U.norm(rad)
    rhs = c1 / (gamma * omega) ** 2 * B.norm(rad)
    return lhs, rhs


def _pivot_columns(S):
    _, _, piv = scipy.linalg.qr(S.lam, pivoting=True, mode="economic")
    return sorted(int(c) for c in piv[: S.l])


def _diagonal_coefficients(NF):
    """g_i(u) with ``NF = sum_i x_i g_i(u) d/dx_i``; NotDiagonalLinear otherwise."""
    ring = NF.ring
    n = ring.n
    out = []
    for i, c in enumerate(NF.comps):
        if c.is_zero():
            out.append(ring.zero())
            continue
        e = c.exps()
        target = np.zeros(n, np.int64)
        target[i] = 1
        bad = ~np.all(e[:, :n] == target[None, :], axis=1)
        if bad.any():
            q = tuple(int(v) for v in e[np.argmax(bad), :n])
            raise NotDiagonalLinear(f"term x^{q} in component {i} is not diagonal linear")
        out.append(type(c).build(ring, c.codes - ring.strides[i], c.vals))
    return out


def extract_a_coeffs(NF, S, good_tol=GOOD_TOL):
    """Coefficients a_j with ``NF = sum_j a_j(u) S_j``."""
    ring = NF.ring
    g = _diagonal_coefficients(NF)
    cols = _pivot_columns(S)
    L = S.lam[:, cols]
    Linv = np.linalg.inv(L.T)
    a = []
    for j in range(S.l):
        acc = ring.zero()
        for t, col in enumerate(cols):
            if Linv[j, t] != 0 and not g[col].is_zero():
                acc = acc + g[col] * complex(Linv[j, t])
        a.append(acc)
    resid = (S.combination(a, ring) - NF).max_abs()
    scale = max(NF.max_abs(), 1.0)
    if resid > good_tol * scale:
        raise NotInSpan(f"normal form leaves the span of S_j (residual {resid:.3e})")
    return tuple(a)


def good_perturbation_check(state, good_tol=GOOD_TOL):
    """Whether the last resonant part lies in the span of S_j over u-series."""
    B0 = state.resonant_part
    if B0 is None or B0.is_zero():
        return True
    try:
        g = _diagonal_coefficients(B0)
    except NotDiagonalLinear:
        return False
    ring = state.ring
    keys = sorted({int(c) for gi in g for c in gi.codes})
    if not keys:
        return True
    rhs = np.zeros((state.S.n, len(keys)), np.complex128)
    pos = {c: t for t, c in enumerate(keys)}
    for i, gi in enumerate(g):
        for c, v in zip(gi.codes, gi.vals):
            rhs[i, pos[int(c)]] = v
    sol, *_ = np.linalg.lstsq(state.S.lam.T, rhs, rcond=None)
    resid = np.abs(state.S.lam.T @ sol - rhs).max()
    return bool(resid <= good_tol * max(np.abs(rhs).max(), 1.0))


def _floor_for(schedule, m):
    if schedule is None:
        return DIVISOR_FLOOR_MIN
    k = int(round(np.log2(m)))
    return max(schedule.gamma * schedule.omega(k + 1) / 2.0, DIVISOR_FLOOR_MIN)


def newton_step(state, b=None, schedule=None, *, divisor_floor=None, rad=None):
    """Normalize from order m to 2m."""
    ring, S, R, m = state.ring, state.S, state.R, state.m
    if b is not None and tuple(complex(v) for v in np.ravel(b)) != ring.base:
        raise BasePointMismatch("newton_step runs at the ring's base point")
    if 2 * m > ring.xmax:
        raise TruncationExceeded(f"order 2m = {2 * m} exceeds xmax = {ring.xmax}")
    floor = _floor_for(schedule, m) if divisor_floor is None else divisor_floor
    nf = state.nf
    B = state.remainder.xslice(m + 1, 2 * m)

    W = VectorField.zero(ring)
    worst, worst_src, nweights = np.inf, None, 0
    for _, (alpha, Ba) in split_by_weight(B, S).items():
        if alpha.is_zero:
            continue
        nweights += 1
        A0 = abs(small_divisor(alpha, state).value_at_base())
        if A0 < worst:
            worst, worst_src = A0, alpha.source
        W = W + cohomological_solve(Ba, alpha, state, twist=-1, divisor_floor=floor)

    if W.is_zero():
        newx = state.remainder
        step = StepMap(m, W, tuple(ring.x(i) for i in range(ring.n)) + tuple(ring.u(k) for k in range(ring.p)),
                       tuple(ring.x(i) for i in range(ring.n)) + tuple(ring.u(k) for k in range(ring.p)))
    else:
        Wt = fibered_lift(W, R)
        Y = pushforward(fibered_lift(state.field, R), Wt)
        newx = Y.xcomps - nf
        step = StepMap(m, W, tuple(flow_map(Wt, -1.0)), tuple(flow_map(Wt, 1.0)))

    low = newx.jet(2 * m)
    B0 = VectorField.zero(ring)
    leftover = leftover_base = 0.0
    for _, (alpha, part) in split_by_weight(low, S).items():
        if alpha.is_zero:
            B0 = B0 + part
        else:
            leftover = max(leftover, part.max_abs())
            leftover_base = max(leftover_base, max(c.ujet(0).max_abs() for c in part.comps))
    reduced, quots = sigma_reduce_field(B0, R, quotients=True)
    new_nf = nf + reduced
    try:
        a_new = extract_a_coeffs(new_nf, S)
    except NotGoodPerturbation as exc:
        raise type(exc)(f"step m={m}: {exc}") from exc
    new_rem = newx - low

    sigma = list(state.sigma_part) or [VectorField.zero(ring) for _ in range(ring.p)]
    sigma = tuple(s + q for s, q in zip(sigma, quots))
    record = {
        "m": m,
        "m_next": 2 * m,
        "weights_solved": nweights,
        "worst_divisor": None if nweights == 0 else float(worst),
        "worst_source": None if worst_src is None else [list(worst_src[0]), int(worst_src[1])],
        "divisor_floor": float(floor),
        "B_max": float(B.max_abs()),
        "W_max": float(W.max_abs()),
        "remainder_max": float(new_rem.max_abs()),
        "nonresonant_leftover": float(leftover),
        "nonresonant_leftover_at_base": float(leftover_base),
        "good": True,
    }
    if rad is not None:
        rad = rad if isinstance(rad, PolyRadius) else PolyRadius(*rad)
        record.update(B_norm=B.norm(rad), W_norm=W.norm(rad), remainder_norm=new_rem.norm(rad))
    if schedule is not None and hasattr(schedule, "step_constants"):
        record.update(schedule.step_constants(int(round(np.log2(m)))))
    return replace(state, m=2 * m, a=a_new, remainder=new_rem, sigma_part=sigma,
                   psi=state.psi + (step,), ledger=state.ledger + (record,),
                   resonant_part=reduced)


def normalize(state, order, schedule=None, **kw):
    """Newton steps until ``state.m >= order``."""
    while state.m < order:
        state = newton_step(state, schedule=schedule, **kw)
    return state


def _linear_diagonal(X):
    ring = X.ring
    nu = np.zeros(ring.n, np.complex128)
    lin = X.jet(1)
    for i, c in enumerate(lin.comps):
        for (q, _), v in c.terms.items():
            if sum(q) == 0:
                raise ValueError("field does not vanish at the origin")
            if q[i] != 1:
                raise NotDiagonalLinear(f"linear part has off-diagonal term x^{q} d/dx_{i}")
            nu[i] = v
    return nu


def poincare_dulac_normalize(X, target_order, S=None, *, divisor_floor=DIVISOR_FLOOR_MIN):
    """Classical degree-by-degree normal form of a pure-x field.

    Resonance of a monomial is decided from the weights of ``S`` when given
    (exactly for rational spectra), otherwise from the linear part.  Returns
    ``(normal_form, displacement)`` where ``x -> x + displacement`` maps the
    original coordinates to the normalizing ones.
    """
    ring = X.ring
    if ring.p:
        raise ValueError("poincare_dulac_normalize works on pure-x fields")
    if target_order > ring.xmax:
        raise TruncationExceeded("target order exceeds xmax")
    nu = _linear_diagonal(X)
    n = ring.n
    total = [ring.x(i) for i in range(n)]
    for d in range(2, target_order + 1):
        Xd = X.xslice(d, d)
        if Xd.is_zero():
            continue
        U = []
        for i, c in enumerate(Xd.comps):
            if c.is_zero():
                U.append(c)
                continue
            e = c.exps()
            div = e @ nu - nu[i]
            if S is not None:
                _, zero = S.weight_keys(e, np.full(e.shape[0], i))
            else:
                zero = np.abs(div) < divisor_floor
            small = (~zero) & (np.abs(div) < divisor_floor)
            if small.any():
                r = int(np.argmax(small))
                raise ZeroSmallDivisor(f"divisor {div[r]:.3e} for x^{tuple(e[r])} d/dx_{i}",
                                       alpha=(tuple(int(v) for v in e[r]), i), value=complex(div[r]))
            keep = ~zero
            vals = np.zeros(c.nnz, np.complex128)
            vals[keep] = -c.vals[keep] / div[keep]
            U.append(type(c).build(ring, c.codes, vals))
        U = VectorField(U)
        if U.is_zero():
            continue
        X = pushforward_explicit(X, U)
        # the new coordinates are (Id + U) applied after the previous ones
        total = [compose(c, total) for c in identity_plus(U)]
    disp = VectorField([total[i] - ring.x(i) for i in range(n)])
    return X.jet(target_order), disp
