"""Scenario builders and numerical checks of the conjugacy and invariance claims."""

from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import (
    FlowEscapedDomain,
    NotSymplecticPerturbation,
    NotVolumePreserving,
    StepUnderflow,
)
from .normalform import initial_state, normalize, poincare_dulac_normalize
from .psalg import (
    Series,
    PolyRadius,
    Ring,
    VectorField,
    compose,
    compose_field,
    embed_pure,
    embed_pure_field,
    pure_ring,
    sigma_reduce,
    substitute_pi,
    substitute_pi_field,
)
from .resonance import LinearMorphism, ResonantStructure


@dataclass
class Scenario:
    """Integrable part ``sum_j a_j(u) S_j`` plus a pure-x perturbation.

    ``a_builder(ring)`` returns the coefficients as u-series in ``ring``, so the
    scenario can be re-expanded around any base point.
    """

    name: str
    S: LinearMorphism
    R: ResonantStructure
    ring: Ring
    a_builder: object
    perturbation: VectorField
    m0: int
    meta: dict = field(default_factory=dict)

    @property
    def a(self):
        return tuple(self.a_builder(self.ring))

    @property
    def X0(self):
        return self.S.combination(self.a, self.ring)

    def rebase(self, base, xmax=None, umax=None):
        ring = Ring(self.ring.n, self.ring.p, self.ring.xmax if xmax is None else xmax,
                    self.ring.umax if umax is None else umax, tuple(base))
        return Scenario(self.name, self.S, self.R, ring, self.a_builder,
                        self.perturbation.retruncate(pure_ring(ring)) if xmax is not None and xmax < self.ring.xmax
                        else self.perturbation, self.m0, dict(self.meta))

    def pure_field(self, xmax=None):
        """The original field on C^n: ``X0(x, pi(x)) + P(x)``."""
        X0 = substitute_pi_field(self.X0, self.R, xmax)
        return X0 + self.perturbation.retruncate(X0.ring)

    def initial_state(self):
        """State at m = 1; the steps below the perturbation's order are identities."""
        P = embed_pure_field(self.perturbation, self.ring)
        return initial_state(self.S, self.R, self.ring, self.a, P, m=1)


def _poly_in_u(ring, k, coeffs):
    """``sum_d coeffs[d] u_k**d`` as a series around the ring's base."""
    out = ring.zero()
    power = ring.one()
    for d, c in enumerate(coeffs):
        if d:
            power = power * ring.u(k)
        if c != 0:
            out = out + power * complex(c)
    return out


def hamiltonian_field(h, n_pairs, factor=1j):
    """``factor * sum_i (dh/dw_i d/dz_i - dh/dz_i d/dw_i)`` in coordinates (z1, w1, z2, w2, ...)."""
    comps = []
    for i in range(n_pairs):
        comps.append(h.dx(2 * i + 1) * factor)
        comps.append(h.dx(2 * i) * (-factor))
    return VectorField(comps)


def is_symplectic_gradient(X, n_pairs, tol=1e-12):
    """Closedness of ``sum_i X_{z_i} dw_i - X_{w_i} dz_i`` (exact for polynomials)."""
    form = []
    for i in range(n_pairs):
        form.append(-X[2 * i + 1])
        form.append(X[2 * i])
    scale = max(X.max_abs(), 1.0)
    for a in range(2 * n_pairs):
        for b in range(a + 1, 2 * n_pairs):
            if (form[b].dx(a) - form[a].dx(b)).max_abs() > tol * scale:
                return False
    return True


def scenario_hamiltonian(n_pairs=1, mu=None, h=None, *, eps=1e-3, perturbation=None, factor=1j,
                         xmax=16, umax=8, base=None):
    """Complexified elliptic Hamiltonian in coordinates (z_i, w_i) with ``u_i = z_i w_i``.

    ``mu[i]`` lists ``mu_{i,1}, mu_{i,2}, ...`` in ``G0 = sum mu_{i,l} u_i**l``.
    ``h`` is the perturbing Hamiltonian as ``{exponent: coef}`` over 2n variables;
    the default is ``eps (z1 w1)**2 (z1 + w1) / 4``, plus a coupling term of the
    same degree when there are two pairs or more.  The default frequencies are
    ``mu_{i,1} = sqrt(i)`` (1-based i).  ``factor`` multiplies the
    symplectic gradient; ``1j`` gives the complexification of a real flow.
    """
    n = 2 * n_pairs
    mu = [[float(np.sqrt(i + 1))] for i in range(n_pairs)] if mu is None else [list(r) for r in mu]
    lam = []
    for i in range(n_pairs):
        row = [0] * n
        row[2 * i], row[2 * i + 1] = 1, -1
        lam.append(row)
    S = LinearMorphism(lam)
    Rrows = []
    for i in range(n_pairs):
        row = [0] * n
        row[2 * i] = row[2 * i + 1] = 1
        Rrows.append(row)
    R = ResonantStructure(Rrows, S)
    ring = Ring(n, n_pairs, xmax, umax, tuple(base) if base is not None else (0j,) * n_pairs)
    pr = pure_ring(ring)

    def a_builder(rg):
        out = []
        for i in range(n_pairs):
            derivs = [(l + 1) * c for l, c in enumerate(mu[i])]
            out.append(_poly_in_u(rg, i, derivs) * factor)
        return out

    if perturbation is not None:
        P = perturbation.retruncate(pr) if perturbation.ring.p == 0 else perturbation
        if P.ring.p != 0 or not is_symplectic_gradient(P, n_pairs):
            raise NotSymplecticPerturbation("perturbation is not the symplectic gradient of a Hamiltonian")
        hs = None
    else:
        if h is None:
            e = [0] * n
            e[0], e[1] = 3, 2
            e2 = [0] * n
            e2[0], e2[1] = 2, 3
            h = {tuple(e): eps / 4, tuple(e2): eps / 4}
            if n_pairs >= 2:
                # eps (z1 w1)(z1 w2 + w1 z2)(z2 + w2) / 4 couples the first two pairs
                for e1, e2_ in (((2, 1, 1, 0), (0, 0, 1, 1)), ((1, 2, 0, 1), (0, 0, 1, 1))):
                    for sh in ((1, 0), (0, 1)):
                        ex = [0] * n
                        ex[:4] = [e1[0], e1[1], e1[2] + sh[0], e1[3] + sh[1]]
                        h[tuple(ex)] = h.get(tuple(ex), 0) + eps / 4
        hs = pr.from_terms({tuple(k): v for k, v in h.items()}) if isinstance(h, dict) else h
        P = hamiltonian_field(hs, n_pairs, factor)
    m0 = max(1, P.order() - 1) if not P.is_zero() else 1
    meta = {"n_pairs": n_pairs, "mu": mu, "factor": [float(np.real(factor)), float(np.imag(factor))]}
    return Scenario("hamiltonian", S, R, ring, a_builder, P, m0, meta)


def divergence(X):
    out = X.ring.zero()
    for i, c in enumerate(X.comps):
        out = out + c.dx(i)
    return out


def potential_field(ring, pairs):
    """Divergence-free ``sum (d_j phi d/dx_i - d_i phi d/dx_j)`` over ``(i, j, phi)`` triples."""
    comps = [ring.zero() for _ in range(ring.n)]
    for i, j, phi in pairs:
        comps[i] = comps[i] + phi.dx(j)
        comps[j] = comps[j] - phi.dx(i)
    return VectorField(comps)


def scenario_volume(n=3, a=None, perturbation=None, *, eps=1e-3, xmax=16, umax=6, base=None, div_tol=1e-12):
    """``S_i = x_i d/dx_i - x_{i+1} d/dx_{i+1}`` with the single invariant ``u = x_1...x_n``.

    ``a[j]`` lists the coefficients of ``a_j(u)`` as a polynomial in u.  The
    default perturbation is built from stream functions, hence divergence-free.
    """
    lam = []
    for i in range(n - 1):
        row = [0] * n
        row[i], row[i + 1] = 1, -1
        lam.append(row)
    S = LinearMorphism(lam)
    R = ResonantStructure([[1] * n], S)
    ring = Ring(n, 1, xmax, umax, tuple(base) if base is not None else (0j,))
    pr = pure_ring(ring)
    if a is None:
        a = [[1.0]] + [[np.sqrt(2.0) ** j] for j in range(1, n - 1)]
    a = [list(r) for r in a]

    def a_builder(rg):
        return [_poly_in_u(rg, 0, coeffs) for coeffs in a]

    if perturbation is None:
        if n >= 3:
            x = [pr.x(i) for i in range(n)]
            phi1 = (x[0] * x[0] * x[1] * x[2] + x[1] * x[2] * x[2] * x[2] + x[0] * x[0] * x[0] * x[0]) * eps
            phi2 = (x[0] * x[1] * x[1] * x[2] + x[0] * x[0] * x[0] * x[2]) * eps
            P = potential_field(pr, [(0, 1, phi1), (1, 2, phi2)])
        else:
            P = VectorField.zero(pr)
    else:
        P = perturbation.retruncate(pr) if perturbation.ring.p == 0 else perturbation
        if P.ring.p != 0:
            raise NotVolumePreserving("perturbation must be a pure-x field")
    if divergence(P).max_abs() > div_tol * max(P.max_abs(), 1.0):
        raise NotVolumePreserving("perturbation has nonzero divergence")
    m0 = max(1, P.order() - 1) if not P.is_zero() else 1
    return Scenario("volume", S, R, ring, a_builder, P, m0, {"n": n, "a": a})


# flows

@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    nfev: int


def flow(X, x0, T, tol=1e-10, *, u=None, escape_radius=None, t_eval=None, atol=None):
    """Integrate ``x' = X(x)`` with an embedded 8(5,3) Runge-Kutta pair on complex states."""
    x0 = np.asarray(x0, np.complex128)
    ring = X.ring
    exps = [c.exps() for c in X.comps]
    from . import _kernels

    ubase = ring.basev if ring.p else None
    uval = None if u is None else np.asarray(u, np.complex128) - ubase

    def rhs(t, y):
        pt = y[None, :] if uval is None else np.concatenate([y, uval])[None, :]
        return np.array([_kernels.evaluate(e, c.vals, pt)[0] if c.nnz else 0j
                         for e, c in zip(exps, X.comps)])

    events = None
    if escape_radius is not None:
        def escape(t, y):
            return escape_radius - np.max(np.abs(y))

        escape.terminal = True
        events = escape
    sol = scipy.integrate.solve_ivp(rhs, (0.0, T), x0, method="DOP853", rtol=tol,
                                    atol=tol * 1e-3 if atol is None else atol,
                                    t_eval=t_eval, events=events, dense_output=False)
    if sol.status == 1:
        raise FlowEscapedDomain(f"trajectory left the polydisc of radius {escape_radius} at t = {sol.t[-1]:.4g}")
    if sol.status == -1:
        raise StepUnderflow(sol.message)
    return Trajectory(sol.t, sol.y.T, sol.nfev)


# fibers and the straightening maps

def fiber_points(R, b, n_samples=16, *, seed=0, max_points=4096):
    """Points with ``pi(x) = b``: a principal solution times kernel-torus angles.

    The principal solution minimizes the spread of ``log|x_j|``.  For a
    kernel torus of dimension at most 2 the angles form a uniform grid,
    otherwise they are drawn from a seeded generator.
    """
    Rm = R.R.astype(float)
    b = np.asarray(b, np.complex128)
    if np.any(b == 0):
        raise ValueError("fiber sampling needs b with nonzero entries")
    logx = np.linalg.pinv(Rm) @ np.log(b)
    x0 = np.exp(logx)
    K = scipy.linalg.null_space(Rm)
    dim = K.shape[1]
    if dim == 0:
        return x0[None, :]
    if dim <= 2 and n_samples**dim <= max_points:
        ang = np.meshgrid(*[2 * np.pi * np.arange(n_samples) / n_samples] * dim, indexing="ij")
        theta = np.stack([a.ravel() for a in ang], axis=1)
    else:
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0, 2 * np.pi, size=(min(n_samples**2, max_points), dim))
    return x0[None, :] * np.exp(1j * theta @ K.T)


def straightening_maps(state, xmax=None):
    """Pure-x series ``(Theta, Psi)`` with ``Psi = Theta^{-1}``.

    Each step's maps are restricted to the graph ``u = pi(x)`` and then
    composed: ``Theta = theta_1 o ... o theta_K`` from the inverse maps and
    ``Psi = phi_K o ... o phi_1`` from the forward ones.
    """
    R = state.R
    pr = pure_ring(state.ring, xmax)
    n = pr.n
    ident = [pr.x(i) for i in range(n)]
    theta = list(ident)
    psi = list(ident)
    for step in reversed(state.psi):
        inv = [substitute_pi(c, R, xmax) for c in step.inverse[:n]]
        theta = [compose(c, theta) for c in inv]
    for step in state.psi:
        fwd = [substitute_pi(c, R, xmax) for c in step.forward[:n]]
        psi = [compose(c, psi) for c in fwd]
    return theta, psi


def fiber_reduce(f, R, b):
    """Set ``x^{R_k} = b_k`` repeatedly in a pure-x series."""
    ring = Ring(f.ring.n, R.p, f.ring.xmax, 0, tuple(b))
    red = sigma_reduce(embed_pure(f, ring), R)
    pr = pure_ring(ring)
    e = red.exps()[:, : ring.n]
    return Series.build(pr, e @ pr.strides if e.size else np.zeros(len(e), np.int64), red.vals)


def conjugacy_residual(scn, state, b=None, rho=0.1, order=None):
    """Majorant norm at rho of ``D Theta . NF - X o Theta`` on the fiber over b.

    Returns ``(residual, tail)``: the norm of terms of x-degree at most
    ``order`` (default: the state's order) and of the rest.
    """
    b = state.ring.base if b is None else tuple(b)
    order = state.m if order is None else order
    R = state.R
    theta, _ = straightening_maps(state)
    NF = substitute_pi_field(state.nf, R)
    X = scn.rebase(state.ring.base, xmax=state.ring.xmax).pure_field()
    lhs = [NF.apply(t) for t in theta]
    rhs = compose_field(X, theta)
    res = VectorField([fiber_reduce(l - r, R, b) for l, r in zip(lhs, rhs.comps)])
    rad = PolyRadius(rho, 1.0)
    head = res.jet(order).norm(rad)
    tail = (res - res.jet(order)).norm(rad)
    return head, tail


def evaluate_map(maps, pts):
    pts = np.atleast_2d(np.asarray(pts, np.complex128))
    return np.stack([m.evaluate(pts) for m in maps], axis=1)


def invariant_residual(scn, state, b=None, rho=0.1, T=1.0, n_samples=16, *, tol=1e-12, n_times=21,
                       normalized=True, seed=0):
    """Drift of ``pi`` along the flow, raw and in straightened coordinates.

    Samples y on the fiber over b, starts the full field at ``Theta(y)`` and
    measures ``max |pi(Psi(x(t))) - b|`` and ``max |pi(x(t)) - pi(x(0))|``.
    With ``normalized=False`` both maps are the identity.
    """
    b = np.asarray(state.ring.base if b is None else b, np.complex128)
    R = state.R
    X = scn.rebase(state.ring.base, xmax=state.ring.xmax).pure_field()
    if normalized:
        theta, psi = straightening_maps(state)
    else:
        pr = pure_ring(state.ring)
        theta = psi = [pr.x(i) for i in range(pr.n)]
    ys = fiber_points(R, b, n_samples, seed=seed)
    ts = np.linspace(0.0, T, n_times)
    straight, raw, inverse_err = [], [], []
    x0s = evaluate_map(theta, ys)
    back = evaluate_map(psi, x0s)
    inverse_err = np.max(np.abs(back - ys), axis=1)
    for x0 in x0s:
        tr = flow(X, x0, T, tol, escape_radius=2 * rho, t_eval=ts)
        p0 = R.pi(x0)
        raw.append(np.max(np.abs(R.pi(tr.y) - p0[None, :])))
        yt = evaluate_map(psi, tr.y)
        straight.append(np.max(np.abs(R.pi(yt) - b[None, :])))
    return {
        "straightened_max": float(np.max(straight)),
        "raw_max": float(np.max(raw)),
        "straightened": [float(v) for v in straight],
        "raw": [float(v) for v in raw],
        "inverse_error_max": float(np.max(inverse_err)),
        "samples": int(len(x0s)),
        "rho": rho,
        "T": T,
        "tol": tol,
    }


def newton_pure_nf(state, order):
    """The Newton normal form with ``u = pi(x)``, truncated at ``order``."""
    return substitute_pi_field(state.nf, state.R).jet(order)


def oracle_equivalence(scn, order, b=None, schedule=None):
    """Max coefficient of the difference of the Newton and Poincare-Dulac normal forms.

    Both are compared as pure-x fields (``u = pi(x)``) up to ``order``.
    """
    base = scn.ring.base if b is None else tuple(b)
    sc = scn.rebase(base)
    state = sc.initial_state()
    target = 1
    while target < order:
        target *= 2
    state = normalize(state, target, schedule=schedule)
    nf_newton = newton_pure_nf(state, order)
    nf_pd, _ = poincare_dulac_normalize(sc.pure_field(), order, sc.S)
    diff = (nf_newton - nf_pd.retruncate(nf_newton.ring)).max_abs()
    return diff, state, nf_pd
