"""Weights of a diagonal linear action, resonant monomials and nondegeneracy.

The linear morphism is ``S(g_j) = sum_i lam[j][i] x_i d/dx_i``.  The weight of
the monomial field ``x^Q d/dx_i`` is ``alpha_{Q,i}(g_j) = (Q, lam_j) - lam[j][i]``.
Indices are 0-based throughout.

Zero tests on weights are exact when every entry of ``lam`` is a Gaussian
rational: the matrix is scaled to integers once and weights are compared as
integer vectors.  Otherwise a weight is declared zero when its max-norm is
below ``EPS_RES`` and the morphism reports ``float_mode``.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial, gcd

import numpy as np

from .errors import (
    DegenerateUpToMuMax,
    DimensionMismatch,
    EmptyRing,
    NoNonzeroWeights,
    OnCoordinateHyperplane,
)
from .psalg import Series, VectorField, glex_key

EPS_RES = 1e-9
BETA_FLOOR = 1e-8
BETA_SAFETY = 0.5
# largest number of (Q, i) rows enumerated directly for a weight window
ENUM_LIMIT = 3_000_000


def _to_fraction(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, bool):
        raise TypeError("boolean is not a valid matrix entry")
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v.strip())
    if isinstance(v, float):
        if v.is_integer():
            return Fraction(int(v))
        return None
    return None


def parse_entry(v):
    """Entry as (complex value, exact (re, im) fractions or None).

    Accepts numbers, ``"num/den"`` strings, complex numbers and ``[re, im]`` pairs.
    """
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ValueError(f"complex entry must be a [re, im] pair, got {v!r}")
        re, im = (_to_fraction(v[0]), _to_fraction(v[1]))
        val = complex(float(Fraction(v[0]) if isinstance(v[0], str) else v[0]),
                      float(Fraction(v[1]) if isinstance(v[1], str) else v[1]))
        exact = (re, im) if re is not None and im is not None else None
        return val, exact
    if isinstance(v, complex):
        re, im = _to_fraction(v.real), _to_fraction(v.imag)
        exact = (re, im) if re is not None and im is not None else None
        return v, exact
    fr = _to_fraction(v)
    if isinstance(v, str):
        return complex(float(fr)), (fr, Fraction(0))
    return complex(v), ((fr, Fraction(0)) if fr is not None else None)


class LinearMorphism:
    """The l x n eigenvalue matrix of a family of commuting diagonal fields."""

    def __init__(self, lam, *, force_float=False):
        rows = [list(r) for r in lam]
        if not rows or not rows[0]:
            raise DimensionMismatch("eigenvalue matrix must be nonempty")
        n = len(rows[0])
        if any(len(r) != n for r in rows):
            raise DimensionMismatch("eigenvalue rows have different lengths")
        vals, exact = [], []
        for r in rows:
            vr, er = [], []
            for v in r:
                c, e = parse_entry(v)
                vr.append(c)
                er.append(e)
            vals.append(vr)
            exact.append(er)
        self.lam = np.array(vals, dtype=np.complex128)
        self.l, self.n = self.lam.shape
        if self.l > self.n:
            raise DimensionMismatch("more rows than variables")
        if np.linalg.matrix_rank(self.lam) < self.l:
            raise DimensionMismatch("eigenvalue rows are linearly dependent")
        is_exact = not force_float and all(e is not None for r in exact for e in r)
        self.float_mode = not is_exact
        if is_exact:
            den = 1
            for r in exact:
                for re, im in r:
                    den = den * re.denominator // gcd(den, re.denominator)
                    den = den * im.denominator // gcd(den, im.denominator)
            self.scale = den
            self._ire = np.array([[int(re * den) for re, _ in r] for r in exact], dtype=np.int64)
            self._iim = np.array([[int(im * den) for _, im in r] for r in exact], dtype=np.int64)
            self.exact = tuple(tuple(r) for r in exact)
        else:
            self.scale = None
            self._ire = self._iim = None
            self.exact = None

    @property
    def Lambda(self):
        """Largest modulus of an eigenvalue entry."""
        return float(np.abs(self.lam).max())

    def field(self, j, ring):
        """S_j as a VectorField in the given ring."""
        return VectorField.diagonal(ring, [complex(c) for c in self.lam[j]])

    def combination(self, coeffs, ring):
        """``sum_j coeffs[j] S_j`` with scalar or series coefficients."""
        diag = []
        for i in range(self.n):
            acc = ring.zero()
            for j in range(self.l):
                if self.lam[j, i] != 0:
                    acc = acc + coeffs[j] * complex(self.lam[j, i])
            diag.append(acc)
        return VectorField.diagonal(ring, diag)

    # vectorized weights
    def weight_values(self, Q, idx):
        """Complex weight vectors (N, l) of rows Q (N, n) and directions idx (N,)."""
        Q = np.asarray(Q, dtype=np.float64)
        return Q @ self.lam.T - self.lam[:, idx].T

    def weight_keys(self, Q, idx):
        """Hashable keys (N, k) comparing weights exactly, and a zero mask."""
        Q = np.asarray(Q, dtype=np.int64)
        idx = np.asarray(idx, dtype=np.int64)
        if not self.float_mode:
            re = Q @ self._ire.T - self._ire[:, idx].T
            im = Q @ self._iim.T - self._iim[:, idx].T
            keys = np.concatenate([re, im], axis=1)
            zero = ~np.any(keys != 0, axis=1)
            return keys, zero
        vals = self.weight_values(Q, idx)
        zero = np.max(np.abs(vals), axis=1) < EPS_RES
        keys = np.concatenate([np.round(vals.real / EPS_RES), np.round(vals.imag / EPS_RES)], axis=1)
        keys = keys.astype(np.int64)
        keys[zero] = 0
        return keys, zero

    def to_json(self):
        if self.exact is not None:
            return [[[str(re), str(im)] for re, im in r] for r in self.exact]
        return [[[float(c.real), float(c.imag)] for c in r] for r in self.lam]


@dataclass(frozen=True)
class Weight:
    """A weight with its value on g_1..g_l and the (Q, i) pairs generating it."""

    vals: tuple
    source: tuple
    key: tuple
    sources: tuple = field(default=(), compare=False)

    @property
    def is_zero(self):
        return all(k == 0 for k in self.key)

    def norm(self):
        """Max-norm over the basis elements g_j."""
        return max(abs(v) for v in self.vals) if self.vals else 0.0

    def __call__(self, j):
        return self.vals[j]


def weight(Q, i, S):
    Q = tuple(int(q) for q in Q)
    if len(Q) != S.n or not 0 <= i < S.n:
        raise DimensionMismatch("exponent or direction out of range")
    keys, _ = S.weight_keys(np.array([Q]), np.array([i]))
    vals = S.weight_values(np.array([Q]), np.array([i]))[0]
    return Weight(tuple(complex(v) for v in vals), (Q, i), tuple(int(k) for k in keys[0]), ((Q, i),))


def zero_weight(S):
    return Weight((0j,) * S.l, (None, None), (0,) * (2 * S.l))


@lru_cache(maxsize=48)
def _monomial_array(n, d):
    """All exponents of total degree d in n variables as an (N, n) array, graded-lex."""
    if n == 1:
        return np.array([[d]], dtype=np.int64)
    blocks = []
    for a in range(d, -1, -1):
        rest = _monomial_array(n - 1, d - a)
        blocks.append(np.concatenate([np.full((rest.shape[0], 1), a, np.int64), rest], axis=1))
    return np.concatenate(blocks, axis=0)


def _count(n, d):
    from math import comb

    return comb(d + n - 1, n - 1)


def _window_rows(n, lo, hi):
    Qs, idx = [], []
    for d in range(lo, hi + 1):
        Q = _monomial_array(n, d)
        Qs.append(np.repeat(Q, n, axis=0))
        idx.append(np.tile(np.arange(n), Q.shape[0]))
    if not Qs:
        return np.zeros((0, n), np.int64), np.zeros(0, np.int64)
    return np.concatenate(Qs), np.concatenate(idx)


def nonzero_weights_in(S, k_low, k_high, *, sources_limit=20000):
    """Distinct nonzero weights of monomial fields with degree in [k_low, k_high].

    Degrees are scanned in increasing order, so every weight carries its
    first source in graded-lex order.  The full source list is kept only
    when the window has at most ``sources_limit`` rows.
    """
    if k_low > k_high:
        return []
    keep_all = sum(_count(S.n, d) for d in range(k_low, k_high + 1)) * S.n <= sources_limit
    found = {}
    for d in range(k_low, k_high + 1):
        Q, idx = _window_rows(S.n, d, d)
        keys, zero = S.weight_keys(Q, idx)
        live = np.flatnonzero(~zero)
        if live.size == 0:
            continue
        ukeys, first, inverse = np.unique(keys[live], axis=0, return_index=True, return_inverse=True)
        inverse = inverse.ravel()
        if keep_all:
            order = np.argsort(inverse, kind="stable")
            bounds = np.searchsorted(inverse[order], np.arange(len(first) + 1))
        for g in range(len(first)):
            key = tuple(int(v) for v in ukeys[g])
            entry = found.get(key)
            if entry is not None and not keep_all:
                continue
            if entry is None:
                r0 = live[first[g]]
                entry = found[key] = [(tuple(int(q) for q in Q[r0]), int(idx[r0])), []]
            if keep_all:
                rs = live[order[bounds[g]:bounds[g + 1]]]
                entry[1].extend((tuple(int(q) for q in Q[r]), int(idx[r])) for r in rs)
    out = []
    for key, (src, srcs) in found.items():
        vals = S.weight_values(np.array([src[0]]), np.array([src[1]]))[0]
        out.append(Weight(tuple(complex(v) for v in vals), src, key, tuple(srcs) if keep_all else (src,)))
    out.sort(key=lambda w: (w.norm(), w.key))
    return out


def _window(k, window):
    if window == "dyadic":
        return 2**k + 1, 2 ** (k + 1)
    if window == "intro":
        return 2, 2**k
    raise ValueError(f"unknown window {window!r}")


def _enum_min_norm(S, lo, hi):
    Q, idx = _window_rows(S.n, lo, hi)
    if Q.shape[0] == 0:
        return None
    _, zero = S.weight_keys(Q, idx)
    vals = S.weight_values(Q, idx)
    norms = np.max(np.abs(vals), axis=1)
    norms = norms[~zero]
    return float(norms.min()) if norms.size else None


def _dp_min_norms(S, hi):
    """Per-degree minimum nonzero weight norm up to degree ``hi`` (exact mode).

    Only values of (Q, lam) inside a box around the directions are tracked;
    by the Steinitz reordering lemma every Q whose value ends near lam_i
    admits a path of partial sums inside that box, so minima of size at most
    the box margin are exact.  Returns (list of minima or None per degree,
    box margin).  The sets become periodic in the degree once the box
    saturates, which lets large windows be answered from a finite prefix.
    """
    cols = np.concatenate([S._ire, S._iim], axis=0).T  # (n, 2l)
    dim = cols.shape[1]
    lam_int = int(np.abs(cols).max())
    margin = lam_int
    box = (dim + 2) * 2 * lam_int + lam_int
    targets = cols  # value of lam_i for each direction i
    current = {tuple([0] * dim)}
    mins = [None]
    history = [frozenset(current)]
    for d in range(1, hi + 1):
        nxt = set()
        for v in current:
            for c in cols:
                w = tuple(a + b for a, b in zip(v, c))
                if max(abs(t) for t in w) <= box:
                    nxt.add(w)
        current = nxt
        history.append(frozenset(current))
        arr = np.array(sorted(current), dtype=np.int64) if current else np.zeros((0, dim), np.int64)
        best = None
        if arr.size:
            for t in targets:
                diff = arr - t[None, :]
                nz = np.any(diff != 0, axis=1)
                if not nz.any():
                    continue
                re = diff[:, : S.l].astype(float)
                im = diff[:, S.l:].astype(float)
                norms = np.max(np.hypot(re, im), axis=1)[nz] / S.scale
                m = float(norms.min())
                best = m if best is None else min(best, m)
        mins.append(best)
        # the step map depends only on the current set, so one repeat fixes a period
        for P in range(1, min(d, 64) + 1):
            if history[d] == history[d - P]:
                return mins, margin / S.scale, P
    return mins, margin / S.scale, None


def omega_S(S, k, norm_choice="max", window="dyadic"):
    """Smallest max-norm of a nonzero weight with degree in the window of k."""
    if norm_choice != "max":
        raise ValueError("only the max-norm over g_1..g_l is supported")
    lo, hi = _window(k, window)
    if lo > hi:
        raise NoNonzeroWeights(f"empty degree window for k={k}")
    rows = sum(_count(S.n, d) for d in range(lo, hi + 1)) * S.n
    if rows <= ENUM_LIMIT:
        m = _enum_min_norm(S, lo, hi)
        if m is None:
            raise NoNonzeroWeights(f"no nonzero weight in degrees [{lo}, {hi}]")
        return m
    if S.float_mode:
        raise NoNonzeroWeights(f"window [{lo}, {hi}] too large to enumerate in float resonance mode")
    return _omega_periodic(S, lo, hi)


def _omega_periodic(S, lo, hi):
    mins, margin, period = _dp_omega_cache(S, hi)
    last = len(mins) - 1
    degrees = list(range(lo, min(hi, last) + 1))
    if period is not None and hi > last:
        start = last - period
        first = max(lo, last + 1)
        for D in range(first, min(hi, first + period - 1) + 1):
            degrees.append(start + (D - start) % period)
    vals = [mins[d] for d in degrees if mins[d] is not None and mins[d] <= margin]
    if not vals:
        raise NoNonzeroWeights(f"no nonzero weight of norm <= {margin} in degrees [{lo}, {hi}]")
    return min(vals)


_DP_CACHE = {}


def _dp_omega_cache(S, hi):
    key = (S._ire.tobytes(), S._iim.tobytes(), S._ire.shape)
    hit = _DP_CACHE.get(key)
    if hit is not None and (hit[2] is not None or len(hit[0]) > hi):
        return hit
    res = _dp_min_norms(S, hi)
    _DP_CACHE[key] = res
    return res


def weight_project(X, alpha, S):
    """Monomial terms of X whose weight equals ``alpha`` (u-coefficients are kept)."""
    ring = X.ring
    n = ring.n
    target = np.array(alpha.key, dtype=np.int64)
    comps = []
    for i, c in enumerate(X.comps):
        if c.is_zero():
            comps.append(c)
            continue
        e = c.exps()[:, :n]
        keys, _ = S.weight_keys(e, np.full(e.shape[0], i))
        mask = np.all(keys == target[None, :], axis=1)
        comps.append(Series(ring, c.codes[mask], c.vals[mask]))
    return VectorField(comps)


def split_by_weight(X, S):
    """Partition X into weight components: ``{key: (Weight, VectorField)}``."""
    ring = X.ring
    n = ring.n
    buckets = {}
    for i, c in enumerate(X.comps):
        if c.is_zero():
            continue
        e = c.exps()[:, :n]
        keys, _ = S.weight_keys(e, np.full(e.shape[0], i))
        vals = S.weight_values(e, np.full(e.shape[0], i))
        order = {}
        for r, kv in enumerate(map(tuple, keys.tolist())):
            order.setdefault(kv, []).append(r)
        for kv, rows in order.items():
            rows = np.array(rows)
            if kv not in buckets:
                src = (tuple(int(q) for q in e[rows[0]]), i)
                w = Weight(tuple(complex(v) for v in vals[rows[0]]), src, kv, (src,))
                buckets[kv] = [w, [ring.zero()] * n]
            buckets[kv][1][i] = Series(ring, c.codes[rows], c.vals[rows])
    out = {}
    for kv in sorted(buckets):
        w, comps = buckets[kv]
        out[kv] = (w, VectorField(comps))
    return out


class ResonantStructure:
    """Exponent rows R_1..R_p of invariant monomials and the map pi."""

    def __init__(self, R, S=None):
        R = np.atleast_2d(np.asarray(R, dtype=np.int64))
        if R.size == 0:
            raise DimensionMismatch("resonant structure needs at least one row")
        if np.any(R < 0):
            raise ValueError("exponents must be nonnegative")
        if np.any(R.sum(axis=1) == 0):
            raise ValueError("zero row in resonant structure")
        self.R = R
        self.p, self.n = R.shape
        self.rank = int(np.linalg.matrix_rank(R.astype(float)))
        if self.rank != self.p:
            raise ValueError("resonant monomials must be algebraically independent (rank R = p)")
        if S is not None:
            if S.n != self.n:
                raise DimensionMismatch("resonant rows and morphism have different n")
            keys, _ = S.weight_keys(R, np.zeros(self.p, np.int64))
            base_keys, _ = S.weight_keys(np.zeros((1, self.n), np.int64), np.zeros(1, np.int64))
            # weight of x^{R_k} x_0 d/dx_0 minus weight of x_0 d/dx_0 is (R_k, lam)
            if not np.all(keys == base_keys):
                raise ValueError("a row of R is not invariant under S")

    def pi(self, x):
        x = np.asarray(x, dtype=np.complex128)
        return np.prod(x[..., None, :] ** self.R, axis=-1)

    def dpi(self, x):
        """Jacobian (p, n) of pi at x."""
        x = np.asarray(x, dtype=np.complex128)
        out = np.zeros((self.p, self.n), dtype=np.complex128)
        for i in range(self.p):
            for j in range(self.n):
                if self.R[i, j]:
                    e = self.R[i].copy()
                    e[j] -= 1
                    out[i, j] = self.R[i, j] * np.prod(x**e)
        return out

    def monomial(self, k, ring):
        return ring.monomial(tuple(int(v) for v in self.R[k]))

    def to_json(self):
        return self.R.tolist()


def first_integral_basis(S, degree_bound):
    """Minimal generators of ``{Q in N^n : (Q, lam) = 0}`` up to a degree bound."""
    sols = []
    for d in range(1, degree_bound + 1):
        Q = _monomial_array(S.n, d)
        if S.float_mode:
            vals = Q.astype(float) @ S.lam.T
            ok = np.max(np.abs(vals), axis=1) < EPS_RES
        else:
            ok = ~np.any(Q @ S._ire.T != 0, axis=1) & ~np.any(Q @ S._iim.T != 0, axis=1)
        sols.extend(tuple(int(v) for v in q) for q in Q[ok])
    if not sols:
        raise EmptyRing(f"no invariant monomial of degree <= {degree_bound}")
    solset = set(sols)
    gens = []
    for q in sorted(sols, key=glex_key):
        reducible = False
        for s in solset:
            if s != q and all(a <= b for a, b in zip(s, q)):
                rest = tuple(b - a for a, b in zip(s, q))
                if rest in solset:
                    reducible = True
                    break
        if not reducible:
            gens.append(q)
    gens.sort(key=glex_key)
    return ResonantStructure(gens, S)


def dpi_minor_identity_check(R, x, I, J):
    """Both sides of ``prod_{j in J} x_j det(Dpi)_{I,J} = prod_{i in I} x^{R_i} det(R_{I,J})``."""
    x = np.asarray(x, dtype=np.complex128)
    if np.any(x == 0):
        raise OnCoordinateHyperplane("point lies on a coordinate hyperplane")
    I, J = list(I), list(J)
    if len(I) != len(J):
        raise DimensionMismatch("row and column index sets differ in size")
    D = R.dpi(x)
    lhs = np.prod(x[J]) * np.linalg.det(D[np.ix_(I, J)])
    mons = np.prod(x[None, :] ** R.R[I], axis=1)
    rhs = np.prod(mons) * np.linalg.det(R.R[np.ix_(I, J)].astype(float))
    return complex(lhs), complex(rhs)


def _u_coefficient_matrix(a, jet_order):
    keys = set()
    for s in a:
        for (q, p), _ in s.terms.items():
            if sum(q) == 0 and sum(p) <= jet_order:
                keys.add(p)
    keys = sorted(keys, key=lambda p: (sum(p), p))
    M = np.zeros((len(a), len(keys)), dtype=np.complex128)
    for j, s in enumerate(a):
        t = s.terms
        for c, p in enumerate(keys):
            M[j, c] = t.get(((0,) * s.ring.n, p), 0)
    return M


def is_nondegenerate(a, jet_order):
    """True when the jets of a_1..a_l are linearly independent over C."""
    M = _u_coefficient_matrix(a, jet_order)
    if M.size == 0:
        return False
    return int(np.linalg.matrix_rank(M, tol=1e-12 * max(1.0, np.abs(M).max()))) == len(a)


def _sample_sphere(rng, count, dim, complex_=False):
    if complex_:
        v = rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))
    else:
        v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _taylor_in_t(g, y, w, order, radius=0.25, nodes=64):
    """Taylor coefficients at t=0 of t -> g(y + t w) for a holomorphic map g.

    Uses the trapezoidal Cauchy formula on a circle; exact up to rounding for
    polynomials of degree below ``nodes``.
    """
    theta = 2 * np.pi * np.arange(nodes) / nodes
    ts = radius * np.exp(1j * theta)
    pts = y[None, :] + ts[:, None] * w[None, :]
    vals = g(pts)  # (nodes, ...)
    coeffs = np.fft.fft(vals, axis=0) / nodes
    scale = radius ** -np.arange(order + 1)
    return coeffs[: order + 1] * scale.reshape((-1,) + (1,) * (coeffs.ndim - 1))


def _fd_derivatives(f, y, v, order, h):
    """Second-order central differences of t -> f(y + t v) at t = 0, k = 0..order."""
    out = [f(y[None, :])[0]]
    for k in range(1, order + 1):
        js = np.arange(k + 1)
        w = ((-1.0) ** js) * np.array([factorial(k) / (factorial(j) * factorial(k - j)) for j in js])
        offs = (k / 2 - js) * h
        pts = y[None, :] + offs[:, None] * v[None, :]
        out.append(float(np.dot(w, f(pts))) / h**k)
    return np.array(out)


def nondegeneracy_index(a, grid, mu_max, *, n_dirs=64, n_c=64, seed=0, method="cauchy", h=1e-4):
    """Index and amount of nondegeneracy ``(mu0, beta)`` of the map u -> a(u).

    ``a`` is a sequence of u-series (or a callable mapping points of shape
    (N, p) to values of shape (N, l)); ``grid`` holds points of C^p.  For
    every grid point y and sampled unit vector c, the directional derivatives
    of ``|(c, a(y))|^2`` along sampled real unit directions are computed up
    to ``mu_max``; beta(mu) is the minimum over (y, c) of the maximum over
    orders k <= mu of the largest directional derivative.
    """
    if callable(a):
        amap = a
        l = np.asarray(amap(np.atleast_2d(np.asarray(grid, np.complex128))[:1])).shape[-1]
    else:
        a = list(a)
        l = len(a)

        def amap(pts):
            pts = np.atleast_2d(pts)
            x0 = np.zeros((pts.shape[0], a[0].ring.n), np.complex128)
            return np.stack([s.evaluate(x0, pts) for s in a], axis=-1)

    grid = np.atleast_2d(np.asarray(grid, dtype=np.complex128))
    p = grid.shape[1]
    rng = np.random.default_rng(seed)
    dirs = _sample_sphere(rng, n_dirs, 2 * p)
    wdirs = dirs[:, :p] + 1j * dirs[:, p:]
    if l == 1:
        cs = np.ones((1, 1), np.complex128)
    else:
        cs = np.concatenate([np.eye(l, dtype=np.complex128), _sample_sphere(rng, n_c, l, True)])
    # best[k, y, c] = max over directions of |D^k |(c, a)|^2|
    best = np.zeros((mu_max + 1, grid.shape[0], cs.shape[0]))
    for yi, y in enumerate(grid):
        for w, v in zip(wdirs, dirs):
            if method == "cauchy":
                tc = _taylor_in_t(amap, y, w, mu_max)  # (mu+1, l)
                gd = tc @ cs.T  # (mu+1, nc): Taylor coefficients of (c, a)
                derivs = np.zeros((mu_max + 1, cs.shape[0]))
                for k in range(mu_max + 1):
                    acc = np.zeros(cs.shape[0], dtype=np.complex128)
                    for i in range(k + 1):
                        acc += gd[i] * np.conj(gd[k - i])
                    derivs[k] = np.abs(acc.real) * factorial(k)
            else:
                derivs = np.zeros((mu_max + 1, cs.shape[0]))
                yr = np.concatenate([y.real, y.imag])
                for ci, c in enumerate(cs):
                    def f(pts, c=c):
                        z = pts[:, :p] + 1j * pts[:, p:]
                        return np.abs(amap(z) @ c) ** 2
                    derivs[:, ci] = np.abs(_fd_derivatives(f, yr, v, mu_max, h))
            best[:, yi, :] = np.maximum(best[:, yi, :], derivs)
    if l >= 2:
        # some unit c is orthogonal to a(y), so the order-0 minimum is exactly 0
        best[0] = 0.0
    for mu in range(mu_max + 1):
        beta = float(np.min(np.max(best[: mu + 1], axis=0)))
        if beta > BETA_FLOOR:
            return mu, beta
    raise DegenerateUpToMuMax(f"beta({mu_max}) <= {BETA_FLOOR}")
