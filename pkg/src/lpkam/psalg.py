"""Truncated bi-graded power series in (x, u) with complex coefficients.

A series is ``f = sum_Q f_Q(u) x^Q`` where every ``f_Q`` is a Taylor
polynomial in ``(u - b)`` around a base point ``b``.  Terms are stored as
sorted arrays of additive exponent codes, so a product monomial has the sum
of the factor codes.  The ``terms`` dictionary view is keyed by
``(xexp, uexp)`` with ``uexp`` the exponent of ``(u - b)``.

Vector fields act on the x-variables only; fibered fields also carry
components along u and differentiate in u.
"""

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from . import _kernels
from .errors import (
    BasePointMismatch,
    DimensionMismatch,
    NotTangentToIdentity,
    TruncationExceeded,
)

PRUNE_RTOL = 1e-14
# order() of the zero series; larger than any admissible truncation degree
INFINITE_ORDER = 1 << 30


def glex_key(xexp, uexp=()):
    """Deterministic graded-lex sort key on (xexp, uexp)."""
    return (sum(xexp), tuple(-q for q in xexp), sum(uexp), tuple(-q for q in uexp))


def monomials(n, deg):
    """All exponent tuples of n variables with total degree ``deg``, graded-lex."""
    if n == 0:
        return [()] if deg == 0 else []
    out = []
    for combo in combinations_with_replacement(range(n), deg):
        e = [0] * n
        for v in combo:
            e[v] += 1
        out.append(tuple(e))
    out.sort(key=lambda e: tuple(-q for q in e))
    return out


def monomials_upto(n, deg):
    out = []
    for d in range(deg + 1):
        out.extend(monomials(n, d))
    return out


@dataclass(frozen=True)
class Ring:
    """Ambient data of a truncated algebra: dimensions, truncations, base point."""

    n: int
    p: int = 0
    xmax: int = 8
    umax: int = 2
    base: tuple = ()

    def __post_init__(self):
        if self.n < 0 or self.p < 0 or self.xmax < 0 or self.umax < 0:
            raise ValueError("dimensions and truncations must be nonnegative")
        base = tuple(complex(v) for v in self.base) if self.base else (0j,) * self.p
        if len(base) != self.p:
            raise DimensionMismatch(f"base point has {len(base)} entries, expected p={self.p}")
        object.__setattr__(self, "base", base)
        nbits = self.n * np.log2(self.xmax + 1) + self.p * np.log2(self.umax + 1)
        if nbits > 62:
            raise ValueError("truncation too large for 64-bit exponent codes")

    @cached_property
    def strides(self):
        xr, ur = self.xmax + 1, self.umax + 1
        xs = [xr**k for k in range(self.n)]
        top = xr**self.n
        us = [top * ur**k for k in range(self.p)]
        return np.array(xs + us, dtype=np.int64)

    @cached_property
    def radices(self):
        return np.array([self.xmax + 1] * self.n + [self.umax + 1] * self.p, dtype=np.int64)

    @cached_property
    def size(self):
        return comb(self.n + self.xmax, self.n) * comb(self.p + self.umax, self.p)

    @cached_property
    def basev(self):
        return np.array(self.base, dtype=np.complex128)

    def encode(self, xexp, uexp=()):
        xexp, uexp = tuple(xexp), tuple(uexp) if uexp is not None else ()
        if len(xexp) != self.n or len(uexp) != self.p:
            raise DimensionMismatch("exponent lengths do not match (n, p)")
        e = np.array(xexp + uexp, dtype=np.int64)
        return int(e @ self.strides) if e.size else 0

    def decode(self, codes):
        codes = np.asarray(codes, dtype=np.int64)
        if self.n + self.p == 0:
            return np.zeros((codes.size, 0), dtype=np.int64)
        return (codes[:, None] // self.strides[None, :]) % self.radices[None, :]

    def with_truncation(self, xmax=None, umax=None):
        return Ring(self.n, self.p, self.xmax if xmax is None else xmax,
                    self.umax if umax is None else umax, self.base)

    def with_base(self, base):
        return Ring(self.n, self.p, self.xmax, self.umax, tuple(base))

    # constructors
    def zero(self):
        return Series(self, np.empty(0, np.int64), np.empty(0, np.complex128))

    def const(self, c):
        return Series.build(self, np.array([0], np.int64), np.array([c], np.complex128))

    def one(self):
        return self.const(1.0)

    def monomial(self, xexp, uexp=None, coef=1.0):
        uexp = (0,) * self.p if uexp is None else uexp
        if sum(xexp) > self.xmax or sum(uexp) > self.umax:
            return self.zero()
        return Series.build(self, np.array([self.encode(xexp, uexp)], np.int64),
                            np.array([coef], np.complex128))

    def x(self, k):
        e = [0] * self.n
        e[k] = 1
        return self.monomial(e)

    def du_var(self, k):
        """The shifted variable ``u_k - b_k``."""
        e = [0] * self.p
        e[k] = 1
        return self.monomial((0,) * self.n, e)

    def u(self, k):
        """The coordinate function ``u_k = b_k + (u_k - b_k)``."""
        return self.const(self.base[k]) + self.du_var(k)

    def from_terms(self, terms):
        """Series from a mapping ``{(xexp, uexp): coef}`` (uexp may be omitted when p=0)."""
        codes, vals = [], []
        for key, c in terms.items():
            if self.p == 0 and (len(key) != 2 or not isinstance(key[0], tuple)):
                xexp, uexp = tuple(key), ()
            else:
                xexp, uexp = key
            if len(xexp) != self.n or len(uexp) != self.p:
                raise DimensionMismatch("term exponent lengths do not match (n, p)")
            if sum(xexp) > self.xmax or sum(uexp) > self.umax:
                continue
            codes.append(self.encode(xexp, uexp))
            vals.append(c)
        return Series.build(self, np.array(codes, np.int64), np.array(vals, np.complex128))

    def header(self):
        return {
            "n": self.n,
            "p": self.p,
            "xmax": self.xmax,
            "umax": self.umax,
            "base": [[float(b.real), float(b.imag)] for b in self.base],
        }


def _merge(a, b):
    """Common ring of two operands: tighter truncation, same dimensions and base."""
    if a is b or a == b:
        return a
    if a.n != b.n or a.p != b.p:
        raise DimensionMismatch(f"(n, p) = ({a.n}, {a.p}) vs ({b.n}, {b.p})")
    if a.base != b.base:
        raise BasePointMismatch("operands expanded around different base points")
    return Ring(a.n, a.p, min(a.xmax, b.xmax), min(a.umax, b.umax), a.base)


class Series:
    """Immutable truncated series; build instances through ``Series.build``."""

    __slots__ = ("ring", "codes", "vals", "_degs")

    def __init__(self, ring, codes, vals):
        self.ring = ring
        self.codes = codes
        self.vals = vals
        self._degs = None

    @classmethod
    def build(cls, ring, codes, vals, *, merged=False):
        """Canonical series: merge duplicate codes, truncate, prune small terms."""
        codes = np.asarray(codes, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.complex128)
        if not merged and codes.size:
            order = np.argsort(codes, kind="stable")
            codes, vals = codes[order], vals[order]
            if codes.size > 1 and np.any(codes[1:] == codes[:-1]):
                uniq, start = np.unique(codes, return_index=True)
                vals = np.add.reduceat(vals, start)
                codes = uniq
        if codes.size:
            mag = np.abs(vals)
            top = mag.max()
            keep = (mag > PRUNE_RTOL * top) & (mag > 0)
            if not keep.all():
                codes, vals = codes[keep], vals[keep]
        return cls(ring, codes, vals)

    # structure
    @property
    def degs(self):
        if self._degs is None:
            e = self.ring.decode(self.codes)
            n = self.ring.n
            xd = e[:, :n].sum(axis=1) if n else np.zeros(self.codes.size, np.int64)
            ud = e[:, n:].sum(axis=1) if self.ring.p else np.zeros(self.codes.size, np.int64)
            self._degs = (xd.astype(np.int64), ud.astype(np.int64))
        return self._degs

    def exps(self):
        return self.ring.decode(self.codes)

    @property
    def nnz(self):
        return int(self.codes.size)

    def is_zero(self):
        return self.codes.size == 0

    def __len__(self):
        return self.nnz

    @property
    def terms(self):
        e = self.exps()
        n = self.ring.n
        return {(tuple(int(v) for v in row[:n]), tuple(int(v) for v in row[n:])): complex(c)
                for row, c in zip(e, self.vals)}

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: glex_key(*kv[0]))

    def coefficient(self, xexp, uexp=None):
        uexp = (0,) * self.ring.p if uexp is None else uexp
        code = self.ring.encode(xexp, uexp)
        i = np.searchsorted(self.codes, code)
        if i < self.codes.size and self.codes[i] == code:
            return complex(self.vals[i])
        return 0j

    def value_at_base(self):
        """Constant coefficient, i.e. the value at x = 0, u = b."""
        if self.codes.size and self.codes[0] == 0:
            return complex(self.vals[0])
        return 0j

    def max_abs(self):
        return float(np.abs(self.vals).max()) if self.codes.size else 0.0

    def __repr__(self):
        parts = [f"({c.real:+.6g}{c.imag:+.6g}j)x^{q}(u-b)^{p}" for (q, p), c in self.sorted_terms()[:8]]
        more = "" if self.nnz <= 8 else f" ... [{self.nnz} terms]"
        return "Series(" + " ".join(parts) + more + ")"

    # algebra
    def _coerce(self, other):
        if isinstance(other, Series):
            ring = _merge(self.ring, other.ring)
            return ring, self.retruncate(ring), other.retruncate(ring)
        return None

    def retruncate(self, ring):
        """Re-encode into a ring with equal dimensions and tighter truncation."""
        if ring == self.ring:
            return self
        e = self.exps()
        n = self.ring.n
        xd = e[:, :n].sum(axis=1) if n else np.zeros(len(e), np.int64)
        ud = e[:, n:].sum(axis=1) if self.ring.p else np.zeros(len(e), np.int64)
        keep = (xd <= ring.xmax) & (ud <= ring.umax)
        codes = e[keep] @ ring.strides if e.shape[1] else np.zeros(int(keep.sum()), np.int64)
        return Series.build(ring, codes, self.vals[keep])

    def __add__(self, other):
        if not isinstance(other, Series):
            if other == 0:
                return self
            other = self.ring.const(other)
        ring, a, b = self._coerce(other)
        if a.is_zero():
            return b
        if b.is_zero():
            return a
        return Series.build(ring, np.concatenate([a.codes, b.codes]), np.concatenate([a.vals, b.vals]))

    __radd__ = __add__

    def __neg__(self):
        return Series(self.ring, self.codes, -self.vals)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Series):
            c = complex(other)
            if c == 0:
                return self.ring.zero()
            return Series(self.ring, self.codes, self.vals * c)
        ring, a, b = self._coerce(other)
        if a.is_zero() or b.is_zero():
            return ring.zero()
        xa, ua = a.degs
        xb, ub = b.degs
        codes, vals = _kernels.mul(a.codes, a.vals, xa, ua, b.codes, b.vals, xb, ub,
                                   ring.xmax, ring.umax, ring.size)
        return Series.build(ring, codes, vals, merged=True)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / complex(c))

    def _shift(self, stride, exp_col):
        e = self.exps()
        k = e[:, exp_col]
        keep = k > 0
        return Series.build(self.ring, self.codes[keep] - stride, self.vals[keep] * k[keep], merged=True)

    def dx(self, k):
        """Partial derivative in x_k."""
        if self.is_zero():
            return self
        return self._shift(self.ring.strides[k], k)

    def du(self, k):
        """Partial derivative in u_k."""
        if self.is_zero():
            return self
        col = self.ring.n + k
        return self._shift(self.ring.strides[col], col)

    def order(self):
        if self.is_zero():
            return INFINITE_ORDER
        return int(self.degs[0].min())

    def _select(self, mask):
        return Series(self.ring, self.codes[mask], self.vals[mask])

    def jet(self, k):
        """Terms of x-degree at most k."""
        if k < 0:
            return self.ring.zero()
        return self._select(self.degs[0] <= k)

    def xslice(self, lo, hi):
        xd = self.degs[0]
        return self._select((xd >= lo) & (xd <= hi))

    def ujet(self, k):
        return self._select(self.degs[1] <= k)

    def u_part(self):
        """Terms free of x (a function of u alone)."""
        return self._select(self.degs[0] == 0)

    def norm(self, rad):
        """Majorant norm ``sum_Q (sum_P |c_QP| t^|P|) r^|Q|``."""
        if isinstance(rad, PolyRadius):
            r, t = rad.r, rad.t
        else:
            r, t = rad
        if self.is_zero():
            return 0.0
        xd, ud = self.degs
        return float(np.sum(np.abs(self.vals) * np.power(float(r), xd) * np.power(float(t), ud)))

    def evaluate(self, x, u=None):
        """Evaluate at points; ``x`` has shape (npts, n) or (n,), ``u`` likewise with p."""
        x = np.asarray(x, dtype=np.complex128)
        single = x.ndim <= 1
        x = np.atleast_2d(x)
        npts = x.shape[0]
        if self.ring.p:
            if u is None:
                u = np.broadcast_to(self.ring.basev, (npts, self.ring.p))
            u = np.atleast_2d(np.asarray(u, dtype=np.complex128)) - self.ring.basev[None, :]
            u = np.broadcast_to(u, (npts, self.ring.p))
            pts = np.concatenate([x.reshape(npts, self.ring.n), u], axis=1)
        else:
            pts = x.reshape(npts, self.ring.n)
        out = _kernels.evaluate(self.exps(), self.vals, pts)
        return out[0] if single else out

    def to_json(self):
        terms = []
        for (q, p), c in self.sorted_terms():
            terms.append({"x": list(q), "u": list(p), "re": float(c.real), "im": float(c.imag)})
        return {"header": self.ring.header(), "terms": terms}

    @staticmethod
    def from_json(obj):
        h = obj["header"]
        ring = Ring(h["n"], h["p"], h["xmax"], h["umax"], tuple(complex(a, b) for a, b in h["base"]))
        return ring.from_terms({(tuple(t["x"]), tuple(t["u"])): complex(t["re"], t["im"]) for t in obj["terms"]})


def series_inverse(a):
    """Multiplicative inverse of a series with nonzero value at (0, b), truncated."""
    a0 = a.value_at_base()
    if a0 == 0:
        raise ZeroDivisionError("series vanishes at the base point")
    nil = (a - a0) * (1.0 / a0)
    total = a.ring.one()
    term = a.ring.one()
    for _ in range(a.ring.xmax + a.ring.umax + 1):
        term = -(term * nil)
        if term.is_zero():
            break
        total = total + term
    return total * (1.0 / a0)


@dataclass(frozen=True)
class PolyRadius:
    """Radius r of the x-polydisc and radius t of the u-ball around the base point."""

    r: float
    t: float

    def __post_init__(self):
        if not (self.r > 0 and self.t > 0):
            raise ValueError("radii must be positive")


# functional aliases matching the operation names
def add(a, b):
    return a + b


def mul(a, b):
    return a * b


def order(f):
    return f.order()


def jet(f, k):
    return f.jet(k)


def majorant_norm(f, rad):
    return f.norm(rad)


def _lie_apply(field_comps, derivs, f):
    out = f.ring.zero()
    for c, d in zip(field_comps, derivs):
        if c.is_zero():
            continue
        df = d(f)
        if not df.is_zero():
            out = out + c * df
    return out


def _bracket(A, B, derivs):
    out = []
    for Bi, Ai in zip(B, A):
        out.append(_lie_apply(A, derivs, Bi) - _lie_apply(B, derivs, Ai))
    return out


def _xderivs(ring):
    return [lambda f, k=k: f.dx(k) for k in range(ring.n)]


def _fderivs(ring):
    return _xderivs(ring) + [lambda f, k=k: f.du(k) for k in range(ring.p)]


class VectorField:
    """``sum_i comps[i] * d/dx_i`` with components in one ring."""

    __slots__ = ("comps",)

    def __init__(self, comps):
        comps = tuple(comps)
        if not comps:
            raise DimensionMismatch("a vector field needs at least one component")
        ring = comps[0].ring
        for c in comps[1:]:
            ring = _merge(ring, c.ring)
        if len(comps) != ring.n:
            raise DimensionMismatch(f"{len(comps)} components for n={ring.n}")
        self.comps = tuple(c.retruncate(ring) for c in comps)

    @classmethod
    def zero(cls, ring):
        return cls([ring.zero()] * ring.n)

    @classmethod
    def from_terms(cls, ring, terms):
        """From ``{i: {(xexp, uexp): coef}}``."""
        return cls([ring.from_terms(terms.get(i, {})) for i in range(ring.n)])

    @classmethod
    def diagonal(cls, ring, coeffs):
        """``sum_i coeffs[i] x_i d/dx_i`` with coeffs scalars or series."""
        return cls([ring.x(i) * c for i, c in enumerate(coeffs)])

    @property
    def ring(self):
        return self.comps[0].ring

    @property
    def n(self):
        return len(self.comps)

    def __getitem__(self, i):
        return self.comps[i]

    def __iter__(self):
        return iter(self.comps)

    def __add__(self, other):
        if isinstance(other, int) and other == 0:
            return self
        _check_n(self, other)
        return VectorField([a + b for a, b in zip(self.comps, other.comps)])

    __radd__ = __add__

    def __sub__(self, other):
        _check_n(self, other)
        return VectorField([a - b for a, b in zip(self.comps, other.comps)])

    def __neg__(self):
        return VectorField([-a for a in self.comps])

    def __mul__(self, c):
        return VectorField([a * c for a in self.comps])

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / complex(c))

    def is_zero(self):
        return all(c.is_zero() for c in self.comps)

    def order(self):
        return min(c.order() for c in self.comps)

    def jet(self, k):
        return VectorField([c.jet(k) for c in self.comps])

    def xslice(self, lo, hi):
        return VectorField([c.xslice(lo, hi) for c in self.comps])

    def retruncate(self, ring):
        return VectorField([c.retruncate(ring) for c in self.comps])

    def norm(self, rad):
        """Largest component majorant norm."""
        return max(c.norm(rad) for c in self.comps)

    def max_abs(self):
        return max(c.max_abs() for c in self.comps)

    def nnz(self):
        return sum(c.nnz for c in self.comps)

    def apply(self, f):
        """Lie derivative ``sum_i X_i df/dx_i``."""
        if f.ring.n != self.n:
            raise DimensionMismatch("function and field live in different dimensions")
        return _lie_apply(self.comps, _xderivs(self.ring), f)

    def bracket(self, other):
        _check_n(self, other)
        return VectorField(_bracket(self.comps, other.comps, _xderivs(self.ring)))

    def jacobian_apply(self, other):
        """``DX . Y`` (x-derivatives only)."""
        return VectorField([other.apply(c) for c in self.comps])

    def evaluate(self, x, u=None):
        return np.stack([c.evaluate(x, u) for c in self.comps], axis=-1)

    def terms(self):
        return [c.terms for c in self.comps]

    def to_json(self):
        return {"header": self.ring.header(),
                "comps": [[{"x": list(q), "u": list(p), "re": float(c.real), "im": float(c.imag)}
                           for (q, p), c in comp.sorted_terms()] for comp in self.comps]}

    def __repr__(self):
        return "VectorField(" + ", ".join(repr(c) for c in self.comps) + ")"


def _check_n(a, b):
    if a.n != b.n:
        raise DimensionMismatch(f"vector fields of dimension {a.n} and {b.n}")


def lie_bracket(X, Y):
    """``[X, Y]_i = X(Y_i) - Y(X_i)`` in the x-variables."""
    return X.bracket(Y)


def lie_derivative(X, f):
    return X.apply(f)


class FiberedField:
    """A field on (x, u)-space: x-components plus u-components."""

    __slots__ = ("xcomps", "ucomps")

    def __init__(self, xcomps, ucomps):
        self.xcomps = VectorField(xcomps) if not isinstance(xcomps, VectorField) else xcomps
        ring = self.xcomps.ring
        ucomps = tuple(ucomps)
        if len(ucomps) != ring.p:
            raise DimensionMismatch(f"{len(ucomps)} u-components for p={ring.p}")
        self.ucomps = tuple(c.retruncate(_merge(ring, c.ring)) for c in ucomps)

    @property
    def ring(self):
        return self.xcomps.ring

    def all_comps(self):
        return list(self.xcomps.comps) + list(self.ucomps)

    @classmethod
    def _from_all(cls, comps, n):
        return cls(VectorField(comps[:n]), comps[n:])

    def __add__(self, other):
        return FiberedField(self.xcomps + other.xcomps, [a + b for a, b in zip(self.ucomps, other.ucomps)])

    def __sub__(self, other):
        return FiberedField(self.xcomps - other.xcomps, [a - b for a, b in zip(self.ucomps, other.ucomps)])

    def __mul__(self, c):
        return FiberedField(self.xcomps * c, [a * c for a in self.ucomps])

    __rmul__ = __mul__

    def is_zero(self):
        return self.xcomps.is_zero() and all(c.is_zero() for c in self.ucomps)

    def apply(self, f):
        return _lie_apply(self.all_comps(), _fderivs(self.ring), f)

    def bracket(self, other):
        comps = _bracket(self.all_comps(), other.all_comps(), _fderivs(self.ring))
        return FiberedField._from_all(comps, self.ring.n)

    def jet(self, k):
        return FiberedField(self.xcomps.jet(k), [c.jet(k) for c in self.ucomps])


def pushforward(X, W, max_terms=None):
    """Lie series ``X + [W, X] + [W, [W, X]]/2 + ...`` (finite by truncation).

    This is the push-forward of X by the time-one flow of ``-W``; see
    ``flow_map`` for that diffeomorphism as a series map.
    """
    if W.xcomps.order() < 2:
        raise NotTangentToIdentity("generator must have x-order at least 2")
    total = X
    term = X
    limit = max_terms if max_terms is not None else X.ring.xmax + 2
    for k in range(1, limit + 1):
        term = W.bracket(term) * (1.0 / k)
        if term.is_zero():
            break
        total = total + term
    return total


def flow_map(W, t=1.0):
    """Coordinate functions of the time-t flow of a fibered (or plain) field.

    Returns the list ``exp(t L_W) z`` for every coordinate z of (x, u);
    for a plain VectorField only the x-coordinates are returned.
    """
    ring = W.ring
    if isinstance(W, FiberedField):
        coords = [ring.x(i) for i in range(ring.n)] + [ring.u(k) for k in range(ring.p)]
    else:
        coords = [ring.x(i) for i in range(ring.n)]
    out = []
    for z in coords:
        total = z
        term = z
        for k in range(1, ring.xmax + ring.umax + 2):
            term = W.apply(term) * (t / k)
            if term.is_zero():
                break
            total = total + term
        out.append(total)
    return out


def compose(f, maps):
    """Substitute ``x_i -> maps[i]`` in f (u is left unchanged).

    Each map must have x-order at least 1 so the result is well defined at
    the ring's truncation.
    """
    ring = _merge(f.ring, maps[0].ring)
    maps = [m.retruncate(ring) for m in maps]
    f = f.retruncate(ring)
    if f.is_zero():
        return f
    n = ring.n
    e = f.exps()
    groups = {}
    for row, code, val in zip(e, f.codes, f.vals):
        q = tuple(int(v) for v in row[:n])
        groups.setdefault(q, ([], []))
        groups[q][0].append(code - int(np.dot(row[:n], ring.strides[:n])))
        groups[q][1].append(val)
    memo = {(0,) * n: ring.one()}

    def power(q):
        if q in memo:
            return memo[q]
        j = max(i for i in range(n) if q[i] > 0)
        prev = list(q)
        prev[j] -= 1
        val = power(tuple(prev)) * maps[j]
        memo[q] = val
        return val

    out = ring.zero()
    for q in sorted(groups, key=glex_key):
        codes, vals = groups[q]
        coef = Series.build(ring, np.array(codes, np.int64), np.array(vals, np.complex128))
        out = out + power(q) * coef
    return out


def compose_xu(f, xmaps, umaps):
    """Substitute ``x_i -> xmaps[i]`` and ``u_k -> umaps[k]`` in f.

    ``umaps`` are full coordinate functions (their value at the origin is
    close to b); the substitution acts on the shifted variables ``u_k - b_k``.
    """
    g = compose(f, xmaps)
    ring = g.ring
    if ring.p == 0 or g.is_zero():
        return g
    du = [umaps[k].retruncate(_merge(ring, umaps[k].ring)) - ring.base[k] for k in range(ring.p)]
    ring = _merge(ring, du[0].ring)
    g = g.retruncate(ring)
    n = ring.n
    e = g.exps()
    groups = {}
    for row, code, val in zip(e, g.codes, g.vals):
        P = tuple(int(v) for v in row[n:])
        groups.setdefault(P, ([], []))
        groups[P][0].append(code - int(np.dot(row[n:], ring.strides[n:])))
        groups[P][1].append(val)
    memo = {(0,) * ring.p: ring.one()}

    def power(P):
        if P in memo:
            return memo[P]
        j = max(k for k in range(ring.p) if P[k] > 0)
        prev = list(P)
        prev[j] -= 1
        val = power(tuple(prev)) * du[j]
        memo[P] = val
        return val

    out = ring.zero()
    for P in sorted(groups, key=lambda P: (sum(P), P)):
        codes, vals = groups[P]
        coef = Series.build(ring, np.array(codes, np.int64), np.array(vals, np.complex128))
        out = out + coef * power(P)
    return out


def invert_map_xu(dx, du):
    """Displacements (E_x, E_u) inverting ``(x, u) -> (x + dx, u + du)``.

    Both displacements must have x-order at least 2.
    """
    ring = dx[0].ring
    n, p = ring.n, ring.p
    for c in list(dx) + list(du):
        if not c.is_zero() and c.order() < 2:
            raise NotTangentToIdentity("displacement must have x-order at least 2")
    ex = [ring.zero()] * n
    eu = [ring.zero()] * p
    for _ in range(ring.xmax + 1):
        xm = [ring.x(i) + ex[i] for i in range(n)]
        um = [ring.u(k) + eu[k] for k in range(p)]
        nx = [-compose_xu(c, xm, um) for c in dx]
        nu = [-compose_xu(c, xm, um) for c in du]
        delta = max([(a - b).max_abs() for a, b in zip(nx + nu, ex + eu)] or [0.0])
        scale = max([c.max_abs() for c in nx + nu] or [0.0])
        ex, eu = nx, nu
        if delta <= PRUNE_RTOL * max(1.0, scale):
            break
    return ex, eu


def compose_field(X, maps):
    return VectorField([compose(c, maps) for c in X.comps])


def identity_plus(U):
    ring = U.ring
    return [ring.x(i) + U[i] for i in range(ring.n)]


def invert_diffeo(U):
    """V with ``(Id + U) o (Id + V) = Id`` up to the x-truncation degree."""
    if not U.is_zero() and U.order() < 2:
        raise NotTangentToIdentity("displacement must have order at least 2")
    ring = U.ring
    V = VectorField.zero(ring)
    for _ in range(ring.xmax + 1):
        Vn = -compose_field(U, identity_plus(V))
        if (Vn - V).max_abs() <= PRUNE_RTOL * max(1.0, Vn.max_abs()):
            return Vn
        V = Vn
    return V


def pushforward_explicit(X, U):
    """``(D Phi . X) o Phi^{-1}`` for ``Phi = Id + U`` computed by substitution."""
    ring = X.ring
    phi = identity_plus(U)
    dphi_x = VectorField([X.apply(c) for c in phi])
    V = invert_diffeo(U)
    return compose_field(dphi_x, identity_plus(V))


def _resonant_rows(R):
    rows = getattr(R, "R", R)
    return np.atleast_2d(np.asarray(rows, dtype=np.int64))


def sigma_reduce(f, R, *, strict=False, quotients=False):
    """Canonical representative of f modulo the ideal (x^{R_i} - u_i).

    Every monomial divisible by some x^{R_i} is rewritten as
    ``x^{Q - R_i} u_i`` (with ``u_i = b_i + (u_i - b_i)``), scanning
    i = 1..p in ascending order until nothing is divisible.  With
    ``strict`` the rewrite refuses to drop u-degree beyond umax.
    With ``quotients`` also returns g_i with ``f - red = sum (x^{R_i} - u_i) g_i``.
    """
    ring = f.ring
    n, p = ring.n, ring.p
    if p == 0:
        return (f, []) if quotients else f
    rows = _resonant_rows(R)
    if rows.shape[1] != n or rows.shape[0] != p:
        raise DimensionMismatch("resonant rows do not match (p, n)")
    quots = [ring.zero() for _ in range(p)]
    cur = f
    while True:
        changed = False
        for i in range(p):
            if cur.is_zero():
                break
            e = cur.exps()
            mask = np.all(e[:, :n] >= rows[i][None, :], axis=1)
            if not mask.any():
                continue
            changed = True
            rcode = int(rows[i] @ ring.strides[:n])
            sel_codes = cur.codes[mask] - rcode
            sel_vals = cur.vals[mask]
            shifted = Series.build(ring, sel_codes, sel_vals)
            if quotients:
                quots[i] = quots[i] + shifted
            ud = e[mask][:, n:].sum(axis=1)
            top = ud >= ring.umax
            if strict and np.any(top & (np.abs(sel_vals) > 0)):
                raise TruncationExceeded("sigma reduction exceeds the u-truncation degree")
            up_codes = sel_codes[~top] + ring.strides[n + i]
            up_vals = sel_vals[~top]
            rest_codes = cur.codes[~mask]
            rest_vals = cur.vals[~mask]
            cur = Series.build(
                ring,
                np.concatenate([rest_codes, sel_codes, up_codes]),
                np.concatenate([rest_vals, sel_vals * ring.base[i], up_vals]),
            )
        if not changed:
            break
    if quotients:
        return cur, quots
    return cur


def restrict_sigma(f, R, *, strict=False):
    """Restriction to the graph u = pi(x), represented by the reduced form."""
    return sigma_reduce(f, R, strict=strict)


def sigma_reduce_field(X, R, *, strict=False, quotients=False):
    if not quotients:
        return VectorField([sigma_reduce(c, R, strict=strict) for c in X.comps])
    reds, quots = [], []
    for c in X.comps:
        r, q = sigma_reduce(c, R, strict=strict, quotients=True)
        reds.append(r)
        quots.append(q)
    p = X.ring.p
    gfields = [VectorField([quots[i][k] for i in range(X.n)]) for k in range(p)]
    return VectorField(reds), gfields


def pure_ring(ring, xmax=None):
    return Ring(ring.n, 0, ring.xmax if xmax is None else xmax, 0, ())


def substitute_pi(f, R, xmax=None):
    """Pure-x series obtained by setting u = pi(x) (so u - b = x^R - b)."""
    rows = _resonant_rows(R)
    ring = f.ring
    pr = pure_ring(ring, xmax)
    n, p = ring.n, ring.p
    if f.is_zero():
        return pr.zero()
    shifted = [pr.monomial(tuple(rows[k])) - ring.base[k] for k in range(p)]
    e = f.exps()
    out = pr.zero()
    groups = {}
    for row, val in zip(e, f.vals):
        key = tuple(int(v) for v in row[n:])
        groups.setdefault(key, {})[tuple(int(v) for v in row[:n])] = val
    powers = {}
    for P in sorted(groups, key=lambda P: (sum(P), P)):
        fp = pr.from_terms({q: c for q, c in groups[P].items()})
        if P not in powers:
            val = pr.one()
            for k, pk in enumerate(P):
                for _ in range(pk):
                    val = val * shifted[k]
            powers[P] = val
        out = out + fp * powers[P]
    return out


def substitute_pi_field(X, R, xmax=None):
    return VectorField([substitute_pi(c, R, xmax) for c in X.comps])


def embed_pure(f, ring):
    """A pure-x series viewed in a ring with u-variables (no u-dependence)."""
    if f.ring.p != 0 or f.ring.n != ring.n:
        raise DimensionMismatch("expected a pure-x series of matching dimension")
    e = f.exps()
    keep = e.sum(axis=1) <= ring.xmax if e.size else np.zeros(0, bool)
    codes = e[keep] @ ring.strides[: ring.n] if ring.n else np.zeros(int(keep.sum()), np.int64)
    return Series.build(ring, codes, f.vals[keep])


def embed_pure_field(X, ring):
    return VectorField([embed_pure(c, ring) for c in X.comps])
