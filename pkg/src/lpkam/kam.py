"""Diophantine schedules, radius ladders, the K_k filter and measure bounds.

All indices follow ``m = 2**k``.  Constants are evaluated exactly as the
formulas state; the only safety margins are the ones named below.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EpsilonTooLarge,
    NonPositiveDenominator,
    PreconditionViolated,
    ScheduleNotDiophantine,
)
from .psalg import PolyRadius
from .resonance import BETA_SAFETY, nonzero_weights_in, omega_S

DEFAULT_TERMS = 1000
DEFAULT_SUM_CAP = 50.0


@dataclass(frozen=True)
class DiophantineSchedule:
    """A nonincreasing sequence ``omega_k`` in (0, 1] plus gamma and cached sizes.

    ``omega_fn(k)`` gives omega_k for k >= 0.  ``sum_cap`` bounds the
    partial sums of ``-ln(omega_k) / 2**k`` over the first ``n_terms`` terms.
    """

    omega_fn: object
    gamma: float
    gamma_cap: float = 1.0
    c1: float = 1.0
    l: int = 1
    Lam: float = 1.0
    p: int = 1
    n: int = 1
    sum_cap: float = DEFAULT_SUM_CAP
    n_terms: int = DEFAULT_TERMS
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.gamma <= self.gamma_cap:
            raise ValueError(f"need 0 <= gamma <= gamma' (got {self.gamma}, {self.gamma_cap})")
        prev = math.inf
        for k in range(min(self.n_terms, 64)):
            w = self.omega(k)
            if not 0 < w <= 1:
                raise ScheduleNotDiophantine(f"omega_{k} = {w} not in (0, 1]")
            if w > prev * (1 + 1e-15):
                raise ScheduleNotDiophantine(f"omega is increasing at k = {k}")
            prev = w

    def omega(self, k):
        return float(self.omega_fn(k))

    @classmethod
    def constant(cls, gamma, **kw):
        return cls(lambda k: 1.0, gamma, label="constant", params={}, **kw)

    @classmethod
    def power(cls, gamma, c=1.0, tau=2.0, **kw):
        """``omega_k = c / (k+1)**tau``."""
        return cls(lambda k: c / (k + 1) ** tau, gamma, label="power", params={"c": c, "tau": tau}, **kw)

    @classmethod
    def geometric(cls, gamma, c=1.0, sigma=1.0, **kw):
        """``omega_k = c * 2**(-sigma k)``."""
        return cls(lambda k: c * 2.0 ** (-sigma * k), gamma, label="geometric",
                   params={"c": c, "sigma": sigma}, **kw)

    @classmethod
    def from_list(cls, values, gamma, **kw):
        vals = [float(v) for v in values]

        def fn(k):
            return vals[k] if k < len(vals) else vals[-1]

        return cls(fn, gamma, label="list", params={"values": vals}, **kw)

    def with_gamma(self, gamma):
        return DiophantineSchedule(self.omega_fn, gamma, max(self.gamma_cap, gamma), self.c1, self.l,
                                   self.Lam, self.p, self.n, self.sum_cap, self.n_terms, self.label,
                                   self.params)

    def partial_sums(self, kmax=None):
        kmax = self.n_terms if kmax is None else kmax
        acc, out = 0.0, []
        for k in range(kmax):
            acc += -math.log(self.omega(k)) / 2.0**k
            out.append(acc)
        return out

    def check_sums(self, kmax=None):
        sums = self.partial_sums(kmax)
        for k, s in enumerate(sums):
            if s > self.sum_cap:
                raise ScheduleNotDiophantine(f"partial sum {s:.3e} exceeds cap {self.sum_cap} at k = {k}")
        return sums[-1] if sums else 0.0

    def step_constants(self, k, r=None):
        out = {"k": k, "t_m": t_m(k, self), "gamma_k": gamma_k(k, self), "omega_next": self.omega(k + 1)}
        th, radii = theta_and_radii(k, 1.0 if r is None else r, self)
        out["theta_k"] = th
        if r is not None:
            out["radii"] = list(radii)
        return out

    def to_json(self):
        return {"preset": self.label, "params": self.params, "gamma": self.gamma,
                "gamma_cap": self.gamma_cap, "c1": self.c1, "l": self.l, "Lambda": self.Lam,
                "p": self.p, "n": self.n, "sum_cap": self.sum_cap, "n_terms": self.n_terms}


def t_m(k, sched):
    """``gamma omega_{k+1} / (2 l Lambda (2m+1))``."""
    m = 2**k
    return sched.gamma * sched.omega(k + 1) / (2 * sched.l * sched.Lam * (2 * m + 1))


def gamma_k(k, sched):
    """``(c1 / (gamma omega_{k+1})**2) ** (-1/m)`` clamped to at most 1."""
    m = 2**k
    q = (sched.gamma * sched.omega(k + 1)) ** 2 / sched.c1
    if q <= 0:
        return 0.0
    return min(1.0, math.exp(math.log(q) / m))


def theta_and_radii(k, r, sched):
    """``theta_k = gamma_k m**(-2/m)`` and ``r_i = theta_k**i r`` for i = 1..5."""
    if not 0.5 < r <= 1:
        raise PreconditionViolated(f"radius r = {r} outside (1/2, 1]")
    m = 2**k
    th = gamma_k(k, sched) * m ** (-2.0 / m)
    return th, tuple(th**i * r for i in range(1, 6))


def _log_ratio(k, sched):
    """``ln(R_{k+1} / R_k) = 5 ln gamma_k - (10/m) ln m``."""
    m = 2.0**k
    g = gamma_k(k, sched)
    lg = -math.inf if g == 0 else math.log(g)
    return 5 * lg - 10.0 * k * math.log(2.0) / m


def radii_limit(R0, k_start, k_max, sched):
    """Radii ``R_{k+1} = gamma_k^5 m^(-10/m) R_k``, a lower bound on the limit and k1.

    The tail product beyond k_max is evaluated term by term up to the
    schedule's ``n_terms``; terms past that are below double precision.
    """
    sched.check_sums(k_max + 1)
    logs = [_log_ratio(k, sched) for k in range(k_start, max(sched.n_terms, k_max + 1))]
    seq = [R0]
    for k in range(k_start, k_max):
        seq.append(seq[-1] * math.exp(logs[k - k_start]))
    # suffix sums of log ratios: log of the product from k onwards
    suffix = np.cumsum(np.array(logs[::-1]))[::-1]
    tail = suffix[k_max - k_start] if k_max - k_start < len(suffix) else 0.0
    limit = seq[-1] * math.exp(tail)
    k1 = None
    for k in range(k_start, k_max + 1):
        if suffix[k - k_start] > math.log(0.5):
            k1 = k
            break
    return seq, limit, k1


def tail_ratios(k1, k_max, sched):
    """``prod_{j=k1}^{k-1} R_{j+1}/R_j`` for k in (k1, k_max]."""
    out, acc = [], 0.0
    for k in range(k1, k_max):
        acc += _log_ratio(k, sched)
        out.append(math.exp(acc))
    return out


def epsilon_vois_check(sched, k_max):
    """Rows ``(k, t_{2m} + eps, t_m, ok)`` with ``eps = gamma omega_{k+1} / (24 l Lambda (2m+1))``.

    Also returns the first k from which every row holds (None if none).
    """
    rows = []
    for k in range(k_max + 1):
        m = 2**k
        eps = sched.gamma * sched.omega(k + 1) / (24 * sched.l * sched.Lam * (2 * m + 1))
        lhs = t_m(k + 1, sched) + eps
        rhs = t_m(k, sched)
        rows.append((k, lhs, rhs, lhs < rhs))
    threshold = None
    for k in range(k_max, -1, -1):
        if not rows[k][3]:
            break
        threshold = k
    return rows, threshold


@dataclass
class CompactGrid:
    """Cell-centred uniform grid over a product of rectangles in C^p.

    ``bounds[k] = (re_lo, re_hi, im_lo, im_hi)`` for coordinate k.
    """

    points: np.ndarray
    h: float
    bounds: tuple
    alive: np.ndarray = None
    untrusted: np.ndarray = None
    worst: np.ndarray = None
    offending: list = None
    stages: list = field(default_factory=list)

    def __post_init__(self):
        npts = self.points.shape[0]
        if self.alive is None:
            self.alive = np.ones(npts, bool)
        if self.untrusted is None:
            self.untrusted = np.zeros(npts, bool)
        if self.worst is None:
            self.worst = np.full(npts, np.inf)
        if self.offending is None:
            self.offending = [None] * npts

    @classmethod
    def rectangle(cls, bounds, h):
        axes = []
        for lo_r, hi_r, lo_i, hi_i in bounds:
            nr = max(1, int(round((hi_r - lo_r) / h)))
            ni = max(1, int(round((hi_i - lo_i) / h)))
            axes.append(lo_r + h * (np.arange(nr) + 0.5))
            axes.append(lo_i + h * (np.arange(ni) + 0.5))
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = [m.ravel() for m in mesh]
        pts = np.stack([flat[2 * k] + 1j * flat[2 * k + 1] for k in range(len(bounds))], axis=1)
        return cls(pts, float(h), tuple(tuple(b) for b in bounds))

    @property
    def p(self):
        return self.points.shape[1]

    @property
    def cell(self):
        return self.h ** (2 * self.p)

    def measure(self, mask=None):
        mask = self.alive if mask is None else mask
        return float(np.count_nonzero(mask)) * self.cell

    def total_measure(self):
        return self.points.shape[0] * self.cell

    def copy(self):
        return CompactGrid(self.points, self.h, self.bounds, self.alive.copy(), self.untrusted.copy(),
                           self.worst.copy(), list(self.offending), list(self.stages))

    def csv_rows(self):
        header = []
        for k in range(self.p):
            header += [f"re_b{k + 1}", f"im_b{k + 1}"]
        header += ["alive", "untrusted", "worst_divisor", "offending_Q", "offending_i"]
        rows = [header]
        for t in range(self.points.shape[0]):
            row = []
            for k in range(self.p):
                row += [repr(float(self.points[t, k].real)), repr(float(self.points[t, k].imag))]
            off = self.offending[t]
            row += [int(self.alive[t]), int(self.untrusted[t]),
                    repr(float(self.worst[t])) if np.isfinite(self.worst[t]) else "inf",
                    "" if off is None else " ".join(str(q) for q in off[0]),
                    "" if off is None else str(off[1])]
            rows.append(row)
        return rows


def evaluate_a(a, pts):
    """Values (N, l) of u-series coefficients at points in C^p."""
    pts = np.atleast_2d(np.asarray(pts, np.complex128))
    n = a[0].ring.n
    x0 = np.zeros((pts.shape[0], n), np.complex128)
    return np.stack([c.evaluate(x0, pts) for c in a], axis=1)


def filter_K(grid, a, k, sched, S, *, window="dyadic", trust_radius=None, base=None):
    """Kill every alive point where some weight in the window has ``|A(b)| < gamma omega_{k+1}``.

    ``a`` is a state (its coefficients are used) or a tuple of u-series.
    Points farther than ``trust_radius`` from the expansion base are only
    flagged untrusted.  Returns a new grid.
    """
    coeffs = a.a if hasattr(a, "a") else tuple(a)
    out = grid.copy()
    if window == "dyadic":
        lo, hi = 2**k + 1, 2 ** (k + 1)
    else:
        lo, hi = 2, 2**k
    weights = nonzero_weights_in(S, max(lo, 2), hi) if hi >= max(lo, 2) else []
    thr = sched.gamma * sched.omega(k + 1)
    if weights:
        wv = np.array([w.vals for w in weights], np.complex128)
        idx = np.flatnonzero(out.alive)
        vals = evaluate_a(coeffs, grid.points[idx])
        worst = np.full(idx.size, np.inf)
        j = np.zeros(idx.size, np.int64)
        step = max(1, 2**22 // max(idx.size, 1))
        for c0 in range(0, len(weights), step):
            A = np.abs(vals @ wv[c0:c0 + step].T)
            jc = np.argmin(A, axis=1)
            wc = A[np.arange(idx.size), jc]
            better = wc < worst
            worst[better] = wc[better]
            j[better] = jc[better] + c0
        better = worst < out.worst[idx]
        out.worst[idx[better]] = worst[better]
        for t in np.flatnonzero(better):
            out.offending[idx[t]] = weights[j[t]].source
        dead = worst < thr
        out.alive[idx[dead]] = False
    if trust_radius is not None:
        b0 = np.asarray(coeffs[0].ring.base if base is None else base, np.complex128)
        dist = np.max(np.abs(grid.points - b0[None, :]), axis=1)
        out.untrusted |= dist > trust_radius
    out.stages.append({"k": k, "threshold": thr, "weights": len(weights),
                       "alive": int(np.count_nonzero(out.alive)), "window": [lo, hi]})
    return out


def disc_resolution(grid, perimeter):
    """Grid resolution for a set with the given boundary length: ``perimeter h / mes(K)``."""
    return perimeter * grid.h / grid.total_measure()


def strictly_diophantine_check(sched, S, mu0, k_max, *, k_start=1):
    """``(decreasing, M_{w,w(S),2/mu0}, M_{w,w(S)})`` over ``k_start..k_max``.

    ``decreasing`` holds when the sequence is nonincreasing from some index
    on and its last value is below its first; this certifies the observed
    range only.
    """
    n = S.n
    seq, ratios = [], []
    for k in range(k_start, k_max + 1):
        r = sched.omega(k) / omega_S(S, k)
        ratios.append(r)
        seq.append((2**k + n + 1) ** (n + 1) * _ratio_power(r, mu0))
    m_two = max(seq)
    m_one = max(ratios)
    tail_dec = all(seq[i + 1] <= seq[i] for i in range(len(seq) // 2, len(seq) - 1))
    decreasing = tail_dec and (len(seq) == 1 or seq[-1] < seq[0])
    return decreasing, m_two, m_one, seq


def _ratio_power(r, mu0):
    """``r ** (2/mu0)``, read as its limit when mu0 = 0."""
    if mu0 > 0:
        return r ** (2.0 / mu0)
    return 0.0 if r < 1 else (1.0 if r == 1 else math.inf)


def russmann_constant(mu0, n_real):
    """``B = 3 (2 pi e)**(n_real/2) (mu0+1)**(mu0+2) / (mu0+1)!``."""
    return 3 * (2 * math.pi * math.e) ** (n_real / 2) * (mu0 + 1) ** (mu0 + 2) / math.factorial(mu0 + 1)


def russmann_measure_bound(eps, beta, mu0, n_real, d, vartheta, g_norm):
    """Sublevel-set measure bound ``B d^(n-1) (1/sqrt n + 2d + d/theta) (eps/beta)^(1/mu0) g / beta``."""
    if eps < 0 or eps > beta / (2 * mu0 + 2):
        raise EpsilonTooLarge(f"eps = {eps} outside [0, beta/(2 mu0 + 2)] = [0, {beta / (2 * mu0 + 2)}]")
    if eps == 0:
        return 0.0
    if mu0 == 0:
        # |g| >= beta everywhere, so the sublevel set is empty for eps < beta
        return 0.0
    B = russmann_constant(mu0, n_real)
    geo = d ** (n_real - 1) * (1 / math.sqrt(n_real) + 2 * d + d / vartheta)
    return B * geo * (eps / beta) ** (1.0 / mu0) * g_norm / beta


def gamma_star(eps_star, M, a1, a2, mu0, n, M_ratio, M_weighted, beta):
    """Largest gamma for which the excluded-measure estimate applies."""
    den = M * ((4 + n) ** n * a2 - (n + 1) * a1 + n / 4.0 * M_weighted)
    if den <= 0:
        raise NonPositiveDenominator(f"bracketed combination is {den:.3e}")
    first = (eps_star * math.factorial(n - 1) / den) ** (mu0 / 2.0)
    second = math.sqrt(beta / (2 * mu0 + 2)) / M_ratio
    return min(first, second)


def measure_constant_M(mu0, n, d, vartheta, beta, g_norm):
    """``M = B d^(2n-1) (1/sqrt(2n) + 2d + d/theta) beta^(-1/mu0 - 1) g_norm`` with B at real dim 2n."""
    B = russmann_constant(mu0, 2 * n)
    return B * d ** (2 * n - 1) * (1 / math.sqrt(2 * n) + 2 * d + d / vartheta) \
        * beta ** (-1.0 / max(mu0, 1) - 1) * g_norm


def c1_constant(n, p, l, m_r, gamma_cap):
    """``4 (gamma'/2 + p n l m_r)``."""
    return 4 * (gamma_cap / 2.0 + p * n * l * m_r)


def working_m_r(S, R, r):
    """``max_j |S_j|_r * |D pi|_r`` at a polydisc radius r (u-free quantities)."""
    s_norm = max(float(np.max(np.abs(S.lam[j]))) * r for j in range(S.l))
    dpi = max(float(R.R[k, i]) * r ** (int(R.R[k].sum()) - 1) for k in range(R.p) for i in range(R.n)
              if R.R[k, i])
    return s_norm * dpi


def linv_norm(S):
    """Max-entry norm of the inverse of the pivoted l x l block of the eigenvalue matrix."""
    from .normalform import _pivot_columns

    cols = _pivot_columns(S)
    return float(np.abs(np.linalg.inv(S.lam[:, cols])).max())


def norm_ball_checks(state, b, k, r, sched, prev_nf=None):
    """Norms at radii ``(r, t_m)`` and the ball memberships of the induction."""
    m = 2**k
    t = t_m(k, sched)
    rad = PolyRadius(r, t)
    nf = state.nf
    ring = state.ring
    nf_norm = nf.norm(rad)
    dnf = [sum_field_du(nf, q) for q in range(ring.p)]
    dnf_norm = max([f.norm(rad) for f in dnf] or [0.0])
    rem_norm = state.remainder.norm(rad)
    l = state.S.l
    li = linv_norm(state.S)
    da_direct = max([state.a[j].du(q).norm(rad) for j in range(l) for q in range(ring.p)] or [0.0])
    out = {
        "k": k, "m": m, "r": r, "t_m": t, "base": [[float(v.real), float(v.imag)] for v in ring.base],
        "nf_norm": nf_norm, "du_nf_norm": dnf_norm, "remainder_norm": rem_norm,
        "nf_ball": nf_norm < 1 - 1.0 / m**3, "nf_ball_threshold": 1 - 1.0 / m**3,
        "remainder_ball": rem_norm < 2**5 * ring.n / m**4, "remainder_ball_threshold": 2**5 * ring.n / m**4,
        "linv_norm": li, "eta": 1.0 / (2 * l * li),
        "da_direct": da_direct, "da_transferred": 2 * l * li * dnf_norm,
        "da_bounded": da_direct <= 1.0,
    }
    if prev_nf is not None:
        out["nf_step_norm"] = (nf - prev_nf).norm(rad)
        out["a_step_bound"] = 2 * l * li * out["nf_step_norm"]
    return out


def sum_field_du(X, q):
    from .psalg import VectorField

    return VectorField([c.du(q) for c in X.comps])


def beta_for_measure(beta):
    """Amount of nondegeneracy with the sampling safety factor applied."""
    return BETA_SAFETY * beta
