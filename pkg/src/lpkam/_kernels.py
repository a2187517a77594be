"""Hot inner loops: sparse truncated products and polynomial evaluation.

Each kernel has a numba version and a pure numpy version with identical
results.  The numba path is used when numba imports cleanly and the
environment variable ``LPKAM_DISABLE_NUMBA`` is unset or ``0``.
"""

import os

import numpy as np

_DISABLED = os.environ.get("LPKAM_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by environment")
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# pairs materialized per chunk by the numpy product
_CHUNK = 1 << 22


def _reduce_sorted(codes, vals):
    """Merge duplicate codes of an unsorted pair list."""
    if codes.size == 0:
        return codes.astype(np.int64), vals.astype(np.complex128)
    uniq, inv = np.unique(codes, return_inverse=True)
    out = np.zeros(uniq.size, dtype=np.complex128)
    np.add.at(out, inv, vals)
    return uniq, out


def mul_numpy(ca, va, xa, ua, cb, vb, xb, ub, xmax, umax):
    if ca.size == 0 or cb.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.complex128)
    if ca.size > cb.size:
        ca, va, xa, ua, cb, vb, xb, ub = cb, vb, xb, ub, ca, va, xa, ua
    step = max(1, _CHUNK // cb.size)
    parts_c, parts_v = [], []
    for s in range(0, ca.size, step):
        sl = slice(s, s + step)
        ok = ((xa[sl, None] + xb[None, :]) <= xmax) & ((ua[sl, None] + ub[None, :]) <= umax)
        if not ok.any():
            continue
        c = (ca[sl, None] + cb[None, :])[ok]
        v = (va[sl, None] * vb[None, :])[ok]
        parts_c.append(c)
        parts_v.append(v)
    if not parts_c:
        return np.empty(0, np.int64), np.empty(0, np.complex128)
    return _reduce_sorted(np.concatenate(parts_c), np.concatenate(parts_v))


def eval_numpy(exps, coefs, pts):
    if coefs.size == 0:
        return np.zeros(pts.shape[0], dtype=np.complex128)
    mon = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
    return mon @ coefs


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _mul_nb(ca, va, xa, ua, cb, vb, xb, ub, xmax, umax, cap):
        na = ca.size
        nb = cb.size
        est = na * nb
        if est > cap:
            est = cap
        size = 16
        while size < 2 * est:
            size *= 2
        mask = size - 1
        keys = np.full(size, -1, dtype=np.int64)
        acc = np.zeros(size, dtype=np.complex128)
        used = 0
        for i in range(na):
            xi = xa[i]
            ui = ua[i]
            ci = ca[i]
            vi = va[i]
            for j in range(nb):
                if xi + xb[j] > xmax or ui + ub[j] > umax:
                    continue
                key = ci + cb[j]
                h = (key * 0x9E3779B97F4A7C15) & mask
                while True:
                    k = keys[h]
                    if k == key:
                        acc[h] += vi * vb[j]
                        break
                    if k == -1:
                        keys[h] = key
                        acc[h] = vi * vb[j]
                        used += 1
                        break
                    h = (h + 1) & mask
        out_c = np.empty(used, dtype=np.int64)
        out_v = np.empty(used, dtype=np.complex128)
        t = 0
        for h in range(size):
            if keys[h] != -1:
                out_c[t] = keys[h]
                out_v[t] = acc[h]
                t += 1
        order = np.argsort(out_c)
        return out_c[order], out_v[order]

    @numba.njit(cache=True)
    def _eval_nb(exps, coefs, pts):
        npts, d = pts.shape
        nt = coefs.size
        out = np.zeros(npts, dtype=np.complex128)
        for s in range(npts):
            tot = 0j
            for t in range(nt):
                m = coefs[t]
                for k in range(d):
                    e = exps[t, k]
                    z = pts[s, k]
                    for _ in range(e):
                        m *= z
                tot += m
            out[s] = tot
        return out


def mul(ca, va, xa, ua, cb, vb, xb, ub, xmax, umax, cap):
    """Truncated sparse product; returns sorted unique codes and values.

    Exponent codes are additive, so the code of a product monomial is the sum
    of the factor codes.  ``cap`` bounds the number of distinct output codes.
    """
    if HAVE_NUMBA:
        if ca.size == 0 or cb.size == 0:
            return np.empty(0, np.int64), np.empty(0, np.complex128)
        return _mul_nb(ca, va, xa, ua, cb, vb, xb, ub, int(xmax), int(umax), int(cap))
    return mul_numpy(ca, va, xa, ua, cb, vb, xb, ub, xmax, umax)


def evaluate(exps, coefs, pts):
    """Evaluate ``sum_t coefs[t] * prod_k pts[:, k] ** exps[t, k]``."""
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    coefs = np.ascontiguousarray(coefs, dtype=np.complex128)
    pts = np.ascontiguousarray(pts, dtype=np.complex128)
    if HAVE_NUMBA:
        return _eval_nb(exps, coefs, pts)
    return eval_numpy(exps, coefs, pts)
