"""Command line front end: problem files in, deterministic reports out.

Exit codes: 0 success, 1 other library error, 2 schema or input error,
3 empty invariant ring, 4 zero small divisor, 5 perturbation not good.
"""

import argparse
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import _kernels, kam
from .errors import (
    DegenerateUpToMuMax,
    DimensionMismatch,
    EmptyRing,
    LPKamError,
    NotGoodPerturbation,
    SchemaError,
    ZeroSmallDivisor,
)
from .normalform import good_perturbation_check, newton_step
from .psalg import Ring, VectorField, pure_ring
from .resonance import (
    LinearMorphism,
    ResonantStructure,
    first_integral_basis,
    nondegeneracy_index,
    nonzero_weights_in,
    omega_S,
    parse_entry,
)
from .verify import Scenario, conjugacy_residual, invariant_residual, scenario_hamiltonian, scenario_volume

SCHEMA_ID = "lpkam/problem@1"

_real = {"type": ["number", "string"]}
_coef = {"oneOf": [_real, {"type": "array", "items": _real, "minItems": 2, "maxItems": 2}]}
_exps = {"type": "array", "items": {"type": "integer", "minimum": 0}}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


PROBLEM_SCHEMA = _obj({
    "schema": {"const": SCHEMA_ID},
    "name": {"type": "string"},
    "dims": _obj({k: {"type": "integer", "minimum": 1} for k in ("n", "p", "l")}, ("n", "p", "l")),
    "morphism": {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _coef}},
    "resonant_rows": {"type": "array", "items": _exps},
    "a": {"type": "array", "items": {"type": "array", "items": _obj({"u": _exps, "c": _coef}, ("u", "c"))}},
    "perturbation": {"type": "array", "items": _obj({"d": {"type": "integer", "minimum": 0}, "x": _exps,
                                                     "c": _coef}, ("d", "x", "c"))},
    "base": {"type": "array", "items": _coef},
    "order": {"type": "integer", "minimum": 1},
    "truncation": _obj({"xmax": {"type": "integer", "minimum": 1}, "umax": {"type": "integer", "minimum": 0}},
                       ("xmax", "umax")),
    "schedule": _obj({
        "preset": {"enum": ["constant", "power", "geometric", "list"]},
        "gamma": {"type": "number", "minimum": 0},
        "gamma_cap": {"type": "number", "exclusiveMinimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "tau": {"type": "number", "minimum": 0},
        "sigma": {"type": "number", "minimum": 0},
        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "r": {"type": "number"},
    }, ("preset", "gamma")),
    "resonance": _obj({"degree_bound": {"type": "integer", "minimum": 1},
                       "window": {"enum": ["dyadic", "intro"]}}),
    "grid": _obj({"bounds": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                        "minItems": 4, "maxItems": 4}},
                  "h": {"type": "number", "exclusiveMinimum": 0}}, ("bounds", "h")),
    "verify": _obj({"rho": {"type": "number", "exclusiveMinimum": 0}, "T": {"type": "number", "exclusiveMinimum": 0},
                    "tol": {"type": "number", "exclusiveMinimum": 0},
                    "samples": {"type": "integer", "minimum": 1},
                    "residual_tol": {"type": "number", "exclusiveMinimum": 0}}),
    "measure": _obj({"mu_max": {"type": "integer", "minimum": 0},
                     "eps_star": {"type": "number", "exclusiveMinimum": 0},
                     "vartheta": {"type": "number", "exclusiveMinimum": 0},
                     "k_max": {"type": "integer", "minimum": 1},
                     "sample_h": {"type": "number", "exclusiveMinimum": 0}}),
}, ("schema", "dims", "morphism", "a", "truncation", "schedule"))


# problem files

def load_problem(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    validate_problem(data)
    return data


def validate_problem(data):
    try:
        jsonschema.validate(data, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from exc
    n, p, l = (data["dims"][k] for k in ("n", "p", "l"))
    lam = data["morphism"]
    if len(lam) != l:
        raise SchemaError(f"morphism has {len(lam)} rows, dims.l = {l}")
    if any(len(r) != n for r in lam):
        raise SchemaError(f"every morphism row needs n = {n} entries")
    if len(data["a"]) != l:
        raise SchemaError(f"a lists {len(data['a'])} coefficients, dims.l = {l}")
    for j, terms in enumerate(data["a"]):
        for t in terms:
            if len(t["u"]) != p:
                raise SchemaError(f"a[{j}]: u-exponent {t['u']} needs p = {p} entries")
    if "resonant_rows" in data:
        rows = data["resonant_rows"]
        if len(rows) != p or any(len(r) != n for r in rows):
            raise SchemaError(f"resonant_rows must be a {p} x {n} matrix")
    for t in data.get("perturbation", []):
        if t["d"] >= n or len(t["x"]) != n:
            raise SchemaError(f"perturbation term {t} does not fit n = {n}")
        if sum(t["x"]) < 2:
            raise SchemaError(f"perturbation term {t} has degree < 2; the integrable part carries the linear terms")
    if "base" in data and len(data["base"]) != p:
        raise SchemaError(f"base needs p = {p} entries")
    if "grid" in data and len(data["grid"]["bounds"]) != p:
        raise SchemaError(f"grid.bounds needs p = {p} rectangles")
    tr = data["truncation"]
    if data.get("order", 1) > tr["xmax"]:
        raise SchemaError(f"order {data['order']} exceeds truncation.xmax = {tr['xmax']}")
    for e in lam:
        for v in e:
            try:
                parse_entry(v)
            except (ValueError, ZeroDivisionError) as exc:
                raise SchemaError(f"bad morphism entry {v!r}: {exc}") from exc


def _coef_value(v):
    return parse_entry(v)[0]


def _coef_json(c):
    c = complex(c)
    return float(c.real) if c.imag == 0 else [float(c.real), float(c.imag)]


def build_morphism(data, exact=False):
    try:
        S = LinearMorphism(data["morphism"])
    except (DimensionMismatch, ValueError, TypeError) as exc:
        raise SchemaError(f"morphism: {exc}") from exc
    if exact and S.float_mode:
        raise SchemaError("--exact-resonance needs rational (or Gaussian rational) eigenvalue entries")
    return S


def build_resonant(data, S):
    if "resonant_rows" in data:
        try:
            return ResonantStructure(data["resonant_rows"], S)
        except ValueError as exc:
            raise SchemaError(f"resonant_rows: {exc}") from exc
    bound = data.get("resonance", {}).get("degree_bound", 12)
    R = first_integral_basis(S, bound)
    if R.p != data["dims"]["p"]:
        raise SchemaError(f"computed {R.p} resonant generators, dims.p = {data['dims']['p']}")
    return R


def parse_base(text, p):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise SchemaError(f"--base: {exc}") from exc
    if len(vals) != 2 * p:
        raise SchemaError(f"--base needs {p} re,im pairs, got {len(vals)} numbers")
    return tuple(complex(vals[2 * k], vals[2 * k + 1]) for k in range(p))


def build_scenario(data, base=None, exact=False):
    """A Scenario from a validated problem dict, expanded around ``base``."""
    n, p = data["dims"]["n"], data["dims"]["p"]
    S = build_morphism(data, exact)
    R = build_resonant(data, S)
    if base is None:
        base = tuple(_coef_value(v) for v in data.get("base", [0] * p))
    tr = data["truncation"]
    ring = Ring(n, p, tr["xmax"], tr["umax"], tuple(base))
    a_terms = [[(tuple(t["u"]), _coef_value(t["c"])) for t in terms] for terms in data["a"]]

    def a_builder(rg):
        out = []
        for terms in a_terms:
            acc = rg.zero()
            for e, c in terms:
                mono = rg.one()
                for k, d in enumerate(e):
                    for _ in range(d):
                        mono = mono * rg.u(k)
                acc = acc + mono * c
            out.append(acc)
        return out

    pr = pure_ring(ring)
    comps = [{} for _ in range(n)]
    for t in data.get("perturbation", []):
        key = tuple(t["x"])
        comps[t["d"]][key] = comps[t["d"]].get(key, 0) + _coef_value(t["c"])
    P = VectorField([pr.from_terms(c) for c in comps])
    m0 = max(1, P.order() - 1) if not P.is_zero() else 1
    return Scenario(data.get("name", "problem"), S, R, ring, a_builder, P, m0, {})


def scenario_problem(scn, *, order=16, base=None, grid=None, verify=None):
    """Problem dict describing a Scenario (used by the ``scenario`` subcommand)."""
    zero_ring = Ring(scn.ring.n, scn.ring.p, scn.ring.xmax, scn.ring.umax, (0j,) * scn.ring.p)
    a_terms = []
    for c in scn.a_builder(zero_ring):
        a_terms.append([{"u": list(pe), "c": _coef_json(v)} for (_, pe), v in c.sorted_terms()])
    pert = []
    for d, comp in enumerate(scn.perturbation.comps):
        for (q, _), v in comp.sorted_terms():
            pert.append({"d": d, "x": list(q), "c": _coef_json(v)})
    p = scn.R.p
    return {
        "schema": SCHEMA_ID,
        "name": scn.name,
        "dims": {"n": scn.S.n, "p": p, "l": scn.S.l},
        "morphism": scn.S.to_json(),
        "resonant_rows": scn.R.to_json(),
        "a": a_terms,
        "perturbation": pert,
        "base": [_coef_json(v) for v in (base if base is not None else (0.0,) * p)],
        "order": order,
        "truncation": {"xmax": scn.ring.xmax, "umax": scn.ring.umax},
        "schedule": {"preset": "constant", "gamma": 1e-3, "gamma_cap": 1.0, "r": 0.75},
        "resonance": {"degree_bound": 12, "window": "dyadic"},
        "grid": grid or {"bounds": [[-1.0, 1.0, -1.0, 1.0]] * p, "h": 0.05},
        "verify": verify or {"rho": 0.1, "T": 1.0, "tol": 1e-12, "samples": 8, "residual_tol": 1e-9},
        "measure": {"mu_max": 4, "eps_star": 0.1, "vartheta": 1.0, "k_max": 4, "sample_h": 0.5},
    }


def build_schedule(data, S, R, gamma=None):
    blk = data["schedule"]
    g = blk["gamma"] if gamma is None else gamma
    cap = max(blk.get("gamma_cap", 1.0), g)
    r = blk.get("r", 0.75)
    m_r = kam.working_m_r(S, R, r)
    c1 = kam.c1_constant(S.n, R.p, S.l, m_r, cap)
    kw = dict(gamma_cap=cap, c1=c1, l=S.l, Lam=S.Lambda, p=R.p, n=S.n)
    preset = blk["preset"]
    if preset == "constant":
        sched = kam.DiophantineSchedule.constant(g, **kw)
    elif preset == "power":
        sched = kam.DiophantineSchedule.power(g, c=blk.get("c", 1.0), tau=blk.get("tau", 2.0), **kw)
    elif preset == "geometric":
        sched = kam.DiophantineSchedule.geometric(g, c=blk.get("c", 1.0), sigma=blk.get("sigma", 1.0), **kw)
    else:
        if "values" not in blk:
            raise SchemaError("schedule preset 'list' needs values")
        sched = kam.DiophantineSchedule.from_list(blk["values"], g, **kw)
    return sched, r, m_r


# output

def _clean(obj):
    """JSON-safe copy: complex as [re, im], non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(obj.real), _clean(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


class Output:
    def __init__(self, out):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)

    def json(self, name, obj):
        (self.dir / name).write_text(dumps(obj))

    def csv(self, name, rows):
        path = self.dir / "stages" / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)


def _header(data, args, command):
    return {"command": command, "problem": data.get("name", "problem"), "schema": SCHEMA_ID,
            "seed": args.seed}


# subcommands

def cmd_resonances(data, args, out):
    S = build_morphism(data, args.exact_resonance)
    kmax = args.kmax or 3
    window = data.get("resonance", {}).get("window", "dyadic")
    bound = data.get("resonance", {}).get("degree_bound", 12)
    report = _header(data, args, "resonances")
    report["float_resonance_mode"] = S.float_mode
    report["morphism"] = S.to_json()
    try:
        R = first_integral_basis(S, bound)
        report["generators"] = R.to_json()
    except EmptyRing:
        if not args.allow_trivial_ring:
            raise
        report["generators"] = []
    report["degree_bound"] = bound
    table, rows = [], [["k", "degree_lo", "degree_hi", "weight_re", "weight_im", "norm", "source_Q", "source_i"]]
    for k in range(1, kmax + 1):
        lo, hi = (2**k + 1, 2 ** (k + 1)) if window == "dyadic" else (2, 2**k)
        ws = nonzero_weights_in(S, lo, hi)
        try:
            om = omega_S(S, k, window=window)
        except LPKamError:
            om = None
        table.append({"k": k, "window": [lo, hi], "omega_S": om, "distinct_weights": len(ws)})
        for w in ws:
            rows.append([k, lo, hi, " ".join(repr(float(v.real)) for v in w.vals),
                         " ".join(repr(float(v.imag)) for v in w.vals), repr(w.norm()),
                         " ".join(str(q) for q in w.source[0]), w.source[1]])
    report["omega_table"] = table
    out.csv("weights.csv", rows)
    gens = ", ".join(_mono_name(q) for q in report["generators"]) or "(none)"
    print(f"generators: {gens}")
    for row in table:
        print(f"k={row['k']} window={row['window']} omega_S={row['omega_S']} weights={row['distinct_weights']}")
    return report


def _mono_name(q):
    parts = [f"x{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(q) if e]
    return "*".join(parts) or "1"


def _base(data, args):
    if args.base:
        return parse_base(args.base, data["dims"]["p"])
    return None


def _run_normalization(scn, data, args, sched, r):
    order = args.order or data.get("order", 16)
    if order > scn.ring.xmax:
        raise SchemaError(f"--order {order} exceeds truncation.xmax = {scn.ring.xmax}")
    state = scn.initial_state()
    checks, goods = [], []
    while state.m < order:
        prev = state.nf
        state = newton_step(state, schedule=sched)
        k = int(round(math.log2(state.m)))
        checks.append(kam.norm_ball_checks(state, None, k, r, sched, prev_nf=prev))
        goods.append({"m": state.m, "good": good_perturbation_check(state)})
    return state, checks, goods, order


def _series_table(a):
    return [[{"u": list(pe), "c": [float(v.real), float(v.imag)]} for (_, pe), v in c.sorted_terms()] for c in a]


def _constants(sched, S, R, r, m_r, kmax):
    t_table = [{"k": k, "m": 2**k, "t_m": kam.t_m(k, sched), "gamma_k": kam.gamma_k(k, sched)}
               for k in range(0, kmax + 1)]
    return {"c1": sched.c1, "Lambda": S.Lambda, "linv_norm": kam.linv_norm(S), "m_r": m_r, "r": r,
            "schedule": sched.to_json(), "t_table": t_table, "resonant_rows": R.to_json()}


def cmd_normalize(data, args, out):
    scn = build_scenario(data, _base(data, args), args.exact_resonance)
    sched, r, m_r = build_schedule(data, scn.S, scn.R, args.gamma)
    try:
        state, checks, goods, order = _run_normalization(scn, data, args, sched, r)
    except ZeroSmallDivisor as exc:
        src = exc.alpha.source if getattr(exc, "alpha", None) is not None else None
        print(f"zero small divisor at b = {list(scn.ring.base)}: weight source {src}", file=sys.stderr)
        raise
    rho = data.get("verify", {}).get("rho", 0.1)
    head, tail = conjugacy_residual(scn, state, rho=rho, order=order)
    tol = data.get("verify", {}).get("residual_tol", 1e-9)
    residuals = [{"m": rec["m_next"], "nonresonant_leftover": rec["nonresonant_leftover"],
                  "nonresonant_leftover_at_base": rec["nonresonant_leftover_at_base"]} for rec in state.ledger]
    report = _header(data, args, "normalize")
    report.update({
        "base": list(scn.ring.base), "order": order, "ledger": list(state.ledger), "norm_ball_checks": checks,
        "good_perturbation": goods, "a_final": _series_table(state.a),
        "conjugacy_residual": {"rho": rho, "within_order": head, "beyond_order": tail, "tol": tol,
                               "ok": head <= tol},
        "residual_table": residuals,
        "residuals_ok": all(r_["nonresonant_leftover_at_base"] <= tol for r_ in residuals) and head <= tol,
        "constants": _constants(sched, scn.S, scn.R, r, m_r, int(round(math.log2(max(order, 1)))) + 1),
    })
    out.json("state.series.json", state.to_json())
    keys = ["m", "m_next", "weights_solved", "worst_divisor", "divisor_floor", "B_max", "W_max",
            "remainder_max", "nonresonant_leftover", "nonresonant_leftover_at_base", "good"]
    out.csv("ledger.csv", [keys] + [[rec.get(k_) for k_ in keys] for rec in state.ledger])
    print(f"normalized to order {state.m} at b = {list(scn.ring.base)}; "
          f"conjugacy residual {head:.3e} (tol {tol:.1e})")
    for rec in state.ledger:
        print(f"  m={rec['m']:>3} -> {rec['m_next']:>3}  weights={rec['weights_solved']:>3}  "
              f"worst|A|={rec['worst_divisor']}  leftover(u=b)={rec['nonresonant_leftover_at_base']:.2e}")
    return report


def _grid(data, args):
    if "grid" not in data:
        raise SchemaError("this command needs a grid block")
    h = args.grid_h or data["grid"]["h"]
    return kam.CompactGrid.rectangle(data["grid"]["bounds"], h)


def _filter_run(grid, a, kmax, sched, S, window, out=None):
    stages = []
    total = grid.total_measure()
    for k in range(1, kmax + 1):
        grid = kam.filter_K(grid, a, k, sched, S, window=window)
        frac = grid.measure() / total
        stages.append({**grid.stages[-1], "survival_fraction": frac, "excluded_fraction": 1 - frac})
        if out is not None:
            out.csv(f"filter_k{k}.csv", grid.csv_rows())
    return grid, stages


def cmd_filter(data, args, out):
    scn = build_scenario(data, _base(data, args), args.exact_resonance)
    sched, r, m_r = build_schedule(data, scn.S, scn.R, args.gamma)
    grid = _grid(data, args)
    kmax = args.kmax or 4
    window = data.get("resonance", {}).get("window", "dyadic")
    grid, stages = _filter_run(grid, scn.a, kmax, sched, scn.S, window, out)
    report = _header(data, args, "filter")
    report.update({"gamma": sched.gamma, "h": grid.h, "points": int(grid.points.shape[0]),
                   "measure_K": grid.total_measure(), "stages": stages,
                   "survival_fraction": stages[-1]["survival_fraction"] if stages else 1.0,
                   "constants": _constants(sched, scn.S, scn.R, r, m_r, kmax)})
    print(f"gamma={sched.gamma} h={grid.h} points={grid.points.shape[0]}")
    for st in stages:
        print(f"  k={st['k']} threshold={st['threshold']:.3e} weights={st['weights']} "
              f"survival={st['survival_fraction']:.6f}")
    return report


def cmd_measure(data, args, out):
    scn = build_scenario(data, _base(data, args), args.exact_resonance)
    sched, r, m_r = build_schedule(data, scn.S, scn.R, args.gamma)
    grid = _grid(data, args)
    mb = data.get("measure", {})
    kmax = args.kmax or mb.get("k_max", 6)
    mu_max = mb.get("mu_max", 4)
    bounds = data["grid"]["bounds"]
    d = max(max(b[1] - b[0], b[3] - b[2]) for b in bounds)
    coarse = kam.CompactGrid.rectangle(bounds, mb.get("sample_h", max(grid.h, d / 8)))
    report = _header(data, args, "measure")
    try:
        mu0, beta = nondegeneracy_index(scn.a, coarse.points, mu_max, seed=args.seed)
    except DegenerateUpToMuMax as exc:
        report.update({"nondegenerate": False, "mu_max": mu_max, "reason": str(exc)})
        print(f"a is degenerate up to mu_max = {mu_max}; no measure estimate")
        return report
    beta_m = kam.beta_for_measure(beta)
    p = scn.R.p
    decreasing, M_two, M_one, seq = kam.strictly_diophantine_check(sched, scn.S, mu0, kmax)
    a1 = kam._ratio_power(sched.omega(1) / omega_S(scn.S, 1), mu0)
    a2 = kam._ratio_power(sched.omega(2) / omega_S(scn.S, 2), mu0)
    vals = kam.evaluate_a(scn.a, coarse.points)
    g_norm = float(np.max(np.linalg.norm(vals, axis=1)))
    vartheta = mb.get("vartheta", 1.0)
    M = kam.measure_constant_M(mu0, p, d, vartheta, beta_m, g_norm)
    mes_K = grid.total_measure()
    eps_star = mb.get("eps_star", 0.1) * mes_K
    report.update({"nondegenerate": True, "mu0": mu0, "beta": beta, "beta_used": beta_m, "strictly_diophantine_on_range": decreasing,
                   "M_weighted": M_two, "M_ratio": M_one, "sequence": seq, "a1": a1, "a2": a2, "d": d,
                   "vartheta": vartheta, "g_norm": g_norm, "M": M, "B": kam.russmann_constant(mu0, 2 * p),
                   "measure_K": mes_K, "eps_star": eps_star, "k_max": kmax})
    try:
        gs = kam.gamma_star(eps_star, M, a1, a2, mu0, p, M_one, M_two, beta_m)
        report["gamma_star"] = gs
    except LPKamError as exc:
        gs = None
        report["gamma_star"] = None
        report["gamma_star_error"] = str(exc)
    if gs is not None and gs > 0:
        g = min(gs / 2, sched.gamma_cap)
        final, stages = _filter_run(grid, scn.a, kmax, sched.with_gamma(g), scn.S,
                                    data.get("resonance", {}).get("window", "dyadic"), out)
        excluded = mes_K - final.measure()
        report.update({"gamma_used": g, "stages": stages, "empirical_excluded": excluded,
                       "analytic_excluded_bound": eps_star, "bound_holds": excluded <= eps_star})
        print(f"mu0={mu0} beta={beta:.4g} gamma*={gs:.4g}")
        print(f"analytic excluded-measure bound eps* = {eps_star:.6g}")
        print(f"empirical excluded measure at gamma*/2 = {excluded:.6g}")
    else:
        print(f"mu0={mu0} beta={beta:.4g} gamma* unavailable: {report.get('gamma_star_error')}")
    return report


def cmd_verify(data, args, out):
    scn = build_scenario(data, _base(data, args), args.exact_resonance)
    sched, r, m_r = build_schedule(data, scn.S, scn.R, args.gamma)
    vb = data.get("verify", {})
    rho, T, tol = vb.get("rho", 0.1), vb.get("T", 1.0), vb.get("tol", 1e-12)
    samples = vb.get("samples", 8)
    state, checks, goods, order = _run_normalization(scn, data, args, sched, r)
    norm = invariant_residual(scn, state, rho=rho, T=T, n_samples=samples, tol=tol, seed=args.seed)
    raw = invariant_residual(scn, state, rho=rho, T=T, n_samples=samples, tol=tol, seed=args.seed,
                             normalized=False)
    head, tail = conjugacy_residual(scn, state, rho=rho, order=order)
    rows = [["sample", "straightened_drift", "raw_drift"]]
    for i, (s_, r_) in enumerate(zip(norm["straightened"], raw["raw"])):
        rows.append([i, repr(s_), repr(r_)])
    out.csv("verify_samples.csv", rows)
    sd, rd = norm["straightened_max"], raw["raw_max"]
    report = _header(data, args, "verify")
    report.update({"base": list(scn.ring.base), "order": order, "rho": rho, "T": T, "tol": tol,
                   "samples": norm["samples"], "straightened_drift": sd, "raw_drift": rd,
                   "gain": (rd / sd) if sd > 0 else "inf", "inverse_error": norm["inverse_error_max"],
                   "conjugacy_residual": head, "conjugacy_residual_beyond_order": tail,
                   "good_perturbation": goods})
    print(f"straightened drift {sd:.3e}, raw drift {rd:.3e}, conjugacy residual {head:.3e}")
    return report


def cmd_scenario(data, args, out):
    # one pair keeps G0 = u; with more pairs a quadratic term makes u -> a(u) nondegenerate
    mu = None if args.n_pairs == 1 else [[math.sqrt(i + 1), 0.5] for i in range(args.n_pairs)]
    ham = scenario_hamiltonian(args.n_pairs, mu)
    vol = scenario_volume(args.n)
    p = ham.R.p
    files = {
        "hamiltonian.yaml": scenario_problem(ham, base=[0.01] * p,
                                             grid={"bounds": [[-1.0, 1.0, -1.0, 1.0]] * p,
                                                   "h": 0.1 if p == 1 else 0.25}),
        "volume.yaml": scenario_problem(vol, base=[0.01]),
    }
    for name, prob in files.items():
        validate_problem(prob)
        (out.dir / name).write_text(yaml.safe_dump(prob, sort_keys=False, default_flow_style=None))
        print(f"wrote {out.dir / name}")
    return {"command": "scenario", "files": sorted(files), "seed": args.seed}


COMMANDS = {
    "resonances": cmd_resonances,
    "normalize": cmd_normalize,
    "filter": cmd_filter,
    "measure": cmd_measure,
    "verify": cmd_verify,
    "scenario": cmd_scenario,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="lpkam", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name != "scenario":
            sp.add_argument("problem", help="problem file (YAML or JSON)")
        sp.add_argument("--out", default="lpkam-out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--order", type=int)
        sp.add_argument("--base", help="comma list of re,im pairs")
        sp.add_argument("--kmax", type=int)
        sp.add_argument("--grid-h", type=float)
        sp.add_argument("--gamma", type=float, help="override schedule.gamma")
        sp.add_argument("--exact-resonance", action="store_true",
                        help="refuse float eigenvalue entries")
        sp.add_argument("--allow-trivial-ring", action="store_true")
        if name == "scenario":
            sp.add_argument("--n-pairs", type=int, default=1)
            sp.add_argument("--n", type=int, default=3)
    return ap


EXIT_CODES = ((SchemaError, 2), (EmptyRing, 3), (ZeroSmallDivisor, 4), (NotGoodPerturbation, 5))


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        out = Output(args.out)
        data = {} if args.command == "scenario" else load_problem(args.problem)
        report = COMMANDS[args.command](data, args, out)
    except LPKamError as exc:
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                break
        else:
            code = 1
        print(f"lpkam {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    out.json("report.json", report)
    meta = {"argv": sys.argv if argv is None else list(argv), "started": started,
            "elapsed_s": time.time() - started, "python": platform.python_version(),
            "numpy": np.__version__, "kernel_backend": _kernels.BACKEND}
    out.json("run.meta.json", meta)
    return 0


if __name__ == "__main__":
    sys.exit(main())
