"""Pass/fail checks computed from emitted tables only, so they can be re-run offline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool

    def as_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": bool(self.passed)}


def _records(table):
    header, rows = table
    return [dict(zip(header, r)) for r in rows]


def _f(v):
    return float(v)


def _halving(rows, key, band):
    out = []
    for a, b in zip(rows[:-1], rows[1:]):
        ra, rb = _f(a[key]), _f(b[key])
        ratio = ra / rb if rb > 0 else math.inf
        out.append(ratio)
    ok = bool(out) and all(abs(r - 2.0) <= 2.0 * band for r in out)
    return out, ok


def v_symbols(t, tol):
    gen = _records(t["generator_cosine.csv"])
    worst = max(_f(r["rel_error"]) for r in gen)
    gaps = _records(t["scaled_bound.csv"])
    min_gap = min(_f(r["gap"]) for r in gaps)
    growth = _records(t["growth.csv"])
    dev = max(abs(_f(r["slope"]) - _f(r["alpha"])) for r in growth)
    return [Check("generator_on_cosine_rel", worst, f"<= {tol['symbol_rel']:g}",
                  worst <= tol["symbol_rel"]),
            Check("scaled_minus_tilde_min", min_gap, f">= -{tol['scaling_bound']:g}",
                  min_gap >= -tol["scaling_bound"]),
            Check("growth_slope_dev", dev, f"<= {tol['growth_slope']:g}",
                  dev <= tol["growth_slope"])]


def v_density(t, tol):
    rows = _records(t["density.csv"])
    mass = max(_f(r["mass_error"]) for r in rows)
    sym = max(_f(r["symmetry_error"]) for r in rows)
    ck = max(_f(r["ck_sup_error"]) for r in rows)
    return [Check("mass_error", mass, f"<= {tol['mass']:g}", mass <= tol["mass"]),
            Check("symmetry_error", sym, f"<= {tol['symmetry']:g}", sym <= tol["symmetry"]),
            Check("chapman_kolmogorov_sup", ck, f"<= {tol['chapman_kolmogorov']:g}",
                  ck <= tol["chapman_kolmogorov"])]


def v_scaling(t, tol):
    out = []
    for r in _records(t["scaling.csv"]):
        dev = abs(_f(r["slope"]) - _f(r["expected"]))
        out.append(Check(f"slope_{r['family']}_{r['norm']}", _f(r["slope"]),
                         f"{_f(r['expected']):.4f} +- {_f(r['tolerance']):g}",
                         dev <= _f(r["tolerance"])))
    return out


def v_ctable(t, tol, alpha):
    rows = _records(t["ctable.csv"])
    T = [_f(r["T"]) for r in rows]
    C = [_f(r["C"]) for r in rows]
    mono = all(C[i + 1] >= C[i] * (1.0 - tol["ct_monotone"]) for i in range(len(C) - 1))
    lx = [math.log(x) for x in T]
    ly = [math.log(y) for y in C]
    mx, my = sum(lx) / len(lx), sum(ly) / len(ly)
    slope = sum((a - mx) * (b - my) for a, b in zip(lx, ly)) / sum((a - mx) ** 2 for a in lx)
    target = (alpha - 1.0) / alpha
    return [Check("cT_monotone", float(mono), f"within {tol['ct_monotone']:g}", mono),
            Check("cT_log_slope", slope, f"{target:.4f} +- {tol['ct_slope']:g}",
                  abs(slope - target) <= tol["ct_slope"])]


def v_picard(t, tol):
    ratios = [_f(r["ratio"]) for r in _records(t["picard.csv"]) if not math.isnan(_f(r["ratio"]))]
    worst = max(ratios) if ratios else 0.0
    res = [_f(r["relative"]) for r in _records(t["residuals.csv"])]
    worst_res = max(res) if res else 0.0
    term = _records(t["terminal.csv"])[0]
    term_v = _f(term["max_abs_u"])
    return [Check("picard_ratio_max", worst, f"<= {tol['picard_ratio']:g}",
                  worst <= tol["picard_ratio"]),
            Check("pde_residual_max_rel", worst_res, f"<= {tol['pde_residual']:g}",
                  worst_res <= tol["pde_residual"]),
            Check("terminal_slice_max_abs", term_v, "== 0", term_v == 0.0)]


def v_mc_law(t, tol):
    out = []
    for r in _records(t["mc_law.csv"]):
        se = _f(r["stderr"])
        z = abs(_f(r["estimate"]) - _f(r["exact"])) / se if se > 0 else math.inf
        out.append(Check(f"z_{r['quantity']}", z, f"<= {tol['n_se']:g}", z <= tol["n_se"]))
    return out


def v_zvonkin(t, tol):
    ratios, ok = _halving(_records(t["zvonkin.csv"]), "rms", tol["halving_band"])
    return [Check("rms_refinement_ratio", min(ratios) if ratios else math.nan,
                  f"2 +- {2 * tol['halving_band']:g} (all ratios {', '.join(f'{r:.3f}' for r in ratios)})",
                  ok)]


def v_convergence(t, tol):
    rows = _records(t["convergence.csv"])
    by_t = {}
    for r in rows:
        by_t.setdefault(_f(r["t"]), []).append(r)
    dec_ok, worst_final = True, 0.0
    for tt, rs in by_t.items():
        d = [_f(r["l2_distance"]) for r in rs]
        s = [_f(r["stderr"]) for r in rs]
        for i in range(len(d) - 1):
            if not d[i + 1] < d[i] + tol["convergence_n_se"] * math.hypot(s[i], s[i + 1]):
                dec_ok = False
        worst_final = max(worst_final, d[-1] / d[0] if d[0] > 0 else math.inf)
    return [Check("gaps_decreasing", float(dec_ok), f"up to {tol['convergence_n_se']:g} SE",
                  dec_ok),
            Check("final_over_first_gap", worst_final, f"<= {tol['final_gap_ratio']:g}",
                  worst_final <= tol["final_gap_ratio"])]


def v_uniqueness(t, tol):
    rows = sorted(_records(t["uniqueness.csv"]), key=lambda r: _f(r["dt"]))
    ms = [_f(r["mean_sq_gap"]) for r in rows]
    dec = all(ms[i] < ms[i + 1] for i in range(len(ms) - 1))
    gap = _f(_records(t["identical.csv"])[0]["max_abs_gap"])
    return [Check("gap_decreases_with_dt", float(dec), "strictly", dec),
            Check("identical_runs_gap", gap, "== 0", gap == 0.0)]


def v_malliavin(t, tol):
    ratios, ok = _halving(_records(t["routes.csv"]), "sup_error", tol["halving_band"])
    rows = _records(t["levels.csv"])
    func = [_f(r["functional"]) for r in rows]
    pair = [_f(r["pairwise_ratio"]) for r in rows]
    finite = all(math.isfinite(v) and v >= 0 for v in func)
    spread = (max(func) - min(func)) / min(func) if finite and min(func) > 0 else math.inf
    pfinite = all(math.isfinite(v) for v in pair)
    pspread = (max(pair) - min(pair)) / min(pair) if pfinite and min(pair) > 0 else math.inf
    gap = _f(_records(t["anticipation.csv"])[0]["max_abs_future_derivative"])
    band = tol["level_spread"]
    return [Check("route_error_refinement_ratio", min(ratios) if ratios else math.nan,
                  f"2 +- {2 * tol['halving_band']:g} (all ratios {', '.join(f'{r:.3f}' for r in ratios)})",
                  ok),
            Check("no_anticipation", gap, "== 0", gap == 0.0),
            Check("pairwise_ratio_level_spread", pspread, f"<= {band:g}", pspread <= band),
            Check("functional_level_spread", spread, f"<= {band:g}", spread <= band)]


def evaluate(name: str, tables: dict, tol: dict, *, alpha: float | None = None) -> list:
    if name == "ctable":
        return v_ctable(tables, tol, alpha)
    fn = {"symbols": v_symbols, "density": v_density, "scaling": v_scaling,
          "picard": v_picard, "mc_law": v_mc_law, "zvonkin": v_zvonkin,
          "convergence": v_convergence, "uniqueness": v_uniqueness,
          "malliavin": v_malliavin}[name]
    return fn(tables, tol)


def read_tables(directory) -> dict:
    """Load every CSV of a run directory as ``(header, rows)`` with string cells."""
    out = {}
    for p in sorted(Path(directory).glob("*.csv")):
        with open(p, newline="") as fh:
            rows = list(csv.reader(fh))
        out[p.name] = (rows[0], [tuple(r) for r in rows[1:]])
    return out
