"""Named experiments.  Each returns tables (header plus rows) and a JSON summary;
verdicts are computed from the tables alone (see :mod:`.verdicts`)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..density import build_density, chapman_kolmogorov_error, parseval_error
from ..grid import Box, GridFunction
from ..kolmogorov import estimate_cT, solve_backward
from ..levy_model import LevyModel, apply_generator, eval_psi, eval_psi_scaled, eval_psi_tilde
from ..semigroup import default_families, derivative_scaling_report, fit_loglog
from ..simulate import (MollifierFamily, euler_batch, level_switch_check, levy_endpoint_sample,
                        mollify, sample_noise_batch, strong_convergence_study, uniqueness_check)
from ..zvonkin_malliavin import (SlobodeckijSpec, lemma13_bound_check, make_node_grid,
                                 malliavin_u_recursion, perturbed_differences, solve_zvonkin,
                                 zvonkin_residual)


@dataclass
class ExperimentResult:
    name: str
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    blobs: dict = field(default_factory=dict)

    def add(self, name, header, rows):
        self.tables[name] = (list(header), [tuple(r) for r in rows])


# -- drifts from the config ---------------------------------------------------------


def base_drift(cfg):
    """``b(x)`` for ``x`` of shape ``(..., d)``: scalar output in d = 1, else ``(..., d)``."""
    d = cfg["model"]["d"]
    name, a, beta = cfg["drift"]["name"], cfg["drift"]["amplitude"], cfg["drift"]["beta"]

    def scalar(x):
        if name == "holder":
            return a * np.minimum(np.linalg.norm(x, axis=-1) ** beta, 1.0)
        if name == "sine":
            return a * np.sin(x[..., 0])
        return np.zeros(x.shape[:-1])

    if d == 1:
        return scalar

    def vector(x):
        v = scalar(x)
        return np.stack([v, np.zeros_like(v)], axis=-1)
    return vector


def drift_grid(cfg, box: Box) -> GridFunction:
    pts = box.points if box.d > 1 else box.axis[:, None]
    return GridFunction(box, base_drift(cfg)(pts))


def drift_callable(cfg):
    b = base_drift(cfg)
    return lambda t, x: b(x)


def model_of(cfg) -> LevyModel:
    return LevyModel(cfg["model"]["d"], cfg["model"]["alpha"])


def family_of(cfg) -> MollifierFamily:
    return MollifierFamily(base_drift(cfg), cfg["model"]["d"], list(cfg["drift"]["levels"]))


def _noise(cfg, model, T, n_steps, n_paths, seed=None):
    mc = cfg["montecarlo"]
    return sample_noise_batch(model, T, n_steps, n_paths,
                              master_seed=mc["master_seed"] if seed is None else seed,
                              eps_cut=mc["eps_cut"])


# -- experiments ----------------------------------------------------------------------


def exp_symbols(cfg) -> ExperimentResult:
    """Generator on cosines, scaled-exponent lower bound and growth exponent."""
    sc = cfg["symbols"]
    seed = cfg["montecarlo"]["master_seed"]
    res = ExperimentResult("symbols")
    gen_rows, bound_rows, growth_rows = [], [], []
    for d in sc["dims"]:
        for alpha in sc["alphas"]:
            m = LevyModel(d, alpha)
            rng = np.random.default_rng([seed, d, int(round(alpha * 1000))])
            # test points lie in [-1, 1]^d and the generator needs a margin of 1
            box = Box(d, 2.5, 2048 if d == 1 else 1024)
            for _ in range(sc["n_frequencies"]):
                r = rng.uniform(0.5, min(sc["u_max"], 0.1 * box.cutoff))
                if d == 1:
                    u = np.array([r * rng.choice([-1.0, 1.0])])
                else:
                    th = rng.uniform(0.0, 2.0 * np.pi)
                    u = r * np.array([np.cos(th), np.sin(th)])
                f = GridFunction.from_callable(
                    box, lambda x, u=u: np.cos(u[0] * x) if d == 1 else np.cos(x @ u))
                x = rng.uniform(-1.0, 1.0, size=(3, d))
                psi = eval_psi(m, u)
                exact = -psi * np.cos(x @ u)
                got = apply_generator(m, f, x)
                rel = float(np.max(np.abs(got - exact)) / psi)
                gen_rows.append((d, alpha, *np.pad(u, (0, 2 - d)), psi, rel))
            T = 1.0
            ts = np.geomspace(1e-3, T, sc["n_grid"])
            us = np.geomspace(0.1, 1e3, sc["n_grid"])
            for t in ts:
                scaled = np.array([eval_psi_scaled(m, t, _vec(d, u)) for u in us])
                tilde = np.array([eval_psi_tilde(m, T, _vec(d, u)) for u in us])
                for u, s_, t_ in zip(us, scaled, tilde):
                    bound_rows.append((d, alpha, t, u, s_, t_, s_ - t_))
            ug = np.geomspace(sc["growth_u_min"], sc["growth_u_max"], 12)
            vals = np.array([eval_psi_tilde(m, T, _vec(d, u)) for u in ug])
            slope, se, _, _ = fit_loglog(ug, vals)
            growth_rows.append((d, alpha, slope, se))
    res.add("generator_cosine.csv", ["d", "alpha", "u1", "u2", "psi", "rel_error"], gen_rows)
    res.add("scaled_bound.csv", ["d", "alpha", "t", "u", "scaled", "tilde", "gap"], bound_rows)
    res.add("growth.csv", ["d", "alpha", "slope", "stderr"], growth_rows)
    return res


def _vec(d, u):
    return u if d == 1 else np.array([u, 0.0])


def exp_density(cfg) -> ExperimentResult:
    dc = cfg["density"]
    m = model_of(cfg)
    n = dc["n"] or (4096 if m.d == 1 else 256)
    box = Box(m.d, dc["halfwidth"], n)
    res = ExperimentResult("density")
    rows = []
    for i, t in enumerate(dc["t"]):
        dg = build_density(m, t, box, derivatives=False)
        ck = chapman_kolmogorov_error(m, t, box)
        rows.append((m.d, n, box.halfwidth, t, abs(dg.mass() - 1.0), dg.symmetry_error(), ck,
                     parseval_error(m, t, box), dg.edge_mass))
        if i == 0:
            res.blobs["density_t0.f64"] = (dg.values, {"t": t, "alpha": m.alpha, "d": m.d,
                                                      "grid": box.as_dict()})
    res.add("density.csv", ["d", "n", "halfwidth", "t", "mass_error", "symmetry_error",
                            "ck_sup_error", "parseval_error", "edge_mass"], rows)
    return res


def exp_scaling(cfg) -> ExperimentResult:
    sc = cfg["scaling"]
    m = model_of(cfg)
    box = Box(m.d, sc["halfwidth"], sc["n"])
    times = np.geomspace(sc["t_min"], sc["t_max"], sc["n_times"])
    rep = derivative_scaling_report(m, default_families(m.alpha, sc["beta"]), times, box)
    res = ExperimentResult("scaling")
    res.add("scaling.csv", ["family", "norm", "slope", "stderr", "points", "expected",
                            "tolerance"],
            [(r.family, r.norm, r.slope, r.stderr, r.points, r.expected, r.tolerance)
             for r in rep.rows])
    norm_rows = [(key, t, v) for key, vals in sorted(rep.norms.items())
                 for t, v in zip(times, vals)]
    res.add("scaling_norms.csv", ["series", "t", "sup_norm"], norm_rows)
    return res


def exp_ctable(cfg) -> ExperimentResult:
    cc = cfg["ctable"]
    m = model_of(cfg)
    T = np.geomspace(cc["T_min"], cc["T_max"], cc["n_T"])
    tab = estimate_cT(m, T, cc["beta"], seed=cfg["montecarlo"]["master_seed"])
    fams = sorted(tab.per_family)
    res = ExperimentResult("ctable")
    res.add("ctable.csv", ["T", "C"] + [f"C_{k}" for k in fams],
            [(t, c, *[tab.per_family[k][i] for k in fams]) for i, (t, c) in
             enumerate(zip(tab.T, tab.C))])
    res.summary["alpha"] = m.alpha
    return res


def exp_picard(cfg) -> ExperimentResult:
    pc = cfg["picard"]
    m = model_of(cfg)
    box = Box(m.d, pc["halfwidth"], pc["n"])
    b = drift_grid(cfg, box)
    phi = b if m.d == 1 else GridFunction(box, b.values[..., 0])
    sol = solve_backward(m, b, phi, cfg["horizon"]["T"], beta=cfg["drift"]["beta"],
                         n_slices=pc["n_slices"], steps_per_slice=pc["steps_per_slice"],
                         pad_factor=cfg["grid"]["pad_factor"], resid_tol=np.inf,
                         seed=cfg["montecarlo"]["master_seed"])
    res = ExperimentResult("picard")
    d = sol.picard_diffs
    res.add("picard.csv", ["iteration", "difference", "ratio"],
            [(i + 1, d[i], d[i] / d[i - 1] if i and d[i - 1] > 0 else float("nan"))
             for i in range(len(d))])
    scale = float(np.max(np.abs(phi.values))) or 1.0
    res.add("residuals.csv", ["t", "residual", "relative"],
            [(float(k), v, v / scale) for k, v in sol.residuals.get("pde", {}).items()])
    res.add("terminal.csv", ["t", "max_abs_u", "max_abs_grad"],
            [(float(sol.times[-1]), float(np.max(np.abs(sol.u.values[-1]))),
              float(np.max(np.abs(sol.grad_u.values[-1]))))])
    res.summary.update(cT=sol.cT_estimate, contraction_ok=sol.contraction_ok,
                       drift_norm=sol.diagnostics["drift_norm"],
                       int_eq_rel=sol.residuals.get("int_eq_rel"))
    return res


def exp_mc_law(cfg) -> ExperimentResult:
    mc = cfg["mc_law"]
    m = model_of(cfg)
    t = mc["t"]
    X = levy_endpoint_sample(m, t, mc["n_paths"], master_seed=cfg["montecarlo"]["master_seed"],
                             eps_cut=cfg["montecarlo"]["eps_cut"])
    n = X.shape[0]
    rows = []
    for c in range(m.d):
        x = X[:, c]
        rows.append((f"mean_x{c + 1}", float(x.mean()), 0.0, float(x.std(ddof=1) / np.sqrt(n))))
        var_exact = t * m.second_moment(1.0)
        sq = (x - x.mean()) ** 2
        rows.append((f"variance_ratio_x{c + 1}", float(sq.mean() / var_exact), 1.0,
                     float(sq.std(ddof=1) / np.sqrt(n) / var_exact)))
    for u in mc["frequencies"]:
        vec = np.zeros(m.d)
        vec[0] = u
        cs = np.cos(X @ vec)
        rows.append((f"cf_u{u:g}", float(cs.mean()), float(np.exp(-t * eval_psi(m, vec))),
                     float(cs.std(ddof=1) / np.sqrt(n))))
    res = ExperimentResult("mc_law")
    res.add("mc_law.csv", ["quantity", "estimate", "exact", "stderr"], rows)
    return res


def exp_zvonkin(cfg) -> ExperimentResult:
    g, zc = cfg["grid"], cfg["zvonkin"]
    m = model_of(cfg)
    T = cfg["horizon"]["T"]
    levels = zc["refinements"] + 1
    k_fine = g["n_slices"] * 2 ** zc["refinements"]
    noise = _noise(cfg, m, T, k_fine, cfg["montecarlo"]["n_paths"])
    drift = drift_callable(cfg)
    rows = []
    for lev in range(levels):
        K, n = g["n_slices"] * 2 ** lev, g["n"] * 2 ** lev
        box = Box(m.d, g["halfwidth"], n)
        field = solve_zvonkin(m, drift_grid(cfg, box), T, beta=cfg["drift"]["beta"], n_slices=K,
                              steps_per_slice=g["steps_per_slice"], lu_method=zc["lu_method"],
                              pad_factor=g["pad_factor"], check_residual=False,
                              seed=cfg["montecarlo"]["master_seed"])
        nb = noise.coarsen(k_fine // K)
        X = euler_batch(drift, nb, 0.0, record=True)
        R = zvonkin_residual(field, drift, nb.mesh, X)
        sq = R ** 2
        rms = float(np.sqrt(sq.mean()))
        se = float(sq.std(ddof=1) / np.sqrt(sq.size) / (2.0 * rms)) if rms > 0 else 0.0
        rows.append((lev, K, n, T / K, box.h, rms, se, float(np.max(np.abs(R)))))
    res = ExperimentResult("zvonkin")
    res.add("zvonkin.csv", ["level", "n_slices", "n", "dt", "h", "rms", "stderr", "max_abs"], rows)
    return res


def _checkpoints(cfg):
    T = cfg["horizon"]["T"]
    k = cfg["convergence"]["n_checkpoints"]
    n_steps = cfg["montecarlo"]["n_steps"]
    return [T * (n_steps // k) * (i + 1) / n_steps for i in range(k)]


def exp_convergence(cfg) -> ExperimentResult:
    m = model_of(cfg)
    T = cfg["horizon"]["T"]
    noise = _noise(cfg, m, T, cfg["montecarlo"]["n_steps"], cfg["montecarlo"]["n_paths"])
    tab = strong_convergence_study(family_of(cfg), cfg["drift"]["levels"], noise, 0.0,
                                   _checkpoints(cfg))
    res = ExperimentResult("convergence")
    res.add("convergence.csv", ["level_a", "level_b", "t", "l2_distance", "stderr", "paths",
                                "master_seed"], tab.rows())
    return res


def exp_uniqueness(cfg) -> ExperimentResult:
    m = model_of(cfg)
    T = cfg["horizon"]["T"]
    uc = cfg["uniqueness"]
    seed = uc["seeds"][0] if uc["seeds"] else cfg["montecarlo"]["master_seed"]
    noise = _noise(cfg, m, T, cfg["montecarlo"]["n_steps"], cfg["montecarlo"]["n_paths"], seed)
    fam = family_of(cfg)
    levels = cfg["drift"]["levels"]
    rep = uniqueness_check(mollify(fam, levels[-1]), noise, 0.0, uc["factors"])
    res = ExperimentResult("uniqueness")
    res.add("uniqueness.csv", ["dt", "mean_sq_gap", "stderr"], rep["rows"])
    res.add("identical.csv", ["max_abs_gap"], [(rep["identical_run_gap"],)])
    sw = level_switch_check(fam, levels[0], levels[-1], noise, 0.0, uc["burn_in"],
                            _checkpoints(cfg))
    res.add("level_switch.csv", ["t", "mean_sq_gap", "gronwall_ratio"], sw["rows"])
    res.summary["master_seed"] = seed
    return res


def _route_comparison(cfg, m, T):
    mc = cfg["malliavin"]
    a = mc["smooth_amplitude"]
    if m.d == 1:
        base = lambda x: a * np.sin(x[..., 0])
    else:
        base = lambda x: np.stack([a * np.sin(x[..., 0]), np.zeros(x.shape[:-1])], axis=-1)
    drift = lambda t, x: base(x)
    k_fine = max(mc["route_slices"])
    noise = _noise(cfg, m, T, k_fine, mc["route_paths"])
    grid = make_node_grid(m.d, T, n_l=4, n_r=4)
    halfwidth = cfg["grid"]["halfwidth"]
    rows = []
    for K in mc["route_slices"]:
        n = mc["route_n"] * K // min(mc["route_slices"])
        box = Box(m.d, halfwidth, n)
        pts = box.points if m.d > 1 else box.axis[:, None]
        field = solve_zvonkin(m, GridFunction(box, base(pts)), T, beta=cfg["drift"]["beta"],
                              n_slices=K, steps_per_slice=cfg["grid"]["steps_per_slice"],
                              check_residual=False)
        nb = noise.coarsen(k_fine // K)
        X = euler_batch(drift, nb, 0.0, record=True)
        li = np.rint(grid.l / nb.dt).astype(int)
        nm = grid.marks.shape[0]
        l_idx = np.repeat(li, nm)
        marks = np.tile(grid.marks, (grid.l.size, 1))
        dv = perturbed_differences(drift, nb.mesh, X, l_idx, marks, keep_path=True)
        du, diag = malliavin_u_recursion(field, drift, nb.mesh, X, l_idx, marks,
                                         return_history=True)
        err = np.abs(dv - du)
        rows.append((K, n, T / K, float(np.max(err)), float(np.sqrt(np.mean(err ** 2))),
                     diag.max_inner_iterations, diag.max_inner_residual,
                     diag.contraction_estimate))
    return rows


def exp_malliavin(cfg) -> ExperimentResult:
    mc = cfg["malliavin"]
    m = model_of(cfg)
    T = cfg["horizon"]["T"]
    res = ExperimentResult("malliavin")
    res.add("routes.csv", ["n_slices", "n", "dt", "sup_error", "rms_error", "inner_iterations",
                           "inner_residual", "grad_u_sup"], _route_comparison(cfg, m, T))
    spec = SlobodeckijSpec(mc["s"], mc["alpha_plus_delta"] - m.alpha, T, m.alpha)
    mesh = np.linspace(0.0, T, mc["n_steps"] + 1)
    grid = make_node_grid(m.d, T, n_l=mc["n_l"], n_r=mc["n_r"], mesh=mesh)
    rep = lemma13_bound_check(m, family_of(cfg), spec, beta=cfg["drift"]["beta"],
                              n_paths=mc["n_paths"], n_steps=mc["n_steps"],
                              master_seed=cfg["montecarlo"]["master_seed"], grid=grid,
                              eps_cut=cfg["montecarlo"]["eps_cut"])
    res.add("levels.csv", ["level", "functional", "seminorm", "diagonal", "potential", "kappa",
                           "pairwise_ratio", "master_seed"], rep.rows())
    res.add("anticipation.csv", ["max_abs_future_derivative"], [(rep.anticipation_gap,)])
    res.summary.update(cT=rep.cT, drift_norm=rep.drift_norm, bound_growth=rep.growth_value,
                       s=spec.s, delta=spec.delta, n_paths=rep.n_paths)
    return res


REGISTRY = {
    "symbols": exp_symbols,
    "density": exp_density,
    "scaling": exp_scaling,
    "ctable": exp_ctable,
    "picard": exp_picard,
    "mc_law": exp_mc_law,
    "zvonkin": exp_zvonkin,
    "convergence": exp_convergence,
    "uniqueness": exp_uniqueness,
    "malliavin": exp_malliavin,
}
