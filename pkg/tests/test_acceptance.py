"""Acceptance suite: every criterion at its stated tolerance on the baseline config.

Each test runs (or reuses) one harness experiment, re-reads the CSVs it wrote
and checks the thresholds literally.  The stored verdict must agree.  A
summary line per criterion is printed at the end of the session.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from levyzvonkin.harness.config import load_config
from levyzvonkin.harness.runner import run_one
from levyzvonkin.harness.verdicts import read_tables

ROOT = Path(__file__).resolve().parents[1]
BASELINE = ROOT / "configs" / "default.ini"
ALPHA, BETA_SCALING = 1.8, 0.5


class Runs:
    """Lazy cache of harness runs keyed by (experiment, d)."""

    def __init__(self, root: Path):
        self.root = root
        self.cache = {}

    def get(self, name: str, d: int = 1, root: Path | None = None):
        key = (name, d, root)
        if key not in self.cache:
            cfg = load_config(BASELINE).with_experiment(name)
            cfg.values["model"]["d"] = d
            out = run_one(cfg, name, root or self.root / f"d{d}")
            tables = read_tables(out.directory)
            rows = {k: [dict(zip(h, r)) for r in rs] for k, (h, rs) in tables.items()}
            manifest = json.loads((out.directory / "manifest.json").read_text())
            self.cache[key] = (out, rows, manifest, cfg)
        return self.cache[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


def col(rows, key):
    return np.array([float(r[key]) for r in rows])


def loglog_slope(x, y):
    return np.polyfit(np.log(x), np.log(y), 1)[0]


def assert_runtime(manifest, limit_s):
    assert manifest["wall_time_s"] < limit_s, manifest["wall_time_s"]


@pytest.mark.criterion(1, "generator on cosines, 1e-4 relative, d in {1,2}, alpha in {1.2,1.5,1.8}")
def test_symbol_identities(runs):
    out, t, man, _ = runs.get("symbols")
    gen = t["generator_cosine.csv"]
    cases = {(int(r["d"]), float(r["alpha"])) for r in gen}
    assert cases == {(d, a) for d in (1, 2) for a in (1.2, 1.5, 1.8)}
    for case in cases:
        assert sum((int(r["d"]), float(r["alpha"])) == case for r in gen) == 10
    assert np.all(col(gen, "rel_error") <= 1e-4), col(gen, "rel_error").max()
    assert_runtime(man, 60)
    assert out.passed


@pytest.mark.criterion(2, "scaled exponent >= lower bound - 1e-8 on a 20x20 (t, u) grid")
def test_scaled_lower_bound(runs):
    _, t, man, _ = runs.get("symbols")
    rows = t["scaled_bound.csv"]
    for d in (1, 2):
        for a in (1.2, 1.5, 1.8):
            sub = [r for r in rows if int(r["d"]) == d and float(r["alpha"]) == a]
            assert len({r["t"] for r in sub}) == 20 and len({r["u"] for r in sub}) == 20
    assert col(rows, "gap").min() >= -1e-8
    assert_runtime(man, 60)


@pytest.mark.criterion(3, "growth slope of the lower bound = alpha +- 0.05 on [1e2, 1e4]")
def test_growth_exponent(runs):
    _, t, man, cfg = runs.get("symbols")
    assert cfg["symbols"]["growth_u_min"] == 1e2 and cfg["symbols"]["growth_u_max"] == 1e4
    rows = t["growth.csv"]
    assert np.all(np.abs(col(rows, "slope") - col(rows, "alpha")) <= 0.05)
    assert_runtime(man, 60)


@pytest.mark.criterion(4, "density mass 1e-4, symmetry 1e-8, Chapman-Kolmogorov 1e-3")
@pytest.mark.parametrize("d, n", [(1, 4096), (2, 256)])
def test_density_sanity(runs, d, n):
    out, t, man, _ = runs.get("density", d)
    rows = t["density.csv"]
    assert all(int(r["n"]) == n and int(r["d"]) == d for r in rows)
    assert col(rows, "mass_error").max() <= 1e-4
    assert col(rows, "symmetry_error").max() <= 1e-8
    assert col(rows, "ck_sup_error").max() <= 1e-3
    assert_runtime(man, 120)
    assert out.passed


@pytest.mark.criterion(5, "derivative decay slopes -1/a, -2/a, -1/a, -(2-b)/a")
def test_derivative_scaling_rates(runs):
    out, t, man, cfg = runs.get("scaling")
    sc = cfg["scaling"]
    assert sc["t_min"] == 0.05 and sc["t_max"] == 1.0 and sc["n_times"] >= 8
    assert sc["beta"] == BETA_SCALING and cfg["model"]["alpha"] == ALPHA
    rows = t["scaling.csv"]
    targets = sorted([(-1 / ALPHA, 0.07), (-2 / ALPHA, 0.1), (-1 / ALPHA, 0.07),
                      (-(2 - BETA_SCALING) / ALPHA, 0.1)])
    got = sorted((float(r["expected"]), float(r["tolerance"])) for r in rows)
    assert np.allclose(got, targets)
    for r in rows:
        assert int(r["points"]) >= 8
        assert abs(float(r["slope"]) - float(r["expected"])) <= float(r["tolerance"]), r
    assert_runtime(man, 600)
    assert out.passed


@pytest.mark.criterion(6, "C(T) monotone within 5% and log-slope (a-1)/a +- 0.1")
def test_ct_behaviour(runs):
    out, t, man, _ = runs.get("ctable")
    rows = t["ctable.csv"]
    T, C = col(rows, "T"), col(rows, "C")
    assert np.all(C[1:] >= 0.95 * C[:-1])
    assert abs(loglog_slope(T, C) - (ALPHA - 1) / ALPHA) <= 0.1
    assert_runtime(man, 600)
    assert out.passed


@pytest.mark.criterion(7, "Picard ratios <= 0.55, residual <= 1e-2, terminal slice 0")
def test_picard_certificate(runs):
    out, t, man, cfg = runs.get("picard")
    assert cfg["picard"]["n"] == 2048 and cfg["picard"]["n_slices"] == 8
    summary = json.loads((out.directory / "summary.json").read_text())
    assert summary["contraction_ok"] and 2 * summary["cT"] * summary["drift_norm"] <= 0.5
    ratios = col(t["picard.csv"], "ratio")
    ratios = ratios[~np.isnan(ratios)]
    assert ratios.size >= 1 and ratios.max() <= 0.55
    res = t["residuals.csv"]
    assert len(res) == cfg["picard"]["n_slices"] - 1
    assert col(res, "relative").max() <= 1e-2
    term = t["terminal.csv"][0]
    assert float(term["max_abs_u"]) == 0.0
    assert_runtime(man, 600)
    assert out.passed


@pytest.mark.criterion(8, "driving law: mean, variance ratio, 5 CF values within 3 SE, 1e4 paths")
def test_driving_law(runs):
    out, t, man, cfg = runs.get("mc_law")
    assert cfg["mc_law"]["n_paths"] == 10_000
    rows = t["mc_law.csv"]
    names = [r["quantity"] for r in rows]
    assert "mean_x1" in names and "variance_ratio_x1" in names
    assert sum(n.startswith("cf_") for n in names) == 5
    for r in rows:
        assert abs(float(r["estimate"]) - float(r["exact"])) <= 3 * float(r["stderr"]), r
    assert_runtime(man, 300)
    assert out.passed


@pytest.mark.criterion(9, "Zvonkin residual RMS halves (2 +- 30%) under joint refinement")
def test_zvonkin_residual_halves(runs):
    out, t, man, cfg = runs.get("zvonkin")
    assert cfg["montecarlo"]["n_paths"] == 1000 and cfg["drift"]["name"] == "holder"
    assert cfg["drift"]["amplitude"] == 0.5 and cfg["drift"]["beta"] == 0.7
    rows = t["zvonkin.csv"]
    rms = col(rows, "rms")
    assert np.allclose(col(rows, "dt")[:-1] / col(rows, "dt")[1:], 2.0)
    assert np.allclose(col(rows, "h")[:-1] / col(rows, "h")[1:], 2.0)
    ratio = rms[:-1] / rms[1:]
    assert np.all(np.abs(ratio - 2.0) <= 0.6), ratio
    assert_runtime(man, 900)
    assert out.passed


@pytest.mark.criterion(10, "coupled level gaps decrease (2 SE) at 4 checkpoints; last <= first/4")
def test_strong_construction(runs):
    out, t, man, cfg = runs.get("convergence")
    assert cfg["drift"]["levels"] == [4, 8, 16, 32, 64] and cfg["montecarlo"]["n_paths"] == 1000
    rows = t["convergence.csv"]
    times = sorted({float(r["t"]) for r in rows})
    assert len(times) == 4
    for tt in times:
        sub = [r for r in rows if float(r["t"]) == tt]
        d, s = col(sub, "l2_distance"), col(sub, "stderr")
        assert np.all(d[1:] < d[:-1] + 2 * np.hypot(s[1:], s[:-1]))
        assert d[-1] <= 0.25 * d[0]
    assert_runtime(man, 900)
    assert out.passed


@pytest.mark.criterion(11, "step-size gaps decrease with dt; identical runs differ by exactly 0")
def test_uniqueness(runs):
    out, t, man, _ = runs.get("uniqueness")
    rows = sorted(t["uniqueness.csv"], key=lambda r: float(r["dt"]))
    ms = col(rows, "mean_sq_gap")
    assert ms.size >= 2 and np.all(np.diff(ms) > 0)
    assert float(t["identical.csv"][0]["max_abs_gap"]) == 0.0
    assert_runtime(man, 300)
    assert out.passed


@pytest.mark.criterion(12, "Malliavin routes, no anticipation, uniform ratio, stable functional")
def test_malliavin_suite(runs):
    out, t, man, cfg = runs.get("malliavin")
    mc = cfg["malliavin"]
    assert mc["n_paths"] == 200 and mc["n_l"] == 16 and mc["n_r"] == 16
    assert mc["s"] == 0.25 and mc["alpha_plus_delta"] == 1.9
    # (a) agreement error halves under refinement
    err = col(t["routes.csv"], "sup_error")
    assert np.all(np.abs(err[:-1] / err[1:] - 2.0) <= 0.6), err
    # (b) derivatives with respect to future perturbations vanish exactly
    assert float(t["anticipation.csv"][0]["max_abs_future_derivative"]) == 0.0
    levels = t["levels.csv"]
    # (c) pairwise ratio bounded uniformly over levels
    pr = col(levels, "pairwise_ratio")
    assert np.all(np.isfinite(pr)) and (pr.max() - pr.min()) / pr.min() <= 0.2
    # (d) functional finite and level-stable within 20%
    f = col(levels, "functional")
    assert np.all(np.isfinite(f)) and (f.max() - f.min()) / f.min() <= 0.2
    assert_runtime(man, 1200)
    assert out.passed


@pytest.mark.criterion(13, "same config and seed give byte-identical CSVs")
def test_determinism(runs, tmp_path):
    for name in ("picard", "mc_law", "zvonkin", "convergence", "uniqueness", "malliavin"):
        first, *_ = runs.get(name)
        second, *_ = runs.get(name, root=tmp_path)
        csvs = sorted(p.name for p in first.directory.glob("*.csv"))
        assert csvs
        for c in csvs:
            assert (first.directory / c).read_bytes() == (second.directory / c).read_bytes(), \
                f"{name}/{c}"
