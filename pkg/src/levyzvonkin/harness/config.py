"""Strict INI configuration for the experiment driver.

Every key has a type, a default and a validity rule.  Unknown sections or
keys are rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError

EXPERIMENTS = ("symbols", "density", "scaling", "ctable", "picard", "mc_law", "zvonkin",
               "convergence", "uniqueness", "malliavin")
DRIFTS = ("holder", "sine", "zero")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _opt_float(text):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else float(t)


def _pos(v):
    return v > 0


def _all_pos(v):
    return len(v) > 0 and all(x > 0 for x in v)


# section -> key -> (parser, default text, check, description)
SCHEMA = {
    "run": {
        "experiment": (str, "all", lambda v: v == "all" or v in EXPERIMENTS,
                       "experiment name or 'all'"),
        "outdir": (str, "results", lambda v: bool(v), "output root directory"),
        "threads": (int, "0", lambda v: v >= 0, "FFT worker cap (0 = library default)"),
    },
    "model": {
        "d": (int, "1", lambda v: v in (1, 2), "space dimension (1 or 2)"),
        "alpha": (float, "1.8", lambda v: 1 < v < 2, "stability index in (1, 2)"),
    },
    "drift": {
        "name": (str, "holder", lambda v: v in DRIFTS,
                 "holder: amplitude*min(|x|^beta, 1); sine: amplitude*sin(x_1); zero"),
        "beta": (float, "0.7", lambda v: 0 < v < 1, "Hoelder exponent in (0, 1)"),
        "amplitude": (float, "0.5", lambda v: v >= 0, "drift amplitude"),
        "levels": (_ints, "4,8,16,32,64", lambda v: _all_pos(v) and v == sorted(set(v)),
                   "mollification levels, strictly increasing"),
    },
    "horizon": {
        "T": (float, "0.25", _pos, "time horizon"),
    },
    "grid": {
        "halfwidth": (float, "10.0", _pos, "box half-width for the backward solver"),
        "n": (int, "1024", lambda v: v >= 16 and v % 2 == 0, "nodes per axis (even)"),
        "n_slices": (int, "32", _pos, "output time slices of the backward solver"),
        "steps_per_slice": (int, "2", _pos, "exponential steps per slice"),
        "pad_factor": (int, "2", lambda v: v >= 1, "FFT padding factor"),
    },
    "montecarlo": {
        "n_paths": (int, "1000", _pos, "paths for the path experiments"),
        "master_seed": (int, "0", lambda v: v >= 0, "master seed"),
        "eps_cut": (_opt_float, "auto", lambda v: v is None or 0 < v < 1,
                    "small-jump cut (auto: 1e-3 in d=1, 1e-2 in d=2)"),
        "n_steps": (int, "256", _pos, "finest Euler steps on [0, T]"),
    },
    "tolerances": {
        "picard_ratio": (float, "0.55", _pos, "max successive Picard difference ratio"),
        "pde_residual": (float, "1e-2", _pos, "backward residual relative to sup|phi|"),
        "halving_band": (float, "0.3", _pos, "relative band around a factor 2"),
        "level_spread": (float, "0.2", _pos, "max relative spread of the functional"),
        "n_se": (float, "3", _pos, "standard errors for Monte Carlo checks"),
        "convergence_n_se": (float, "2", _pos, "standard errors for monotone decrease"),
        "final_gap_ratio": (float, "0.25", _pos, "max last/first level gap"),
        "symbol_rel": (float, "1e-4", _pos, "generator on cosines, relative"),
        "scaling_bound": (float, "1e-8", _pos, "slack of the scaled-exponent bound"),
        "growth_slope": (float, "0.05", _pos, "tolerance of the growth slope"),
        "mass": (float, "1e-4", _pos, "density mass tolerance"),
        "symmetry": (float, "1e-8", _pos, "density symmetry tolerance"),
        "chapman_kolmogorov": (float, "1e-3", _pos, "semigroup-law sup tolerance"),
        "ct_monotone": (float, "0.05", _pos, "relative monotonicity slack of C(T)"),
        "ct_slope": (float, "0.1", _pos, "tolerance of the C(T) log-slope"),
    },
    "symbols": {
        "alphas": (_floats, "1.2,1.5,1.8", lambda v: len(v) > 0 and all(1 < a < 2 for a in v),
                   "stability indices tested"),
        "dims": (_ints, "1,2", lambda v: len(v) > 0 and set(v) <= {1, 2}, "dimensions tested"),
        "n_frequencies": (int, "10", _pos, "random frequencies per case"),
        "u_max": (float, "8.0", _pos, "largest frequency radius"),
        "n_grid": (int, "20", lambda v: v >= 2, "points per axis of the (t, u) grid"),
        "growth_u_min": (float, "1e2", _pos, "growth fit lower frequency"),
        "growth_u_max": (float, "1e4", _pos, "growth fit upper frequency"),
    },
    "density": {
        "t": (_floats, "0.1,0.25", _all_pos, "times; the semigroup law uses t and 2t"),
        "halfwidth": (float, "8.0", _pos, "box half-width"),
        "n": (int, "0", lambda v: v == 0 or (v >= 16 and v % 2 == 0),
              "nodes per axis (0: 4096 in d=1, 256 in d=2)"),
    },
    "scaling": {
        "beta": (float, "0.5", lambda v: 0 < v < 1, "exponent of the cusp family"),
        "t_min": (float, "0.05", _pos, "smallest time"),
        "t_max": (float, "1.0", _pos, "largest time"),
        "n_times": (int, "10", lambda v: v >= 4, "log-spaced times"),
        "halfwidth": (float, "20.0", _pos, "box half-width"),
        "n": (int, "8192", lambda v: v >= 16 and v % 2 == 0, "nodes per axis"),
    },
    "ctable": {
        "beta": (float, "0.7", lambda v: 0 < v < 1, "Hoelder exponent"),
        "T_min": (float, "1e-3", _pos, "smallest horizon"),
        "T_max": (float, "1.0", _pos, "largest horizon"),
        "n_T": (int, "6", lambda v: v >= 3, "log-spaced horizons"),
    },
    "picard": {
        "n": (int, "2048", lambda v: v >= 16 and v % 2 == 0, "nodes per axis"),
        "halfwidth": (float, "8.0", _pos, "box half-width"),
        "n_slices": (int, "8", _pos, "output slices"),
        "steps_per_slice": (int, "8", _pos, "exponential steps per slice"),
    },
    "mc_law": {
        "t": (float, "0.1", _pos, "time of the law check"),
        "n_paths": (int, "10000", lambda v: v >= 10, "samples"),
        "frequencies": (_floats, "0.3,1,2,4,8", _all_pos, "characteristic function frequencies"),
    },
    "zvonkin": {
        "refinements": (int, "1", lambda v: v >= 1, "joint halvings of dt and grid spacing"),
        "lu_method": (str, "quadrature", lambda v: v in ("quadrature", "spectral"),
                      "generator evaluation for u"),
    },
    "convergence": {
        "n_checkpoints": (int, "4", _pos, "equispaced checkpoints in (0, T]"),
    },
    "uniqueness": {
        "factors": (_ints, "1,2,4,8", _all_pos, "coarsening factors of the finest mesh"),
        "seeds": (_ints, "", lambda v: all(x >= 0 for x in v),
                  "master seeds of the coupled runs (must coincide; empty: montecarlo seed)"),
        "burn_in": (float, "0.05", lambda v: v >= 0, "time before the coarse run switches drift"),
    },
    "malliavin": {
        "s": (float, "0.25", lambda v: 0 < v < 0.5, "fractional order in (0, 1/2)"),
        "alpha_plus_delta": (float, "1.9", lambda v: 0 < v < 2, "alpha + delta, below 2"),
        "n_paths": (int, "200", _pos, "paths"),
        "n_steps": (int, "64", _pos, "Euler steps on [0, T]"),
        "n_l": (int, "16", _pos, "perturbation times"),
        "n_r": (int, "16", lambda v: v >= 2, "mark radii"),
        "smooth_amplitude": (float, "0.3", lambda v: v >= 0,
                             "amplitude of the smooth drift for the route comparison"),
        "route_slices": (_ints, "16,32,64", lambda v: _all_pos(v) and len(v) >= 2,
                         "slice counts of the route comparison (grid refined alongside)"),
        "route_n": (int, "512", lambda v: v >= 16 and v % 2 == 0,
                    "nodes per axis at the coarsest route level"),
        "route_paths": (int, "100", _pos, "paths of the route comparison"),
    },
}


@dataclass
class ExperimentConfig:
    """Parsed configuration: ``values[section][key]`` plus the source text."""

    values: dict
    source: str
    path: str | None = None

    def __getitem__(self, section):
        return self.values[section]

    @property
    def experiments(self) -> list:
        e = self.values["run"]["experiment"]
        return list(EXPERIMENTS) if e == "all" else [e]

    def with_experiment(self, name: str) -> "ExperimentConfig":
        if name != "all" and name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}", key="run.experiment")
        vals = {s: dict(v) for s, v in self.values.items()}
        vals["run"]["experiment"] = name
        return ExperimentConfig(vals, self.source, self.path)

    def echo(self) -> dict:
        return {s: dict(v) for s, v in self.values.items()}


def parse_config(text: str, path: str | None = None) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` naming the offending key."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", key=sec)
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}", key=f"{sec}.{key}")
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parse, default, check, _) in keys.items():
            raw = cp[sec][key] if cp.has_section(sec) and key in cp[sec] else default
            try:
                val = parse(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{sec}.{key}: cannot parse {raw!r}", key=f"{sec}.{key}") from exc
            if not check(val):
                raise ConfigError(f"{sec}.{key}: invalid value {raw!r}", key=f"{sec}.{key}")
            values[sec][key] = val
    _cross_checks(values)
    return ExperimentConfig(values, text, path)


def _cross_checks(v):
    if v["malliavin"]["alpha_plus_delta"] <= v["model"]["alpha"]:
        raise ConfigError("malliavin.alpha_plus_delta must exceed model.alpha (delta > 0)",
                          key="malliavin.alpha_plus_delta")
    if v["scaling"]["t_min"] >= v["scaling"]["t_max"]:
        raise ConfigError("scaling.t_min must be below scaling.t_max", key="scaling.t_min")
    if v["ctable"]["T_min"] >= v["ctable"]["T_max"]:
        raise ConfigError("ctable.T_min must be below ctable.T_max", key="ctable.T_min")
    if v["symbols"]["growth_u_min"] >= v["symbols"]["growth_u_max"]:
        raise ConfigError("symbols.growth_u_min must be below growth_u_max",
                          key="symbols.growth_u_min")
    seeds = v["uniqueness"]["seeds"]
    if len(set(seeds)) > 1:
        raise ConfigError("uniqueness runs need coupled noise: uniqueness.seeds must coincide",
                          key="uniqueness.seeds")
    if v["uniqueness"]["burn_in"] > v["horizon"]["T"]:
        raise ConfigError("uniqueness.burn_in exceeds the horizon", key="uniqueness.burn_in")
    n_steps = v["montecarlo"]["n_steps"]
    for f in v["uniqueness"]["factors"]:
        if n_steps % f:
            raise ConfigError("uniqueness.factors must divide montecarlo.n_steps",
                              key="uniqueness.factors")
    if n_steps % v["convergence"]["n_checkpoints"]:
        raise ConfigError("convergence.n_checkpoints must divide montecarlo.n_steps",
                          key="convergence.n_checkpoints")
    # perturbation times are cell midpoints and must fall on the Euler mesh
    if v["malliavin"]["n_steps"] % (2 * v["malliavin"]["n_l"]):
        raise ConfigError("malliavin.n_steps must be a multiple of 2 * malliavin.n_l",
                          key="malliavin.n_steps")
    if any(k % 8 for k in v["malliavin"]["route_slices"]):
        raise ConfigError("malliavin.route_slices must be multiples of 8",
                          key="malliavin.route_slices")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}", key=None) from exc
    return parse_config(text, str(p))


def key_reference() -> list:
    """``(section, key, default, description)`` for every accepted key."""
    return [(sec, key, spec[1], spec[3]) for sec, keys in SCHEMA.items()
            for key, spec in keys.items()]
