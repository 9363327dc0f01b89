"""Run experiments and lay out their artifacts.

Layout: ``<outdir>/<experiment>/<timestamp>/`` holding ``manifest.json``,
the experiment's CSV tables, ``summary.json`` and ``verdict.json``.  Tables
carry no timing information, so identical configs give identical CSV bytes.
"""

from __future__ import annotations

import datetime as _dt
import platform
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from ..errors import LevyZvonkinError
from ..io import to_jsonable, write_blob, write_csv, write_json
from .. import spectral
from .config import ExperimentConfig
from .experiments import REGISTRY
from .verdicts import evaluate


@dataclass
class RunOutcome:
    experiment: str
    directory: Path
    passed: bool
    checks: list
    error: str | None = None


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _run_dir(root: Path, name: str) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S_%fZ")
    d = root / name / stamp
    i = 1
    while d.exists():
        d = root / name / f"{stamp}_{i}"
        i += 1
    d.mkdir(parents=True)
    return d


def run_one(cfg: ExperimentConfig, name: str, root: Path) -> RunOutcome:
    """Run one experiment; library errors are recorded in ``failure.json`` and re-raised."""
    out = _run_dir(root, name)
    seed = cfg["montecarlo"]["master_seed"]
    manifest = {"experiment": name, "config": cfg.echo(), "config_path": cfg.path,
                "versions": _versions(), "master_seed": seed,
                "started_utc": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    t0 = time.perf_counter()
    try:
        result = REGISTRY[name](cfg)
    except LevyZvonkinError as exc:
        manifest["wall_time_s"] = time.perf_counter() - t0
        fail = {"error": type(exc).__name__, "message": str(exc), "master_seed": seed}
        for attr in ("max_horizon", "residual", "needed_cutoff", "needed_n", "key"):
            if getattr(exc, attr, None) is not None:
                fail[attr] = getattr(exc, attr)
        if getattr(exc, "history", None):
            fail["history"] = exc.history
        write_json(out / "failure.json", fail)
        write_json(out / "manifest.json", manifest)
        raise
    manifest["wall_time_s"] = time.perf_counter() - t0
    for fname, (header, rows) in result.tables.items():
        write_csv(out / fname, header, rows)
    for fname, (arr, meta) in result.blobs.items():
        write_blob(out / fname, arr, dict(meta, master_seed=seed))
    checks = evaluate(name, result.tables, cfg["tolerances"], alpha=cfg["model"]["alpha"])
    passed = all(c.passed for c in checks)
    write_json(out / "summary.json", dict(result.summary, master_seed=seed))
    write_json(out / "verdict.json", {"experiment": name, "passed": passed, "master_seed": seed,
                                      "checks": [c.as_dict() for c in checks]})
    write_json(out / "manifest.json", to_jsonable(manifest))
    return RunOutcome(name, out, passed, checks)


def run_experiments(cfg: ExperimentConfig, outdir=None, threads: int | None = None) -> list:
    root = Path(outdir if outdir is not None else cfg["run"]["outdir"])
    n = threads if threads is not None else cfg["run"]["threads"]
    spectral.set_workers(n or None)
    return [run_one(cfg, name, root) for name in cfg.experiments]
