import json
import math
from pathlib import Path

import pytest

from levyzvonkin import ConfigError
from levyzvonkin.harness.cli import main
from levyzvonkin.harness.config import SCHEMA, key_reference, load_config, parse_config
from levyzvonkin.harness.runner import run_experiments
from levyzvonkin.harness.verdicts import evaluate, read_tables

SMALL = """
[run]
experiment = density
[model]
d = 1
alpha = 1.8
[drift]
levels = 4,16
[montecarlo]
n_paths = 60
n_steps = 32
[grid]
n = 256
halfwidth = 8
n_slices = 8
[density]
n = 1024
[picard]
n = 512
n_slices = 4
steps_per_slice = 4
[ctable]
n_T = 3
[uniqueness]
burn_in = 0.05
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_defaults_parse_and_every_key_is_documented():
    cfg = parse_config("")
    assert cfg.experiments[0] == "symbols" and len(cfg.experiments) == 10
    ref = key_reference()
    assert len(ref) == sum(len(v) for v in SCHEMA.values())
    assert all(desc for *_, desc in ref)


@pytest.mark.parametrize("text, key", [
    ("[model]\nalpah = 1.5\n", "model.alpah"),
    ("[modle]\nalpha = 1.5\n", "modle"),
    ("[model]\nalpha = 2.0\n", "model.alpha"),
    ("[model]\nd = x\n", "model.d"),
    ("[uniqueness]\nseeds = 1,2\n", "uniqueness.seeds"),
    ("[malliavin]\nalpha_plus_delta = 1.7\n", "malliavin.alpha_plus_delta"),
    ("[uniqueness]\nfactors = 1,3\n", "uniqueness.factors"),
])
def test_bad_configs_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_with_experiment():
    cfg = parse_config("")
    assert cfg.with_experiment("picard").experiments == ["picard"]
    with pytest.raises(ConfigError):
        cfg.with_experiment("nope")


def test_validate_and_usage_exit_codes(small_cfg, tmp_path, capsys):
    assert main(["validate", "--config", str(small_cfg)]) == 0
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nalpah = 1.5\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "model.alpah" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["run", "--config", str(small_cfg), "--experiment", "nope"])
    assert info.value.code == 2


def run_dir(root: Path, name: str) -> Path:
    dirs = sorted((root / name).iterdir())
    assert len(dirs) == 1
    return dirs[0]


def test_run_writes_artifacts_and_passes(small_cfg, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(small_cfg), "--outdir", str(out), "--threads", "1"]) == 0
    d = run_dir(out, "density")
    names = {p.name for p in d.iterdir()}
    assert {"manifest.json", "summary.json", "verdict.json", "density.csv"} <= names
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["master_seed"] == 0 and manifest["config"]["model"]["alpha"] == 1.8
    assert manifest["wall_time_s"] >= 0


def test_verdicts_recompute_from_disk(small_cfg, tmp_path):
    cfg = load_config(small_cfg).with_experiment("zvonkin")
    outcome = run_experiments(cfg, tmp_path)[0]
    again = evaluate("zvonkin", read_tables(outcome.directory), cfg["tolerances"])
    assert [(c.name, c.passed) for c in again] == [(c.name, c.passed) for c in outcome.checks]
    for a, b in zip(again, outcome.checks):
        assert math.isclose(a.value, b.value, rel_tol=1e-12)
    stored = json.loads((outcome.directory / "verdict.json").read_text())
    assert stored["passed"] == outcome.passed


@pytest.mark.parametrize("name", ["density", "zvonkin", "uniqueness"])
def test_runs_are_byte_identical(small_cfg, tmp_path, name):
    cfg = load_config(small_cfg).with_experiment(name)
    a = run_experiments(cfg, tmp_path / "a")[0].directory
    b = run_experiments(cfg, tmp_path / "b")[0].directory
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for n in csvs:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
    for blob in a.glob("*.f64"):
        assert blob.read_bytes() == (b / blob.name).read_bytes()


def test_runtime_error_exit_code_and_failure_record(tmp_path):
    cfg = tmp_path / "long.ini"
    text = SMALL.replace("experiment = density", "experiment = picard")
    cfg.write_text(text.replace("[drift]\n", "[drift]\namplitude = 5\n") + "[horizon]\nT = 50\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--outdir", str(out)]) == 3
    fail = json.loads((run_dir(out, "picard") / "failure.json").read_text())
    assert fail["error"] == "HorizonTooLarge" and 0 < fail["max_horizon"] < 50
