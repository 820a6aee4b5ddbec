import json
import os

import pytest
from hypothesis import given, settings, strategies as st

from zeronoise.cli import ConfigError, ExperimentConfig, main

PEANO = """
[problem]
tag = peano_0.5
waive = true

[schedule]
eps = 0.2, 0.1, 0.05

[grid]
h = 0.02
slices = 20

[mc]
N = 2000
dt_mc = 0.002
seed = 11

[output]
dir = {out}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def config(tmp_path, tag, extra="", out="out"):
    return write(tmp_path, f"{tag}.ini",
                 f"[problem]\ntag = {tag}\n{extra}\n[mc]\nseed = 1\n[output]\ndir = {tmp_path / out}\n")


# config -------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(eps=st.lists(st.floats(1e-4, 1.0), min_size=3, max_size=6, unique=True),
       seed=st.integers(0, 2**31), N=st.integers(1, 10**6), workers=st.integers(1, 8),
       h=st.floats(1e-3, 0.5), waive=st.booleans(),
       tags=st.lists(st.sampled_from(["tanh", "gaussian", "sin", "arctan"]), min_size=1, max_size=3))
def test_config_round_trip(eps, seed, N, workers, h, waive, tags):
    cfg = ExperimentConfig(eps=sorted(eps, reverse=True), seed=seed, N=N, workers=workers, h=h,
                           waive=waive, payoffs=tags, problem="cubic")
    again = ExperimentConfig.parse(cfg.serialize())
    assert again == cfg


def test_seed_mandatory():
    with pytest.raises(ConfigError):
        ExperimentConfig.parse("[problem]\ntag = heat\n")


@pytest.mark.parametrize("text", [
    "[problem]\ntag = heat\n[mc]\nseed = 1\n[bogus]\nx = 1\n",
    "[problem]\ntag = heat\ncolour = red\n[mc]\nseed = 1\n",
    "[problem]\ntag = heat\n[mc]\nseed = one\n",
    "[problem]\ntag = heat\n[schedule]\neps = 0.1, 0.2\n[mc]\nseed = 1\n",
    "[problem]\ntag = heat\n[payoffs]\ntags = nope\n[mc]\nseed = 1\n",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.parse(text)


# exit codes ---------------------------------------------------------------

def test_check_cubic_passes_with_note(tmp_path, capsys):
    assert main(["check", config(tmp_path, "cubic")]) == 0
    assert "boundary case" in capsys.readouterr().out
    assert os.path.exists(tmp_path / "out" / "check.json")


def test_check_unknown_tag(tmp_path):
    assert main(["check", config(tmp_path, "nope")]) == 2


def test_check_missing_file(tmp_path):
    assert main(["check", str(tmp_path / "missing.ini")]) == 2


def test_check_counterexample_needs_waiver(tmp_path):
    assert main(["check", config(tmp_path, "counterexample")]) == 1
    assert main(["check", config(tmp_path, "counterexample", "waive = true")]) == 0


def test_memory_gate(tmp_path, capsys):
    path = config(tmp_path, "heat", "[grid]\nh = 1e-8\nbox = -5, 5\n")
    assert main(["run", path]) == 3
    assert "exceeds budget" in capsys.readouterr().err


def test_catalog(capsys):
    assert main(["catalog", "--json"]) == 0
    tags = {r["tag"] for r in json.loads(capsys.readouterr().out)}
    assert {"heat", "cubic", "counterexample", "peano_0.5"} <= tags


# run determinism and compare ---------------------------------------------

@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    outs = []
    for w in (1, 3):
        out = base / f"w{w}"
        path = base / f"w{w}.ini"
        path.write_text(PEANO.format(out=out))
        assert main(["run", str(path), "--workers", str(w)]) == 0
        outs.append(out)
    return outs


def test_run_outputs(two_runs):
    a, _ = two_runs
    for name in ("report.json", "report.md", "schema.json", "cauchy.csv", "probes.csv",
                 "mc_fd.csv", "fdd.csv", "feller.csv", "jumps.csv", "tightness.csv"):
        assert (a / name).exists(), name
    schema = json.loads((a / "schema.json").read_text())
    for name, cols in schema.items():
        assert (a / name).read_text().splitlines()[0].split(",") == cols


def test_run_byte_identical_across_workers(two_runs):
    a, b = two_runs
    for name in ("cauchy.csv", "probes.csv", "mc_fd.csv", "fdd.csv", "tightness.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_compare(two_runs, tmp_path):
    a, b = (str(d / "report.json") for d in two_runs)
    assert main(["compare", a, b]) == 0
    assert main(["compare", a, b, "--sigma", "3"]) == 0
    rep = json.loads(open(a).read())
    rep["tag"] = "other"
    other = write(tmp_path, "other.json", json.dumps(rep))
    assert main(["compare", a, other]) == 2
    rep = json.loads(open(a).read())
    rep["probes"][0]["u"][0] += 1.0
    moved = write(tmp_path, "moved.json", json.dumps(rep))
    assert main(["compare", a, moved]) == 1
