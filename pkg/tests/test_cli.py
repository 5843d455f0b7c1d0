import csv
import json
import os
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from riverweb.cli import EXPERIMENTS, ExperimentConfig, ResultRecord, emit, main, rows_to_csv
from riverweb.errors import ConfigError

SMALL = {
    "survival": ["--n", "16", "--replicas", "500"],
    "width-law": ["--n", "16", "--replicas", "500"],
    "coupling": ["--n", "16", "--replicas", "500"],
    "gen-count-tail": ["--n", "16", "--replicas", "500"],
    "hack": ["--replicas", "2000", "--cap-l", "512", "--min-l", "8"],
    "dmax": ["--replicas", "2000", "--cap-l", "512", "--min-l", "8"],
    "area-tail": ["--n", "16", "--replicas", "500", "--lam", "4", "--table-samples", "100000"],
    "dual-kernel": ["--n", "20", "--replicas", "2000"],
    "invariants": ["--replicas", "50"],
    "oracle-suite": ["--replicas", "500", "--table-samples", "100000"],
    "xi-count": ["--n", "16", "--replicas", "500"],
}


@pytest.fixture(autouse=True)
def _cache(monkeypatch, tmp_path_factory):
    if "RIVERWEB_CACHE" not in os.environ:
        monkeypatch.setenv("RIVERWEB_CACHE", str(tmp_path_factory.getbasetemp() / "cli-tables"))


def _schema():
    return json.loads(resources.files("riverweb").joinpath("schemas/result.schema.json").read_text())


@pytest.mark.parametrize("args", [["survival", "--p", "1.5"], ["survival", "--n", "0"],
                                  ["hack", "--replicas", "0"], ["survival", "--seed", "-1"]])
def test_invalid_config_exits_2(args, tmp_path, capsys):
    assert main(args + ["--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_experiment_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["rivers"])
    assert err.value.code == 2


def test_config_validation_directly():
    with pytest.raises(ConfigError):
        ExperimentConfig("nope").validate()


def test_simulation_error_exits_1(tmp_path, capsys):
    # too few excursions for the tabulated law
    code = main(["area-tail", "--n", "8", "--replicas", "10", "--table-samples", "10",
                 "--out", str(tmp_path)])
    assert code == 1
    assert "InsufficientSamples" in capsys.readouterr().err


def test_io_error_exits_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["survival", "--n", "4", "--replicas", "10", "--out", str(blocker)]) == 1


def test_empty_record_writes_header_only(tmp_path):
    assert rows_to_csv(["a", "b"], []) == "a,b\n"
    emit(ResultRecord("survival", {}, ["replica", "L"]), tmp_path, "csv")
    assert (tmp_path / "survival.csv").read_text() == "replica,L\n"


def test_csv_round_trip(tmp_path):
    rows = [(0, 1.5, True), (1, 0.1 + 0.2, False)]
    emit(ResultRecord("hack", {}, ["replica", "x", "flag"], rows), tmp_path, "csv")
    with open(tmp_path / "hack.csv") as fh:
        back = list(csv.reader(fh))
    assert back[0] == ["replica", "x", "flag"]
    assert [(int(a), float(b), bool(int(c))) for a, b, c in back[1:]] == rows


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_every_experiment_runs(experiment, tmp_path, capsys):
    assert main([experiment, *SMALL[experiment], "--format", "json", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / f"{experiment}.json").read_text())
    jsonschema.validate(doc, _schema())
    summary = json.loads((tmp_path / f"{experiment}_summary.json").read_text())
    assert summary == json.loads(capsys.readouterr().out)
    assert doc["summary"] == summary


def test_invariants_report_no_violations(tmp_path, capsys):
    assert main(["invariants", "--replicas", "500", "--seed", "7", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "invariants_summary.json").read_text())
    assert summary["violations"] == 0


def _run_cli(args, out, threads):
    env = dict(os.environ, RIVERWEB_THREADS=str(threads), NUMBA_NUM_THREADS=str(threads))
    subprocess.run([sys.executable, "-m", "riverweb.cli", *args, "--out", str(out)],
                   check=True, env=env, capture_output=True)
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.parametrize("experiment", ["survival", "dual-kernel", "xi-count"])
def test_outputs_identical_across_thread_counts(experiment, tmp_path):
    args = [experiment, *SMALL[experiment], "--seed", "5"]
    one = _run_cli(args, tmp_path / "a", 1)
    many = _run_cli(args, tmp_path / "b", 4)
    again = _run_cli(args, tmp_path / "c", 4)
    assert one == many == again
    assert one
