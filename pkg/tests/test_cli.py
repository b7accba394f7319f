import json
import subprocess
import sys

import pytest

from phenoglrm.cli import main


@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    out = tmp_path_factory.mktemp("planted")
    assert main(["synth", "--output", str(out), "--m", "120", "--n-noise", "4",
                 "--n-clusters", "3", "--seed", "2"]) == 0
    return out


def _data(planted):
    return ["--input", str(planted / "data.csv"), "--schema", str(planted / "schema.yaml")]


def _error(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


def test_preprocess(planted, tmp_path):
    assert main(["preprocess", *_data(planted), "--output", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["n_rows"] == 120 and len(report["columns"]) == 9
    assert {"kind", "variance"} <= set(report["columns"][0])


def test_preprocess_all_incomplete(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("a,b\n1,\n,2\n")
    (tmp_path / "s.yaml").write_text("columns:\n  a: numeric\n  b: numeric\n")
    code = main(["preprocess", "--input", str(tmp_path / "d.csv"), "--schema", str(tmp_path / "s.yaml"),
                 "--output", str(tmp_path / "o")])
    assert code == 3
    assert _error(capsys)["error"] == "EmptyDatasetError"


def test_select_cluster_necessity(planted, tmp_path):
    sel, clu, nec = tmp_path / "sel", tmp_path / "clu", tmp_path / "nec"
    assert main(["select", *_data(planted), "--output", str(sel), "--seed", "1", "--K", "2"]) == 0
    report = json.loads((sel / "selection.json").read_text())
    assert len(report["per_fold"]) == 2 and report["final_features"]
    assert (sel / "config.yaml").exists()

    assert main(["cluster", *_data(planted), "--output", str(clu), "--features", str(sel / "features.txt"),
                 "--n-min", "3", "--n-max", "3", "--group-by", "x00"]) == 0
    summary = json.loads((clu / "cluster.json").read_text())
    assert summary["n_clusters"] == 3 and sum(summary["sizes"]) == 120
    assert (clu / "profile_by_x00.csv").exists()

    assert main(["necessity", *_data(planted), "--output", str(nec), "--features",
                 str(sel / "selection.json"), "--labels", str(clu / "labels.csv"), "--repeats", "2"]) == 0
    samples = (nec / "necessity_samples.csv").read_text().splitlines()
    assert len(samples) == 1 + 2 * len(report["final_features"])


def test_run_all_requires_seed(planted, tmp_path, capsys):
    assert main(["run-all", *_data(planted), "--output", str(tmp_path)]) == 2
    err = _error(capsys)
    assert err["exit_code"] == 2 and "--seed" in err["message"]


def test_config_file_and_flag_precedence(planted, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("K: 2\nrepeats: 3\nseed: 5\n")
    out = tmp_path / "o"
    assert main(["run-all", *_data(planted), "--output", str(out), "--config", str(cfg), "--seed", "7"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["K"] == 2 and manifest["config"]["repeats"] == 3
    assert manifest["seed"] == 7


def test_run_all_deterministic(planted, tmp_path):
    args = [*_data(planted), "--seed", "4", "--K", "3", "--repeats", "3"]
    assert main(["run-all", *args, "--output", str(tmp_path / "a")]) == 0
    assert main(["run-all", *args, "--output", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_timings_opt_in(planted, tmp_path):
    out = tmp_path / "t"
    assert main(["run-all", *_data(planted), "--seed", "1", "--K", "2", "--repeats", "1",
                 "--timings", "--output", str(out)]) == 0
    timings = json.loads((out / "manifest.json").read_text())["timings_seconds"]
    assert {"select", "necessity", "cluster", "stability"} <= set(timings)


@pytest.mark.parametrize("argv, code, error", [
    (["select", "--output", "x"], 2, "ConfigError"),
    (["bogus"], 2, "ConfigError"),
])
def test_usage_errors(argv, code, error, capsys):
    assert main(argv) == code
    assert _error(capsys)["error"] == error


def test_data_and_config_errors(planted, tmp_path, capsys):
    assert main(["select", "--input", str(tmp_path / "none.csv"), "--schema", str(planted / "schema.yaml"),
                 "--output", str(tmp_path / "o"), "--seed", "1"]) == 3
    assert _error(capsys)["exit_code"] == 3
    assert main(["select", *_data(planted), "--output", str(tmp_path / "o"), "--gamma0", "80"]) == 2
    err = _error(capsys)
    assert err["error"] == "SweepError"
    bad = tmp_path / "bad.yaml"
    bad.write_text("K: 1\n")
    assert main(["select", *_data(planted), "--output", str(tmp_path / "o"), "--config", str(bad)]) == 2
    assert _error(capsys)["message"] == "K must be >= 2"
    (tmp_path / "s.yaml").write_text("columns:\n  x00: ordinal\n")
    assert main(["preprocess", "--input", str(planted / "data.csv"), "--schema", str(tmp_path / "s.yaml"),
                 "--output", str(tmp_path / "o")]) == 2
    assert _error(capsys)["error"] == "SchemaError"


def test_entry_point_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "phenoglrm.cli", "synth", "--output", str(tmp_path),
                           "--m", "20", "--n-noise", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "truth.json").exists()
    proc = subprocess.run([sys.executable, "-m", "phenoglrm.cli", "run-all", "--output", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["exit_code"] == 2
