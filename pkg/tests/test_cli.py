import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cenn_forge.cli import main
from cenn_forge.netspec import write_idx


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _error(err):
    return json.loads(err.strip().splitlines()[-1])


def test_compile_writes_reports(tmp_path, capsys):
    code, out, _ = _run(["compile", "--network", "mnist_design1", "--out", str(tmp_path)], capsys)
    assert code == 0
    run = tmp_path / "run-0001"
    assert out.strip() == str(run)
    names = sorted(p.name for p in run.iterdir())
    assert names == ["analytic.csv", "comparison.csv", "cost.csv", "summary.json", "trace.txt"]
    summary = json.loads((run / "summary.json").read_text())
    assert summary["layers"]["relu1"]["cycles"] == 2
    assert (run / "trace.txt").read_text().startswith("# network=mnist_design1")


def test_runs_accumulate(tmp_path, capsys):
    for _ in range(2):
        assert _run(["compile", "--out", str(tmp_path), "--quiet"], capsys)[0] == 0
    (tmp_path / "run-0007").mkdir()
    _run(["compile", "--out", str(tmp_path), "--quiet"], capsys)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run-0001", "run-0002", "run-0007", "run-0008"]


def test_run_with_random_weights(tmp_path, capsys):
    code, _, _ = _run(["run", "--network", "mnist_design2", "--weights", "random", "--synthetic", "5",
                       "--out", str(tmp_path), "--quiet"], capsys)
    assert code == 0
    run = tmp_path / "run-0001"
    meta = json.loads((run / "metadata.json").read_text())
    assert meta["images"] == 5
    assert meta["files"] == sorted(p.name for p in run.iterdir())
    assert 0.0 <= meta["clip_rate"] <= 1.0
    rows = list(csv.DictReader((run / "predictions.csv").open()))
    assert len(rows) == 5
    assert set(rows[0]) >= {"index", "label", "prediction", "score0", "score9"}


def test_run_costing_only(tmp_path, capsys):
    code, _, _ = _run(["run", "--out", str(tmp_path), "--quiet", "--bits", "8"], capsys)
    assert code == 0
    meta = json.loads((tmp_path / "run-0001" / "metadata.json").read_text())
    assert meta["images"] == 0
    assert meta["cost_params"] == "paper-8bit-32nm"
    assert meta["cost"]["delay_ns"] == pytest.approx(1442, rel=0.01)


def test_figures_are_byte_stable(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    for k in range(2):
        _run(["run", "--out", str(tmp_path / str(k)), "--quiet", "--figures"], capsys)
    a, b = (tmp_path / str(k) / "run-0001" / "cost.png" for k in range(2))
    assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert a.read_bytes() == b.read_bytes()


def test_weights_manifest_matches_random(tmp_path, capsys):
    manifest = tmp_path / "w.json"
    assert _run(["weights", "--network", "mnist_design1", "--seed", "3", "--output", str(manifest),
                 "--quiet"], capsys)[0] == 0
    common = ["--synthetic", "4", "--seed", "3", "--quiet"]
    _run(["run", "--weights", str(manifest), "--out", str(tmp_path / "a")] + common, capsys)
    _run(["run", "--weights", "random", "--out", str(tmp_path / "b")] + common, capsys)
    pa, pb = (tmp_path / d / "run-0001" / "predictions.csv" for d in "ab")
    assert pa.read_text() == pb.read_text()


def test_run_on_idx_files(tmp_path, capsys):
    rng = np.random.default_rng(0)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ip, rng.integers(0, 256, (6, 28, 28)))
    write_idx(lp, rng.integers(0, 10, 6))
    code, _, _ = _run(["run", "--weights", "random", "--images", str(ip), "--labels", str(lp), "--limit", "4",
                       "--mode", "quantized", "--out", str(tmp_path / "r"), "--quiet"], capsys)
    assert code == 0
    meta = json.loads((tmp_path / "r" / "run-0001" / "metadata.json").read_text())
    assert meta["images"] == 4 and meta["mode"] == "quantized"


def test_threads_do_not_change_results(tmp_path, capsys, monkeypatch):
    common = ["run", "--weights", "random", "--synthetic", "40", "--quiet"]
    _run(common + ["--out", str(tmp_path / "one")], capsys)
    monkeypatch.setenv("CENN_FORGE_THREADS", "3")
    _run(common + ["--out", str(tmp_path / "three")], capsys)
    a, b = (tmp_path / d / "run-0001" / "predictions.csv" for d in ("one", "three"))
    assert a.read_text() == b.read_text()
    monkeypatch.setenv("CENN_FORGE_THREADS", "many")
    code, _, err = _run(common + ["--out", str(tmp_path / "bad")], capsys)
    assert code == 1 and "CENN_FORGE_THREADS" in _error(err)["message"]


@pytest.mark.parametrize("argv,needle", [
    (["run", "--weights", "/nonexistent/w.json", "--synthetic", "2"], "/nonexistent/w.json"),
    (["run", "--synthetic", "2"], "--weights"),
    (["run", "--weights", "random", "--images", "x.idx"], "--labels"),
    (["run", "--network", "no_such_net"], "no_such_net"),
    (["run", "--bits", "4", "--cost-preset", "paper-8bit-32nm"], "8-bit"),
    (["sweep", "--axis", "n_arrays", "--values", ","], "no values"),
    (["sweep", "--axis", "n_arrays", "--values", "two"], "integers"),
    (["verify", "--checks", "everything"], "everything"),
])
def test_errors_are_one_json_line(tmp_path, capsys, argv, needle):
    code, _, err = _run(argv + ["--out", str(tmp_path)] if argv[0] != "verify" else argv, capsys)
    assert code == 1
    doc = _error(err)
    assert set(doc) == {"error", "message"}
    assert needle in doc["message"]


def test_sweep_precision_and_arrays(tmp_path, capsys):
    assert _run(["sweep", "--axis", "precision", "--out", str(tmp_path / "p"), "--quiet"], capsys)[0] == 0
    rows = list(csv.DictReader((tmp_path / "p" / "run-0001" / "sweep.csv").open()))
    assert [r["value"] for r in rows] == ["4", "8"]
    assert float(rows[1]["delay_ns"]) > float(rows[0]["delay_ns"])
    assert _run(["sweep", "--axis", "n_arrays", "--values", "1,4", "--out", str(tmp_path / "n"), "--quiet"],
                capsys)[0] == 0
    rows = list(csv.DictReader((tmp_path / "n" / "run-0001" / "sweep.csv").open()))
    assert rows[0]["analytic_delay_ns"] == "nan"
    assert float(rows[0]["delay_ns"]) > float(rows[1]["delay_ns"])


def test_sweep_pool_kind_with_accuracy(tmp_path, capsys):
    code, _, _ = _run(["sweep", "--axis", "pool_kind", "--network", "mnist_design2", "--weights", "random",
                       "--synthetic", "3", "--out", str(tmp_path), "--quiet"], capsys)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "run-0001" / "sweep.csv").open()))
    assert [r["value"] for r in rows] == ["max_linear", "avg", "nonlinear"]
    assert [r["pool_steps_per_layer"] for r in rows] == ["16", "1", "1"]
    assert all("accuracy" in r for r in rows)


def test_verify_quick_subset(capsys):
    code, out, _ = _run(["verify", "--quick", "--checks", "relu,conv,analytic"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3 and all(l.startswith("PASS ") for l in lines)


def test_verify_network_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x"}')
    code, out, _ = _run(["verify", "--checks", "presets", "--network-file", str(bad)], capsys)
    assert code == 1
    assert out.strip().splitlines()[-1].startswith("FAIL network file")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cenn_forge", "compile", "--out", str(tmp_path), "--quiet"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "run-0001" / "cost.csv").exists()
