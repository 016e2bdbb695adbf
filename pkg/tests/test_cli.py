import csv
import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from liftkit.cli import main
from liftkit.windowing import read_dataset

TINY = ["--hidden", "8", "--epochs", "2", "--batch-size", "64"]


def tree_hashes(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


def catalog(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--trials", "4", "--seed", "3", "--out", str(root / "train")]) == 0
    assert main(["synth", "--trials", "2", "--seed", "4", "--out", str(root / "eval")]) == 0
    return root


def test_synth_then_validate(tmp_path, capsys):
    assert main(["synth", "--trials", "20", "--mode", "trainlike", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("*.imu"))) == 20
    assert (tmp_path / "labels.csv").is_file()
    capsys.readouterr()
    assert main(["validate", "--data", str(tmp_path)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].startswith("trial_id,") and len(out) == 21
    manifest = json.loads((tmp_path / "synth.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seeds"]["corpus"] == 7
    assert len(manifest["outputs"]) == 21


def test_train_without_labels_exits_2(tmp_path, corpus):
    data = tmp_path / "nolabels"
    shutil.copytree(corpus / "train", data)
    (data / "labels.csv").unlink()
    model = tmp_path / "m.bin"
    assert main(["train", "--data", str(data), "--out", str(model), *TINY]) == 2
    assert not model.exists()
    assert not list(tmp_path.glob("m.bin*"))


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train", "--bogus"], ["window", "--window-len", "x"],
                                  ["window", "--data", "d"], ["fix-offset", "--data", "d", "--out", "o"]])
def test_usage_errors_exit_1(argv):
    assert main(argv) == 1


def test_data_errors_exit_2(tmp_path):
    assert main(["validate", "--data", str(tmp_path / "missing")]) == 2
    (tmp_path / "bad.imu").write_text("not a recording\n")
    assert main(["validate", "--data", str(tmp_path)]) == 2
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "m"), "--epochs", "0"]) == 2


def test_config_precedence(tmp_path, corpus):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[common]\nwindow-len = 7\nseeds = 1\n\n[window]\nstride = 3\n")
    out = tmp_path / "d.csv"
    base = ["window", "--data", str(corpus / "train"), "--config", str(cfg), "--out", str(out)]
    assert main(base) == 0
    ds = read_dataset(out)
    assert ds.window_len == 7 and ds.provenance["stride"] == "3"
    cfg.write_text("[common]\nwindow-len = 7\n\n[window]\nwindow_len = 8\n")
    assert main(base) == 0
    assert read_dataset(out).window_len == 8
    assert main(base + ["--window-len", "9"]) == 0
    assert read_dataset(out).window_len == 9
    cfg.write_text("[window]\nnot-an-option = 1\n")
    assert main(base) == 2


def test_window_is_idempotent_and_inputs_untouched(tmp_path, corpus):
    before = tree_hashes(corpus / "train")
    hashes = []
    for _ in range(2):
        assert main(["window", "--data", str(corpus / "train"), "--out", str(tmp_path / "d.csv"), "--seed", "5"]) == 0
        hashes.append(json.loads((tmp_path / "d.csv.manifest.json").read_text())["outputs"])
    assert hashes[0] == hashes[1]
    assert tree_hashes(corpus / "train") == before


def test_pipeline_commands_leave_inputs_untouched(tmp_path, corpus):
    before = tree_hashes(corpus)
    train, evald = str(corpus / "train"), str(corpus / "eval")
    model = str(tmp_path / "m.bin")
    assert main(["train", "--data", train, "--out", model, *TINY]) == 0
    assert main(["eval", "--model", model, "--data", evald, "--out", str(tmp_path / "e.csv")]) == 0
    assert main(["sync", "--data", train, "--out", str(tmp_path / "sync.csv")]) == 0
    assert main(["fix-offset", "--data", train, "--offset", "2", "--out", str(tmp_path / "shifted.csv")]) == 0
    assert main(["fix-offset", "--data", train, "--model", model, "--out", str(tmp_path / "est.csv")]) == 0
    assert main(["fix-placement", "--data", train, "--suspect", "RightUpperArm",
                 "--out", str(tmp_path / "placed")]) == 0
    assert main(["saliency", "--model", model, "--data", train, "--out", str(tmp_path / "sal")]) == 0
    assert tree_hashes(corpus) == before

    sync = catalog(tmp_path / "sync.csv")
    assert sync and set(sync[0]) == {"trial_id", "bol_frame", "eol_frame"}
    assert (tmp_path / "sal" / "saliency_heatmap.pgm").read_bytes().startswith(b"P5\n")
    assert abs(sum(float(r["share"]) for r in catalog(tmp_path / "sal" / "channel_ranking.csv")) - 1) < 1e-9
    assert len(list((tmp_path / "placed").glob("*.imu"))) == 4
    assert main(["fix-placement", "--data", train, "--suspect", "RightUpperArm", "--out", train]) == 1


def test_sweeps_report_and_byte_identical_reruns(tmp_path, corpus):
    common = ["--data", str(corpus / "train"), "--eval-data", str(corpus / "eval"), *TINY, "--seeds", "0,1"]
    runs = {
        "grid": ["grid", "--batch-sizes", "32,64", "--window-lens", "10"],
        "ablate": ["ablate", "--subsets", "all;LeftWrist+RightWrist+UpperBack"],
        "filters": ["filter-compare", "--filters", "none,mahony"],
    }
    for name, argv in runs.items():
        texts = []
        for rep, jobs in enumerate(("1", "2")):
            out = tmp_path / f"{name}{rep}.csv"
            assert main([*argv, *common, "--jobs", jobs, "--out", str(out)]) == 0
            texts.append(out.read_bytes())
        assert texts[0] == texts[1], name
        rows = catalog(tmp_path / f"{name}0.csv")
        assert len(rows) == 4 and all(not r["error"] for r in rows)
    assert main(["report", "--catalog", *(str(tmp_path / f"{n}0.csv") for n in runs),
                 "--out", str(tmp_path / "report")]) == 0
    for n in runs:
        assert (tmp_path / "report" / f"{n}0.summary.csv").read_text() == (tmp_path / f"{n}0.summary.csv").read_text()
        assert (tmp_path / "report" / f"{n}0.heatmap.pgm").read_bytes().startswith(b"P5\n")


def test_end_to_end_separable_fixture(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--trials", "6", "--seed", "11", "--noise-accel", "0", "--noise-gyro", "0",
                 "--out", str(data)]) == 0
    assert main(["window", "--data", str(data), "--stride", "1", "--out", str(tmp_path / "w.csv")]) == 0
    assert main(["train", "--dataset", str(tmp_path / "w.csv"), "--hidden", "32", "--epochs", "10",
                 "--out", str(tmp_path / "m.bin")]) == 0
    assert main(["eval", "--model", str(tmp_path / "m.bin"), "--data", str(data),
                 "--out", str(tmp_path / "e.csv")]) == 0
    (row,) = catalog(tmp_path / "e.csv")
    assert float(row["eval_f1"]) >= 0.99
    assert row["train_f1"] == ""


def test_console_entry_point(tmp_path):
    exe = shutil.which("liftkit")
    cmd = [exe] if exe else [sys.executable, "-m", "liftkit"]
    res = subprocess.run([*cmd, "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("liftkit ")
    res = subprocess.run([*cmd, "train"], capture_output=True, text=True)
    assert res.returncode == 1 and "--out" in res.stderr
