import csv
import json

import numpy as np
import pytest

from palace.cli import main
from palace.cover import LandmarkConfiguration
from palace.diagram import read_diagrams


def run(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    run("gen", "--n-per-class", 6, "--n-points", 25, "--seed", 1, "--out", d / "clouds.json")
    run("persist", "--clouds", d / "clouds.json", "--out", d / "h1.jsonl")
    return d


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def test_gen_is_reproducible(workdir):
    run("gen", "--n-per-class", 6, "--n-points", 25, "--seed", 1, "--out", workdir / "again.json")
    assert (workdir / "again.json").read_bytes() == (workdir / "clouds.json").read_bytes()
    manifest = json.loads((workdir / "clouds.json.manifest.json").read_text())
    assert manifest["command"] == "gen" and manifest["options"]["seed"] == 1
    assert "numpy" in manifest["versions"]


def test_persist_labels(workdir):
    ds = read_diagrams(workdir / "h1.jsonl")
    assert len(ds) == 24 and sorted({d.label for d in ds}) == [0, 1, 2, 3]
    m = json.loads((workdir / "h1.jsonl.manifest.json").read_text())
    assert len(m["inputs"]["clouds"]["sha256"]) == 64


def test_place_embed_gram(workdir):
    run("place", "--diagrams", workdir / "h1.jsonl", "--K", 8, "--out", workdir / "lm.json")
    cfg = LandmarkConfiguration.from_json((workdir / "lm.json").read_text())
    assert cfg.K == 8
    run("place", "--diagrams", workdir / "h1.jsonl", "--placement", "grid", "--domain", 2.0, "--K", 11,
        "--tau", 0.5, "--out", workdir / "grid.json")
    assert LandmarkConfiguration.from_json((workdir / "grid.json").read_text()).K == 11
    run("embed", "--diagrams", workdir / "h1.jsonl", "--landmarks", workdir / "lm.json", "--out", workdir / "X.csv")
    assert header(workdir / "X.csv") == [str(k) for k in range(8)]
    run("gram", "--embedding", workdir / "X.csv", "--out", workdir / "G.csv")
    G = np.loadtxt(workdir / "G.csv", delimiter=",")
    assert G.shape == (24, 24) and np.allclose(np.diag(G), 8)


def test_train_and_select(workdir, capsys):
    run("train", "--diagrams", workdir / "h1.jsonl", "--K", 6, "--outer-folds", 3, "--inner-folds", 2,
        "--C-grid", "1,10", "--out", workdir / "cv.csv")
    assert header(workdir / "cv.csv") == ["seed", "fold", "sigma_or_q", "C", "train_acc", "test_acc"]
    assert "accuracy" in capsys.readouterr().out
    run("select", "--diagrams", workdir / "h1.jsonl", "--K-grid", "4,8", "--no-cv", "--out", workdir / "sel.csv")
    with open(workdir / "sel.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and float(rows[0]["score"]) == pytest.approx(float(rows[0]["gamma_hat"]) / 2)


def test_certify_and_audits(workdir):
    run("place", "--diagrams", workdir / "h1.jsonl", "--K", 8, "--out", workdir / "lm2.json")
    run("certify", "--diagrams", workdir / "h1.jsonl", "--landmarks", workdir / "lm2.json",
        "--variant", "univariate", "--out", workdir / "fire.csv")
    assert header(workdir / "fire.csv") == ["dataset", "mode", "fired_pct", "nc_accuracy_on_fired", "r_m", "half_delta"]
    run("audit-ni", "--diagrams", workdir / "h1.jsonl", "--n-pairs", 10, "--out", workdir / "ni.csv")
    assert header(workdir / "ni.csv")[:3] == ["i", "j", "d_B"]
    run("audit-bound", "--diagrams", workdir / "h1.jsonl", "--landmarks", workdir / "lm2.json",
        "--n-pairs", 10, "--out", workdir / "bound.csv")
    assert header(workdir / "bound.csv")[0] == "n_pairs"


def test_bench_inflate_with_config_file(workdir):
    conf = workdir / "bench.json"
    conf.write_text(json.dumps({"levels": [1, 8], "outer_folds": 2, "inner_folds": 2, "C_grid": [1, 10]}))
    run("--config", conf, "bench-inflate", "--diagrams", workdir / "h1.jsonl", "--out", workdir / "inf.csv")
    with open(workdir / "inf.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["ell", "L", "uniform_mean", "uniform_std", "nonuniform_mean", "nonuniform_std", "delta"]
    assert [r["ell"] for r in rows] == ["1.0", "8.0"]
    m = json.loads((workdir / "inf.csv.manifest.json").read_text())
    assert m["options"]["levels"] == "1,8"


def test_errors_return_nonzero(workdir, capsys):
    assert main(["embed", "--diagrams", str(workdir / "missing.jsonl"), "--landmarks", "x", "--out",
                 str(workdir / "y.csv")]) == 1
    assert "error" in capsys.readouterr().err
