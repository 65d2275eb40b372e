import csv
import json

import pytest

from rag_certify.cli import main
from rag_certify.conformal import ConformalModel

from conftest import write_lines


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def toy_run(tmp_path, toy_dir):
    cfg = toy_dir / "config.json"
    out = tmp_path / "toy"
    assert run("ingest", "--config", cfg, "--corpus", toy_dir / "corpus.jsonl",
               "--qa", toy_dir / "qa.jsonl", "--out-dir", out) == 0
    assert run("index", "--config", cfg, "--chunks", out / "chunks.jsonl",
               "--qa", out / "qa.jsonl", "--out-dir", out) == 0
    return cfg, out


def test_toy_calibrate_and_certify(toy_run):
    cfg, out = toy_run
    assert run("calibrate", "--config", cfg, "--retrieval", out / "retrieval.jsonl",
               "--chunks", out / "chunks.jsonl", "--qa", out / "qa.jsonl", "--out-dir", out) == 0
    model = ConformalModel.load(out / "conformal_model.json")
    assert 0.0 <= model.q_hat <= 1.0 and model.K == 5
    assert run("certify", "--config", cfg, "--model", out / "conformal_model.json",
               "--retrieval", out / "retrieval.jsonl", "--filter", "--out-dir", out) == 0
    labels = [json.loads(x) for x in (out / "trust_labels.jsonl").read_text().splitlines()]
    kept = [json.loads(x) for x in (out / "filtered_retrieval.jsonl").read_text().splitlines()]
    assert [len(k["candidates"]) for k in kept] == [t["k_trusted"] for t in labels]
    assert all("norm_score" in c for k in kept for c in k["candidates"])
    manifest = json.loads((out / "manifest-certify.json").read_text())
    assert set(manifest["inputs"]) == {"config.json", "conformal_model.json", "retrieval.jsonl"}
    assert manifest["config"]["K"] == 5 and len(manifest["config_sha256"]) == 64


def test_flags_override_config(toy_run):
    cfg, out = toy_run
    assert run("calibrate", "--config", cfg, "--alpha", "0.3", "--retrieval", out / "retrieval.jsonl",
               "--chunks", out / "chunks.jsonl", "--qa", out / "qa.jsonl", "--out-dir", out) == 0
    assert ConformalModel.load(out / "conformal_model.json").alpha == 0.3


def test_external_scores_path(toy_run, tmp_path):
    cfg, out = toy_run
    chunks = [json.loads(x) for x in (out / "chunks.jsonl").read_text().splitlines()]
    recs = [{"qa_id": "q01", "chunk_id": c["chunk_id"], "raw_score": float(i)}
            for i, c in enumerate(chunks[:4])]
    scores = write_lines(tmp_path / "rerank.jsonl", recs)
    dest = tmp_path / "ext"
    assert run("index", "--config", cfg, "--chunks", out / "chunks.jsonl", "--qa", out / "qa.jsonl",
               "--external-scores", scores, "--out-dir", dest) == 0
    res = json.loads((dest / "retrieval.jsonl").read_text())
    assert [c["raw_score"] for c in res["candidates"]] == [3.0, 2.0, 1.0, 0.0]


def test_diagnose_sweep(tmp_path):
    out = tmp_path / "s"
    assert run("synth", "--seed", 3, "--n-questions", 300, "--n-samples", 20, "--out-dir", out) == 0
    assert run("diagnose", "--scores", out / "calibration_scores.jsonl",
               "--holdout", out / "holdout_scores.jsonl", "--alpha-sweep", "0.05:0.5:0.05",
               "--out-dir", out) == 0
    rows = list(csv.DictReader((out / "alpha_sweep.csv").open()))
    assert len(rows) == 10 and list(rows[0]) == ["alpha", "mean_m1", "mean_m2"]
    m1 = [float(r["mean_m1"]) for r in rows]
    assert m1[0] > m1[-1]
    assert (out / "alpha_sweep.png").stat().st_size > 1000
    diag = json.loads((out / "diagnostics.json").read_text())
    assert 0.8 < diag["coverage"] < 1.0


def test_cross_val_cli(tmp_path):
    out = tmp_path / "cv"
    groups = []
    for g in ("a", "b"):
        d = out / g
        assert run("synth", "--seed", ord(g), "--n-questions", 10, "--n-samples", 40,
                   "--out-dir", d) == 0
        assert run("lookback", "--dumps", d / "attention.jsonl", "--out-dir", d) == 0
        groups += ["--group", f"{g}={d / 'features.jsonl'}:{d / 'labels.jsonl'}"]
    assert run("cross-val", *groups, "--out-dir", out) == 0
    rows = list(csv.reader((out / "auroc_matrix.csv").open()))
    assert rows[0] == ["source", "a", "b"] and len(rows) == 3
    assert (out / "auroc_matrix.png").exists()


def test_exit_codes(tmp_path, capsys):
    assert run("lookback", "--dumps", tmp_path / "missing.jsonl", "--out-dir", tmp_path) == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run("lookback", "--dumps", bad, "--out-dir", tmp_path) == 4
    flat = write_lines(tmp_path / "flat.jsonl", [
        {"qa_id": "q", "rank": i, "raw_score": 1.0, "h_score": 0.5, "affiliation_correct": True}
        for i in range(3)])
    assert run("calibrate", "--scores", flat, "--out-dir", tmp_path) == 5
    assert "DegenerateScores" in capsys.readouterr().err
    labels = write_lines(tmp_path / "l.jsonl", [{"qa_id": f"x{i}", "gamma_ac": 1.0} for i in range(6)])
    feats = write_lines(tmp_path / "f.jsonl", [
        {"qa_id": f"x{i}", "mode": "fc", "L": 1, "H": 1, "k_present": 0, "vector": [0.1 * i]}
        for i in range(6)])
    assert run("train-clf", "--features", feats, "--labels", labels, "--out-dir", tmp_path) == 6


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"alpha": 0.1, "bogus": 1}')
    assert run("synth", "--config", cfg, "--out-dir", tmp_path) == 4
