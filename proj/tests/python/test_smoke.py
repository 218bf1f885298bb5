import json
import os
import subprocess

import pytest

import cmdrec


def test_generate_and_preprocess_recover_truth():
    logs, truth = cmdrec.generate({"sessions": 30, "seed": 3, "trigger_frac": 0.0})
    assert logs and truth.startswith("session_id\t")
    assert cmdrec.preprocess(logs) == truth


def test_bayes_recall_bounds():
    r1 = cmdrec.bayes_recall({"seed": 1}, 1)
    r5 = cmdrec.bayes_recall({"seed": 1}, 5)
    assert 0.0 < r1 <= r5 <= 1.0


def test_metrics():
    assert cmdrec.rank_of([9, 9, 9, 0.1, 0.5, 0.3], 4) == 1
    assert cmdrec.recall_at_k([1, 5, 6, 2], 5) == 0.75
    assert cmdrec.ndcg_at_k([3], 5) == pytest.approx(0.5)
    with pytest.raises(cmdrec.Error):
        cmdrec.recall_at_k([], 5)


def test_presets():
    assert set(cmdrec.preset_names()) >= {"llama2", "mistral", "mixtral", "bert"}


@pytest.mark.skipif(not os.environ.get("CMDREC_CLI"), reason="CMDREC_CLI not set")
def test_cli_pipeline_and_recommender(tmp_path):
    cli = os.environ["CMDREC_CLI"]
    run = lambda *a: subprocess.run([cli, *map(str, a)], check=True, capture_output=True, text=True)
    run("synth", "--sessions", 80, "--seed", 2, "-o", tmp_path / "corpus")
    run("preprocess", tmp_path / "corpus" / "logs", "-o", tmp_path / "data")
    run("train", "--data", tmp_path / "data", "--preset", "llama2", "--d-model", 16,
        "--epochs", 1, "-o", tmp_path / "run")
    out = run("eval", "--run", tmp_path / "run", "--data", tmp_path / "data", "--json").stdout
    assert "recall@5" in json.loads(out.strip().splitlines()[-1])

    rec = cmdrec.Recommender(str(tmp_path / "run"), "smoke")
    assert rec.tag == "smoke"
    name = next(line.split("\t")[1] for line in open(tmp_path / "run" / "vocab.tsv") if line[0].isdigit())
    items = rec.predict([name], 3)
    assert len(items) == 3
    assert items[0]["score"] >= items[1]["score"] >= items[2]["score"]
    with pytest.raises(cmdrec.Error):
        rec.predict([], 3)
