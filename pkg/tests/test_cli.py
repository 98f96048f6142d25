import json
import subprocess
import sys

import pytest

from agdst import cli
from agdst import two_pass
from agdst.corpus import load_corpus
from agdst.neural.model import NumericError

TINY = {
    "model": {"layers": 1, "heads": 2, "hidden": 16, "ffn_multiplier": 2, "max_positions": 160},
    "epochs": 2,
    "warmup_steps": 5,
    "max_decode": 40,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"dialogue_count": 30, "rng_seed": 3}))
    config = root / "config.json"
    config.write_text(json.dumps(TINY))
    corpus = root / "data" / "corpus.json"
    assert cli.main(["gen-data", "--spec", str(spec), "--out", str(corpus)]) == 0
    run = root / "run"
    assert cli.main(["train", "--config", str(config), "--corpus", str(corpus), "--out", str(run)]) == 0
    return root, corpus, config, run


def test_gen_data_tags_and_manifest(workspace):
    root, corpus, _, _ = workspace
    _, records = load_corpus(corpus)
    assert len(records) == 30
    assert {r.split for r in records} == {"train", "valid", "test"}
    manifest = json.loads((corpus.parent / "manifest.json").read_text())
    assert manifest["command"] == "gen-data" and len(manifest["corpus_hash"]) == 64


def test_gen_data_deterministic(workspace, tmp_path):
    root, corpus, _, _ = workspace
    again = tmp_path / "c.json"
    cli.main(["gen-data", "--spec", str(root / "spec.json"), "--out", str(again)])
    assert again.read_bytes() == corpus.read_bytes()


def test_train_outputs(workspace):
    _, _, config, run = workspace
    for name in ("vocab.txt", "model.ckpt", "train_log.jsonl", "run_config.json", "manifest.json"):
        assert (run / name).exists(), name
    events = [json.loads(line) for line in (run / "train_log.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "start" and events[-1]["event"] == "done"
    assert sum(e["event"] == "epoch" for e in events) == 2
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config_hash"] == two_pass.RunConfig.from_json(json.loads(config.read_text())).hash()
    assert set(manifest["outputs"]) == {"checkpoint", "vocab", "log"}


def test_predict_eval_matches_training_jga(workspace, tmp_path):
    _, corpus, _, run = workspace
    pred = tmp_path / "valid.jsonl"
    rep = tmp_path / "repair.jsonl"
    assert cli.main(["predict", "--checkpoint", str(run / "model.ckpt"), "--corpus", str(corpus),
                     "--split", "valid", "--out", str(pred), "--repair-out", str(rep)]) == 0
    report = tmp_path / "report.json"
    assert cli.main(["eval", "--predictions", str(pred), "--corpus", str(corpus), "--split", "valid",
                     "--repair", str(rep), "--out", str(report)]) == 0
    got = json.loads(report.read_text())
    best = json.loads((run / "manifest.json").read_text())["best_valid_jga"]
    assert got["jga"] == pytest.approx(best, abs=1e-12)
    assert 0 <= got["repair_rate"] <= 1
    # predicting twice is byte-identical
    pred2 = tmp_path / "valid2.jsonl"
    cli.main(["predict", "--checkpoint", str(run / "model.ckpt"), "--corpus", str(corpus),
              "--split", "valid", "--out", str(pred2)])
    assert pred2.read_bytes() == pred.read_bytes()


def test_eval_misaligned_split(workspace, tmp_path):
    _, corpus, _, run = workspace
    pred = tmp_path / "valid.jsonl"
    cli.main(["predict", "--checkpoint", str(run / "model.ckpt"), "--corpus", str(corpus),
              "--split", "valid", "--out", str(pred)])
    code = cli.main(["eval", "--predictions", str(pred), "--corpus", str(corpus), "--split", "test",
                     "--out", str(tmp_path / "r.json")])
    assert code == cli.EXIT_CONFIG


def test_inspect_attention(workspace, tmp_path):
    _, corpus, _, run = workspace
    _, records = load_corpus(corpus)
    out = tmp_path / "att.json"
    assert cli.main(["inspect-attention", "--checkpoint", str(run / "model.ckpt"), "--corpus", str(corpus),
                     "--dialogue", records[0].id, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["turns"]) == len(records[0])
    for turn in doc["turns"]:
        for p in turn["passes"].values():
            for layer in p["layers"]:
                for head in layer:
                    assert all(abs(sum(r) - 1) <= 1e-5 for r in head)
    assert cli.main(["inspect-attention", "--checkpoint", str(run / "model.ckpt"), "--corpus", str(corpus),
                     "--dialogue", "nope", "--out", str(out)]) == cli.EXIT_CONFIG


def test_exit_codes(workspace, tmp_path, monkeypatch):
    root, corpus, config, run = workspace
    assert cli.main(["train", "--config", str(tmp_path / "missing.json"), "--corpus", str(corpus),
                     "--out", str(tmp_path / "x")]) == cli.EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "epochs": 0}))
    assert cli.main(["train", "--config", str(bad), "--corpus", str(corpus), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    other_vocab = tmp_path / "vocab.txt"
    other_vocab.write_text((run / "vocab.txt").read_text() + "zzzextra\n")
    assert cli.main(["predict", "--checkpoint", str(run / "model.ckpt"), "--vocab", str(other_vocab),
                     "--corpus", str(corpus), "--out", str(tmp_path / "p.jsonl")]) == cli.EXIT_CONFIG
    assert cli.main(["ablate", "--corpus", str(corpus), "--out", str(tmp_path / "ab"), "--only", "nonsense"]) == cli.EXIT_CONFIG

    def boom(*a, **kw):
        raise NumericError("non-finite loss")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", "--config", str(config), "--corpus", str(corpus), "--out", str(tmp_path / "y")]) == cli.EXIT_NUMERIC


def test_ablate_subset(workspace, tmp_path):
    _, corpus, config, _ = workspace
    out = tmp_path / "ab"
    assert cli.main(["ablate", "--config", str(config), "--corpus", str(corpus), "--out", str(out),
                     "--only", "ag_dst", "basic_only", "--epochs", "1"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"ag_dst", "basic_only"}
    assert summary["basic_only"]["repair_rate"] == 0.0 or summary["basic_only"]["repair_rate"] == 1.0
    for name in summary:
        assert (out / name / "report.json").exists()


def test_every_ablation_config_valid():
    for name, overrides in cli.ABLATIONS.items():
        two_pass.RunConfig.from_json(overrides)


def test_seed_sweep(workspace, tmp_path):
    _, corpus, config, _ = workspace
    one = tmp_path / "cfg.json"
    one.write_text(json.dumps({**TINY, "epochs": 1}))
    out = tmp_path / "sweep"
    assert cli.main(["train", "--config", str(one), "--corpus", str(corpus), "--out", str(out), "--seeds", "0", "1"]) == 0
    agg = json.loads((out / "seed_sweep.json").read_text())
    assert [r["seed"] for r in agg["runs"]] == [0, 1]
    assert (out / "seed_1" / "model.ckpt").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "agdst.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen-data", "train", "predict", "eval", "inspect-attention", "ablate"):
        assert cmd in res.stdout
