import json

import pytest

from biirra.cli import main
from biirra.encoders import load_checkpoint
from biirra.train_eval import read_loss_log

SMALL = ["--dim", "16", "--heads", "2", "--uni-layers", "1", "--fusion-layers", "1", "--proj-dim", "8",
         "--mlp-ratio", "2", "--batch-size", "4", "--log-every", "0"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--identities", "6", "--test-identities", "2", "--images-per-id", "2",
                 "--slots", "3", "--values", "3", "--seed", "4", "--out", str(d)]) == 0
    return d


def test_gen_data_writes_files(data_dir):
    meta = json.loads((data_dir / "vocab.json").read_text())
    assert meta["n_slots"] == 3 and meta["vocab_size"] == len(meta["words"])
    for name in ("train.jsonl", "test.jsonl", "corpus.jsonl"):
        assert (data_dir / name).stat().st_size > 0


def test_train_then_eval(data_dir, tmp_path, capsys):
    ckpt, loss = tmp_path / "m.json", tmp_path / "loss.csv"
    cfg = tmp_path / "c.txt"
    cfg.write_text("steps = 9  # overridden below\nseed = 2\n")
    assert main(["train", "--data", str(data_dir), "--checkpoint", str(ckpt), "--log", str(loss),
                 "--config", str(cfg), "--steps", "3", *SMALL]) == 0
    assert len(read_loss_log(loss)) == 3
    model, extra = load_checkpoint(ckpt)
    assert extra["train_config"]["seed"] == 2 and model.config.dim == 16
    for suffix in (".json", ".csv", ".md"):
        out = tmp_path / f"r{suffix}"
        assert main(["eval", "--data", str(data_dir), "--checkpoint", str(ckpt), "--rerank-k", "2",
                     "--out", str(out)]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert set(report["languages"]) == {"source", "target"} and report["rerank_k"] == 2
    assert (tmp_path / "r.csv").read_text().startswith("language,r1,r5,r10,map")
    assert "R@1=" in capsys.readouterr().out


def test_ldat_command(data_dir, tmp_path):
    out, rep = tmp_path / "o.jsonl", tmp_path / "rep.json"
    assert main(["ldat", "--corpus", str(data_dir / "corpus.jsonl"), "--vocab", str(data_dir / "vocab.json"),
                 "--noise", "0.2", "--out", str(out), "--report", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert set(report) == {"theta", "n_clean", "n_noisy", "histogram", "failures"}
    n_corpus = len((data_dir / "corpus.jsonl").read_text().splitlines())
    assert len(out.read_text().splitlines()) == n_corpus == report["n_clean"] + report["n_noisy"]


def test_ablate_command(data_dir, tmp_path):
    out = tmp_path / "a.csv"
    assert main(["ablate", "--data", str(data_dir), "--axis", "masking", "--only", "Blockwise",
                 "--out", str(out), "--steps", "2", *SMALL]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("Variant,") and lines[1].startswith("Blockwise,")


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--component", "itc", "--samples", "1"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_bad_config_key(data_dir, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("no_such_key = 1\n")
    with pytest.raises(KeyError):
        main(["train", "--data", str(data_dir), "--checkpoint", str(tmp_path / "m"), "--config", str(cfg)])


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["nope"])
