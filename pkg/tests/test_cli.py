import hashlib
import json

import pytest

from robustdr.cli import main
from robustdr.synth import generate

CONFIG = """\
seed = 3

[paths]
passages = "passages.tsv"
train_questions = "questions_train.tsv"
train_qrels = "qrels_train.tsv"
test_questions = "questions_test.tsv"
test_qrels = "qrels_test.tsv"
out = "out"

[model]
d = 16
vocab_size = 300

[training]
modes = ["DR", "DR_Aug_CL"]
batch_size = 16
steps = 15
lr = 0.05

[typos]
p = 0.2
seed = 1

[evaluation]
depth = 20
recall_k = [10, 20]
mrr_k = 10
answer_k = [10]
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    generate(seed=2, n_passages=120, n_train=40, n_test=25, name_lexicon=20).write(tmp_path / "data")
    (tmp_path / "data" / "exp.toml").write_text(CONFIG)
    monkeypatch.chdir(tmp_path)
    return tmp_path


def tree_hashes(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_experiment_artifacts_and_determinism(workdir, capsys):
    assert main(["experiment", "--config", "data/exp.toml"]) == 0
    out = workdir / "out"
    for rel in ["vocab.txt", "typos/RandomWords.tsv", "typos/DiscriminativeUtterances.tsv",
                "DR_Aug_CL/checkpoint.bin", "DR_Aug_CL/index.bin", "DR_Aug_CL/runs/Original.run",
                "DR_Aug_CL/eval/NonStopwords.csv", "removal/questions.tsv", "removal/runs/RandomWords.run",
                "analysis/trend.csv", "analysis/importance_bins.csv", "analysis/freq_bins.csv",
                "analysis/significance.csv", "manifests/train-DR.json"]:
        assert (out / rel).is_file(), rel
    assert "Recall@10" in capsys.readouterr().out
    manifest = json.loads((out / "manifests/train-DR.json").read_text())
    assert manifest["seed"] == 3 and set(manifest["inputs"]) >= {"passages", "vocab"}
    assert "robustdr" in manifest["versions"]

    assert main(["experiment", "--config", "data/exp.toml", "--out", "again"]) == 0
    assert tree_hashes(out) == tree_hashes(workdir / "again")


def test_rerun_is_noop_unless_forced(workdir, caplog):
    assert main(["experiment", "--config", "data/exp.toml"]) == 0
    ckpt = workdir / "out/DR/checkpoint.bin"
    before = ckpt.stat().st_mtime_ns
    caplog.set_level("INFO", logger="robustdr")
    assert main(["train", "--config", "data/exp.toml", "--mode", "DR"]) == 0
    assert ckpt.stat().st_mtime_ns == before
    assert "up to date" in caplog.text
    assert main(["train", "--config", "data/exp.toml", "--mode", "DR", "--force"]) == 0
    assert ckpt.stat().st_mtime_ns != before


def test_changed_input_reruns_stage(workdir):
    assert main(["perturb", "--config", "data/exp.toml"]) == 0
    typo_file = workdir / "out/typos/RandomWords.tsv"
    first = typo_file.read_bytes()
    assert main(["perturb", "--config", "data/exp.toml", "--typo-p", "0.9"]) == 0
    assert typo_file.read_bytes() != first


def test_discriminative_needs_qrels(workdir, capsys):
    code = main(["perturb", "--setting", "discriminative", "--seed", "1",
                 "--questions", "data/questions_test.tsv", "--passages", "data/passages.tsv"])
    assert code == 1
    assert "test_qrels" in capsys.readouterr().err


def test_usage_errors(workdir, capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["ingest", "--passages", "data/passages.tsv"]) == 1
    assert "seed" in capsys.readouterr().err


def test_config_field_errors(workdir, capsys):
    bad = CONFIG.replace("d = 16", "d = \"wide\"").replace("lr = 0.05", "lr = 0.05\nmomentum = 0.9")
    bad = bad.replace('"DR_Aug_CL"]', '"BERT"]')
    (workdir / "data/bad.toml").write_text(bad)
    assert main(["train", "--config", "data/bad.toml"]) == 1
    err = capsys.readouterr().err
    assert "model.d" in err and "training.momentum" in err and "BERT" in err
    (workdir / "data/missing.toml").write_text(CONFIG.replace("passages.tsv", "nope.tsv"))
    assert main(["ingest", "--config", "data/missing.toml"]) == 1
    assert "paths.passages" in capsys.readouterr().err


def test_data_validation_error(workdir, capsys):
    p = workdir / "data/passages.tsv"
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines + [lines[0]]) + "\n")
    assert main(["ingest", "--config", "data/exp.toml"]) == 2
    assert "duplicate passage id" in capsys.readouterr().err


def test_dangling_qrels_rejected(workdir, capsys):
    with open(workdir / "data/qrels_test.tsv", "a") as fh:
        fh.write("te0000\tp99999\n")
    assert main(["ingest", "--config", "data/exp.toml"]) == 2
    assert "p99999" in capsys.readouterr().err


def test_stale_index_detected(workdir, capsys):
    cfg = ["--config", "data/exp.toml", "--mode", "DR"]
    assert main(["build-vocab", "--config", "data/exp.toml"]) == 0
    for stage in ("train", "index"):
        assert main([stage] + cfg) == 0
    assert main(["train", "--steps", "3"] + cfg) == 0
    assert main(["search", "--setting", "Original"] + cfg) == 2
    assert "different checkpoint" in capsys.readouterr().err


def test_missing_upstream_artifact(workdir, capsys):
    assert main(["index", "--config", "data/exp.toml", "--mode", "DR"]) == 2
    assert "run the earlier stages" in capsys.readouterr().err


def test_removal_skipped_without_system(workdir, caplog):
    assert main(["experiment", "--config", "data/exp.toml", "--mode", "DR_Aug"]) == 0
    assert not (workdir / "out/removal").exists()
    assert "removal baseline skipped" in caplog.text
