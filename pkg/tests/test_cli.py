import json

import numpy as np
import pytest
import yaml

from bamlab import cli, theory

TINY_MODEL = {"vocab_size": 32, "d_model": 16, "n_heads": 2, "n_layers": 1, "train_context": 32}


def _config(tmp_path, **sections):
    conf = {"model": dict(TINY_MODEL), "training": {"steps": 3, "batch_size": 2}}
    conf.update(sections)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(conf))
    return str(path)


def _complete(out):
    manifest = json.loads((out / "manifest.json").read_text())
    return manifest["status"] == "complete" and not (out / "INCOMPLETE").exists()


def test_verify_single_claim(tmp_path):
    out = tmp_path / "v"
    assert cli.main(["verify", "lemma1", "--out", str(out)]) == cli.EXIT_OK
    rows = (out / "reports.tsv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("lemma1\t")
    assert _complete(out)


def test_verify_unknown_claim_lists_ids(tmp_path, capsys):
    assert cli.main(["verify", "lemma7", "--out", str(tmp_path / "v")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert all(c in err for c in theory.CLAIMS)


def test_verify_mutation_exits_nonzero(tmp_path, monkeypatch):
    from bamlab import attention

    def unnormalized(v):
        v = np.asarray(v, dtype=float)
        return np.exp(v - v.max())

    monkeypatch.setattr(attention, "softmax", unnormalized)
    assert cli.main(["verify", "all", "--out", str(tmp_path / "v")]) == cli.EXIT_VERIFY


def test_verify_all(tmp_path):
    out = tmp_path / "v"
    assert cli.main(["verify", "all", "--out", str(out)]) == cli.EXIT_OK
    assert len((out / "reports.tsv").read_text().splitlines()) >= 9


def test_out_dir_must_be_empty(tmp_path):
    (tmp_path / "junk").write_text("x")
    assert cli.main(["verify", "lemma1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_train_eval_dump_round_trip(tmp_path):
    cfg = _config(tmp_path)
    run = tmp_path / "train"
    assert cli.main(["train", "--config", cfg, "--out", str(run), "--log-every", "1"]) == cli.EXIT_OK
    assert _complete(run)
    log = (run / "train_log.tsv").read_text().splitlines()
    assert log[0] == "step\tloss" and [r.split("\t")[0] for r in log[1:]] == ["1", "2", "3"]
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["model"][""]["d_model"] == 16 and "torch" in manifest["versions"]
    ckpt = str(run / "model.ckpt")

    grids = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        args = ["eval", ckpt, "--task", "passkey", "--lengths", "32,64", "--n-seeds", "1", "--out", str(out)]
        assert cli.main(args) == cli.EXIT_OK
        grids.append((out / "passkey_grid.tsv").read_bytes())
    assert grids[0] == grids[1]
    assert len(grids[0].decode().splitlines()) == 1 + 2 * 20

    out = tmp_path / "ppl"
    assert cli.main(["eval", ckpt, "--task", "perplexity", "--lengths", "32,64", "--n-sequences", "4",
                     "--out", str(out)]) == cli.EXIT_OK
    assert (out / "perplexity.tsv").read_text().startswith("length\tperplexity")

    out = tmp_path / "thetas"
    assert cli.main(["dump", ckpt, "--what", "thetas", "--out", str(out)]) == cli.EXIT_OK
    assert len((out / "thetas.tsv").read_text().splitlines()) == 1 + 2

    out = tmp_path / "attn"
    assert cli.main(["dump", ckpt, "--what", "attention", "--layer", "0", "--head", "1",
                     "--out", str(out)]) == cli.EXIT_OK
    w = np.loadtxt(out / "attention.tsv", delimiter="\t")
    assert w.shape == (841, 841)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)

    assert cli.main(["eval", ckpt, "--task", "passkey", "--vocab-size", "64",
                     "--out", str(tmp_path / "bad")]) == cli.EXIT_CONFIG


def test_resume_with_longer_context(tmp_path):
    first = tmp_path / "a"
    assert cli.main(["train", "--config", _config(tmp_path), "--out", str(first)]) == cli.EXIT_OK
    longer = dict(TINY_MODEL, train_context=64)
    path = tmp_path / "longer.yaml"
    path.write_text(yaml.safe_dump({"model": longer, "training": {"steps": 2, "batch_size": 2}}))
    second = tmp_path / "b"
    assert cli.main(["train", "--config", str(path), "--resume", str(first / "model.ckpt"),
                     "--out", str(second)]) == cli.EXIT_OK
    from bamlab.model import Checkpoint
    ck = Checkpoint.load(second / "model.ckpt")
    assert ck.step == 5 and ck.config.train_context == 64


def test_sweep_writes_six_checkpoints(tmp_path):
    out = tmp_path / "sweep"
    cfg = _config(tmp_path, training={"steps": 1, "batch_size": 1})
    assert cli.main(["train", "--config", cfg, "--sweep", "--out", str(out)]) == cli.EXIT_OK
    assert len(list(out.glob("*/model.ckpt"))) == 6


@pytest.mark.parametrize("model, field", [({"pe_kind": "xpos"}, "pe_kind"), ({"depth": 3}, "depth")])
def test_invalid_config_field(tmp_path, capsys, model, field):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"model": model}))
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert field in capsys.readouterr().err


def test_dump_thetas_needs_bam(tmp_path):
    cfg = _config(tmp_path, model=dict(TINY_MODEL, pe_kind="rope"))
    run = tmp_path / "r"
    assert cli.main(["train", "--config", cfg, "--out", str(run)]) == cli.EXIT_OK
    assert cli.main(["dump", str(run / "model.ckpt"), "--what", "thetas",
                     "--out", str(tmp_path / "d")]) == cli.EXIT_CONFIG


def test_runtime_failure_leaves_incomplete_marker(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "train", boom)
    out = tmp_path / "t"
    assert cli.main(["train", "--config", _config(tmp_path), "--out", str(out)]) == cli.EXIT_RUNTIME
    assert (out / "INCOMPLETE").exists()


def test_example_config_parses():
    from pathlib import Path

    conf = cli.load_config(Path(__file__).parents[1] / "configs" / "desk.yaml")
    from bamlab.model import ModelConfig

    assert ModelConfig.from_dict(conf["model"]) == ModelConfig(use_ssmax=True)
