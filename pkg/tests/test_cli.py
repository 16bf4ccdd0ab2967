import csv
import json

import pytest

from zootwin.cli import main
from zootwin.sparsify.twin import load_twin, twin_tags
from zootwin.zoo.data import write_idx_images, write_idx_labels
from zootwin.zoo.zoo import read_index


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def ds_config(desk_raw, tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    write_idx_images(d / "tr-img.gz", desk_raw["train_images"][:600])
    write_idx_labels(d / "tr-lab.gz", desk_raw["train_labels"][:600])
    write_idx_images(d / "te-img.gz", desk_raw["test_images"][:200])
    write_idx_labels(d / "te-lab.gz", desk_raw["test_labels"][:200])
    return {"train_images": str(d / "tr-img.gz"), "train_labels": str(d / "tr-lab.gz"),
            "test_images": str(d / "te-img.gz"), "test_labels": str(d / "te-lab.gz"), "name": "cli-tiny"}


def _write(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(ds_config, tmp_path_factory):
    """Runs the 2-model pipeline once; the tests below inspect its outputs."""
    root = tmp_path_factory.mktemp("cli")
    zoo_cfg = {"dataset": ds_config, "grid": {"n_models": 2}, "epochs": 2, "base": {"lr": 3e-3}, "seed": 7}
    codes = {}
    codes["zoo"] = main(["train-zoo", "--config", _write(root / "zoo.json", zoo_cfg), "--out", str(root / "zoo")])
    mp = {"zoo": str(root / "zoo"), "method": "mp", "ratios": [0.5]}
    codes["mp"] = main(["sparsify", "--config", _write(root / "mp.json", mp), "--out", str(root / "mp")])
    vd = {"zoo": str(root / "zoo"), "method": "vd"}
    codes["vd"] = main(["sparsify", "--config", _write(root / "vd.json", vd), "--out", str(root / "vd")])
    hr = {"twin": str(root / "vd"), "seed": 3, "ae": {"d_model": 16, "heads": 2, "enc_blocks": 1, "dec_blocks": 1,
                                                       "d_z": 8, "proj_dim": 8},
          "train": {"epochs": 2, "batch": 8}}
    codes["hr"] = main(["hyperrep", "--config", _write(root / "hr.json", hr), "--out", str(root / "hr")])
    return root, codes, zoo_cfg, hr


def test_pipeline_exit_codes(pipeline):
    _, codes, _, _ = pipeline
    assert codes == {"zoo": 0, "mp": 0, "vd": 0, "hr": 0}


def test_train_zoo_index(pipeline):
    root = pipeline[0]
    index = read_index(root / "zoo")
    assert len(index["models"]) == 2
    assert all(m["status"] == "ok" and m["final"]["epoch"] == 2 for m in index["models"])
    assert index["models"][1]["factors"]["seed"] == 1


def test_train_zoo_rerun_byte_identical(pipeline):
    root, _, zoo_cfg, _ = pipeline
    cfg = _write(root / "zoo2.json", zoo_cfg)
    assert main(["train-zoo", "--config", cfg, "--out", str(root / "zoo2"), "--workers", "2"]) == 0
    a = {p.relative_to(root / "zoo"): p.read_bytes() for p in (root / "zoo").rglob("*.ztc")}
    b = {p.relative_to(root / "zoo2"): p.read_bytes() for p in (root / "zoo2").rglob("*.ztc")}
    assert a and a == b


def test_mp_twin_states(pipeline):
    root = pipeline[0]
    assert twin_tags(root / "mp") == ["mp_0.5"]
    trajs = load_twin(root / "mp", "mp_0.5")
    assert len(trajs) == 2 and all(len(t.steps) == 16 for t in trajs)


def test_vd_twin_states(pipeline):
    root = pipeline[0]
    trajs = load_twin(root / "vd", "vd")
    assert len(trajs) == 2 and all(len(t.steps) == 26 for t in trajs)
    assert all(s.log_alpha is not None for s in trajs[0].steps)
    assert (root / "vd" / "vd" / "metrics.csv").exists()


def test_analyze_self_and_twin(pipeline, tmp_path):
    root = pipeline[0]
    cfg = {"original": str(root / "zoo"), "twin": str(root / "zoo")}
    assert main(["analyze", "--config", _write(tmp_path / "a.json", cfg), "--out", str(tmp_path / "self")]) == 0
    agree = _rows(tmp_path / "self" / "agreement.csv")
    assert len(agree) == 2 and all(float(r["agreement"]) == 1.0 for r in agree)

    cfg = {"original": str(root / "zoo"), "twin": str(root / "mp")}
    assert main(["analyze", "--config", _write(tmp_path / "b.json", cfg), "--out", str(tmp_path / "mp")]) == 0
    corr = _rows(tmp_path / "mp" / "correlation.csv")
    assert [r["sparsity_level"] for r in corr] == ["mp_0.5"]
    for name in ("layer_sparsity.csv", "layer_scatter.tsv", "trajectories.csv"):
        assert (tmp_path / "mp" / name).exists()
    layer = _rows(tmp_path / "mp" / "layer_sparsity.csv")
    assert {"Conv1", "Conv2", "Conv3", "FC1", "FC2", "Accuracy", "GGAP"} <= set(layer[0])


def test_hyperrep_outputs(pipeline):
    root = pipeline[0]
    probe = _rows(root / "hr" / "probe.csv")
    assert [r["target"] for r in probe] == ["accuracy", "sparsity", "epoch", "ggap"]
    assert list(probe[0]) == ["target", "r2", "n_train", "n_test"]
    for name in ("ae.ztc", "loss_log.csv", "embeddings.ztc", "embeddings.json", "probe_control.csv", "reconstruction.csv"):
        assert (root / "hr" / name).exists(), name


def test_hyperrep_rerun_identical(pipeline, tmp_path):
    root, _, _, hr = pipeline
    assert main(["hyperrep", "--config", _write(tmp_path / "h.json", hr), "--out", str(tmp_path / "hr")]) == 0
    assert (tmp_path / "hr" / "probe.csv").read_text() == (root / "hr" / "probe.csv").read_text()


def test_hyperrep_on_mp_zoo_is_config_error(pipeline, tmp_path, capsys):
    root = pipeline[0]
    cfg = {"twin": str(root / "mp")}
    assert main(["hyperrep", "--config", _write(tmp_path / "h.json", cfg), "--out", str(tmp_path / "o")]) == 2
    assert "alpha" in capsys.readouterr().err


def test_orphan_ids_exit_2(pipeline, tmp_path, ds_config, capsys):
    root = pipeline[0]
    one = {"dataset": ds_config, "grid": {"n_models": 1}, "epochs": 1}
    assert main(["train-zoo", "--config", _write(tmp_path / "z.json", one), "--out", str(tmp_path / "one")]) == 0
    cfg = {"original": str(tmp_path / "one"), "twin": str(root / "mp")}
    assert main(["analyze", "--config", _write(tmp_path / "a.json", cfg), "--out", str(tmp_path / "o")]) == 2
    assert "[1]" in capsys.readouterr().err


def test_missing_dataset_exit_3(tmp_path, ds_config, capsys):
    ds = dict(ds_config, train_images=str(tmp_path / "nope.gz"))
    cfg = {"dataset": ds, "grid": {"n_models": 1}, "epochs": 1}
    assert main(["train-zoo", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path / "o")]) == 3
    assert "nope.gz" in capsys.readouterr().err


def test_unknown_method_exit_2(tmp_path):
    cfg = {"zoo": str(tmp_path), "method": "lottery"}
    assert main(["sparsify", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("cfg", ["{not json", json.dumps({"grid": {}})])
def test_bad_config_exit_2(tmp_path, cfg):
    (tmp_path / "c.json").write_text(cfg)
    assert main(["train-zoo", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2


def test_refuses_non_empty_out(tmp_path, ds_config):
    out = tmp_path / "o"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    cfg = _write(tmp_path / "c.json", {"dataset": ds_config, "grid": {"n_models": 1}, "epochs": 1})
    assert main(["train-zoo", "--config", cfg, "--out", str(out)]) == 2
    assert (out / "keep.txt").exists()
    assert main(["train-zoo", "--config", cfg, "--out", str(out), "--force"]) == 0
    assert not (out / "keep.txt").exists()


def test_schema_subcommand(capsys):
    assert main(["schema", "sparsify"]) == 0
    assert json.loads(capsys.readouterr().out)["title"] == "sparsify"
    assert main(["frobnicate"]) == 2
