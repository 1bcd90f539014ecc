"""Command-line pipelines: artifacts, determinism, error channels."""

import json

import numpy as np
import pytest

from dar.cli import main
from dar.config import apply_overrides, config_hash, load_config
from dar.labels import load_manifest


def _base_config(tmp_path, **extra):
    cfg = {
        "out": str(tmp_path / "runs"),
        "prep": {"crop_side": 12, "patch_size": 8, "window": [0.0, 1.0]},
        "train": {"batch_size": 8, "epochs": 1, "m": 2, "base_width": 3,
                  "seed": 0, "lr_pretrain": 1e-3, "lr_finetune": 5e-4},
        "synth": {
            "spec": {
                "n_samples": 50, "side": 12, "seed": 1, "center_jitter": 1,
                "radius_lo": [1.5, 2.0, 2.5, 3.0, 3.5],
                "radius_hi": [1.9, 2.4, 2.9, 3.4, 3.9],
            },
        },
    }
    cfg.update(extra)
    return cfg


def _write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """A synthesized dataset pair (train/test) shared by CLI tests."""
    tmp_path = tmp_path_factory.mktemp("cli_data")
    cfg = _base_config(tmp_path)
    cfg["synth"]["out_dir"] = str(tmp_path / "train_data")
    path = _write_config(tmp_path, cfg, "synth_train.json")
    assert main(["synth", "--config", str(path)]) == 0

    cfg_test = _base_config(tmp_path)
    cfg_test["synth"]["out_dir"] = str(tmp_path / "test_data")
    cfg_test["synth"]["spec"]["n_samples"] = 20
    cfg_test["synth"]["spec"]["seed"] = 2
    path = _write_config(tmp_path, cfg_test, "synth_test.json")
    assert main(["synth", "--config", str(path)]) == 0

    return {
        "tmp": tmp_path,
        "train_manifest": str(tmp_path / "train_data" / "manifest.jsonl"),
        "test_manifest": str(tmp_path / "test_data" / "manifest.jsonl"),
        "truth": str(tmp_path / "test_data" / "truth.json"),
    }


class TestConfigMachinery:
    def test_defaults_plus_overrides(self, tmp_path):
        path = _write_config(tmp_path, {"q": 5, "train": {"epochs": 7}})
        cfg = load_config(path)
        assert cfg["train"]["epochs"] == 7
        assert cfg["train"]["batch_size"] == 32  # untouched default
        apply_overrides(cfg, ["train.mu=0.4", "manifest=data.jsonl"])
        assert cfg["train"]["mu"] == 0.4
        assert cfg["manifest"] == "data.jsonl"

    def test_unknown_section_rejected(self, tmp_path):
        path = _write_config(tmp_path, {"nonsense": 1})
        code = main(["partition", "--config", str(path)])
        assert code == 2

    def test_hash_stability(self):
        cfg_a = load_config(None)
        cfg_b = load_config(None)
        assert config_hash(cfg_a) == config_hash(cfg_b)
        apply_overrides(cfg_b, ["train.seed=9"])
        assert config_hash(cfg_a) != config_hash(cfg_b)


class TestPartitionCommand:
    def test_three_record_manifest_summary(self, tmp_path, capsys):
        manifest = tmp_path / "m.jsonl"
        rows = [
            {"id": "a", "volume": "a.nvol", "annotations": [3, 3, 3], "center": [0, 0, 0]},
            {"id": "b", "volume": "b.nvol", "annotations": [2, 3], "center": [0, 0, 0]},
            {"id": "c", "volume": "c.nvol", "annotations": [4], "center": [0, 0, 0]},
        ]
        manifest.write_text("\n".join(json.dumps(r) for r in rows))
        cfg = _write_config(tmp_path, {"manifest": str(manifest),
                                       "out": str(tmp_path / "runs")})
        code, out, _ = _run(capsys, "partition", "--config", str(cfg))
        assert code == 0
        assert json.loads(out) == {"cr": 1, "ic": 1, "lr": 1}

    def test_partition_detail_artifact(self, tmp_path, capsys):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(json.dumps({"id": "a", "volume": "a.nvol",
                                        "annotations": [1], "center": [0, 0, 0]}))
        cfg = _write_config(tmp_path, {"manifest": str(manifest),
                                       "out": str(tmp_path / "runs")})
        code, out, _ = _run(capsys, "partition", "--config", str(cfg))
        assert code == 0
        run_dirs = list((tmp_path / "runs").iterdir())
        assert len(run_dirs) == 1
        detail = json.loads((run_dirs[0] / "partition.json").read_text())
        assert detail["lr"] == ["a"]
        assert (run_dirs[0] / "resolved_config.json").exists()


class TestSynthCommand:
    def test_dataset_generated(self, dataset):
        records = load_manifest(dataset["train_manifest"])
        assert len(records) == 50
        truth = json.loads((dataset["tmp"] / "train_data" / "truth.json").read_text())
        assert set(truth) == {r.id for r in records}


class TestTrainingChain:
    def test_pretrain_finetune_fuse_eval(self, dataset, tmp_path, capsys):
        tmp = dataset["tmp"]
        base = _base_config(tmp, manifest=dataset["train_manifest"],
                            test_manifest=dataset["test_manifest"],
                            truth=dataset["truth"])
        base["out"] = str(tmp_path / "runs")
        cfg_path = _write_config(tmp_path, base)

        code, out, err = _run(capsys, "pretrain", "--config", str(cfg_path))
        assert code == 0, err
        pre_dir = json.loads(out)["checkpoints"]

        code, out, err = _run(capsys, "finetune", "--config", str(cfg_path),
                              "--set", f"checkpoints.pretrain_dir={pre_dir}")
        assert code == 0, err
        dar_dir = json.loads(out)["checkpoints"]

        code, out, err = _run(capsys, "fuse-train", "--config", str(cfg_path),
                              "--set", f"checkpoints.dar_dir={dar_dir}")
        assert code == 0, err
        mv_path = json.loads(out)["checkpoint"]

        code, out, err = _run(capsys, "eval", "--config", str(cfg_path),
                              "--set", f"checkpoints.mv={mv_path}")
        assert code == 0, err
        payload = json.loads(out)
        assert 0.0 <= payload["accuracy"] <= 1.0
        metrics = json.loads((tmp_path / "runs").joinpath(
            *json.loads(out)["metrics"].split("/")[-2:]).read_text())
        assert "macro_auc" in metrics

    def test_eval_reproducible_byte_identical(self, dataset, tmp_path, capsys):
        tmp = dataset["tmp"]
        base = _base_config(tmp, manifest=dataset["train_manifest"],
                            test_manifest=dataset["test_manifest"],
                            truth=dataset["truth"])
        base["out"] = str(tmp_path / "runs")
        cfg_path = _write_config(tmp_path, base)
        code, out, err = _run(capsys, "pretrain", "--config", str(cfg_path))
        assert code == 0, err
        pre_dir = json.loads(out)["checkpoints"]
        code, out, err = _run(capsys, "finetune", "--config", str(cfg_path),
                              "--set", f"checkpoints.pretrain_dir={pre_dir}")
        dar_dir = json.loads(out)["checkpoints"]
        code, out, err = _run(capsys, "fuse-train", "--config", str(cfg_path),
                              "--set", f"checkpoints.dar_dir={dar_dir}")
        mv_path = json.loads(out)["checkpoint"]

        code, out, _ = _run(capsys, "eval", "--config", str(cfg_path),
                            "--set", f"checkpoints.mv={mv_path}")
        metrics_path = json.loads(out)["metrics"]
        first = open(metrics_path, "rb").read()
        code, out, _ = _run(capsys, "eval", "--config", str(cfg_path),
                            "--set", f"checkpoints.mv={mv_path}")
        second = open(json.loads(out)["metrics"], "rb").read()
        assert first == second


class TestSweepCommand:
    def test_default_grid_emits_25_rows(self, dataset, tmp_path, capsys):
        base = _base_config(dataset["tmp"], manifest=dataset["train_manifest"],
                            test_manifest=dataset["test_manifest"],
                            truth=dataset["truth"])
        base["out"] = str(tmp_path / "runs")
        cfg_path = _write_config(tmp_path, base)
        code, out, err = _run(capsys, "sweep", "--config", str(cfg_path))
        assert code == 0, err
        curve = json.loads(out)["curve"]
        rows = open(curve).read().strip().splitlines()
        assert len(rows) == 26  # header + 25 grid points


class TestRobustnessCommand:
    def test_two_point_curve(self, dataset, tmp_path, capsys):
        base = _base_config(dataset["tmp"], manifest=dataset["train_manifest"],
                            test_manifest=dataset["test_manifest"],
                            truth=dataset["truth"])
        base["out"] = str(tmp_path / "runs")
        base["robustness"] = {"fractions": [0.5, 1.0], "seeds": [0]}
        cfg_path = _write_config(tmp_path, base)
        code, out, err = _run(capsys, "robustness", "--config", str(cfg_path))
        assert code == 0, err
        curve = json.loads(out)["curve"]
        assert [p["fraction"] for p in curve] == [0.5, 1.0]


class TestCrossvalCommand:
    def test_jobs_parallel_matches_sequential(self, dataset, tmp_path, capsys):
        base = _base_config(dataset["tmp"], manifest=dataset["train_manifest"])
        base["out"] = str(tmp_path / "runs_seq")
        base["crossval"] = {"folds": 2, "repeats": 1}
        cfg_path = _write_config(tmp_path, base, "cv.json")
        code, out_seq, err = _run(capsys, "crossval", "--config", str(cfg_path))
        assert code == 0, err

        base["out"] = str(tmp_path / "runs_par")
        cfg_path = _write_config(tmp_path, base, "cv_par.json")
        code, out_par, err = _run(capsys, "crossval", "--config", str(cfg_path),
                                  "--jobs", "2")
        assert code == 0, err
        seq = json.loads(out_seq)["aggregate"]
        par = json.loads(out_par)["aggregate"]
        assert seq == par


class TestCompareCommand:
    def test_emits_table_and_pvalues(self, dataset, tmp_path, capsys):
        base = _base_config(dataset["tmp"], manifest=dataset["train_manifest"],
                            test_manifest=dataset["test_manifest"],
                            truth=dataset["truth"])
        base["out"] = str(tmp_path / "runs")
        base["compare"] = {"seeds": [0, 1]}
        cfg_path = _write_config(tmp_path, base)
        code, out, err = _run(capsys, "compare", "--config", str(cfg_path))
        assert code == 0, err
        payload = json.loads(out)
        assert set(payload["accuracy_means"]) == {"mv_dar", "mv_prd", "ave"}
        assert set(payload["pvalues"]) == {"mv_dar_vs_mv_prd", "mv_dar_vs_ave"}


class TestDumpFeatures:
    def test_writes_pngs(self, dataset, tmp_path, capsys):
        tmp = dataset["tmp"]
        base = _base_config(tmp, manifest=dataset["train_manifest"])
        base["out"] = str(tmp_path / "runs")
        cfg_path = _write_config(tmp_path, base)
        code, out, err = _run(capsys, "pretrain", "--config", str(cfg_path))
        assert code == 0, err
        pre_dir = json.loads(out)["checkpoints"]
        code, out, err = _run(capsys, "finetune", "--config", str(cfg_path),
                              "--set", f"checkpoints.pretrain_dir={pre_dir}")
        dar_dir = json.loads(out)["checkpoints"]
        rid = load_manifest(dataset["train_manifest"])[0].id
        code, out, err = _run(capsys, "dump-features", "--config", str(cfg_path),
                              "--set", f"checkpoints.dar_dir={dar_dir}",
                              "--set", f"dump.record={rid}", "--set", "dump.block=2")
        assert code == 0, err
        images = json.loads(out)["images"]
        assert len(images) == 4


class TestErrorChannels:
    def test_missing_manifest_is_data_error(self, tmp_path, capsys):
        cfg_path = _write_config(tmp_path, {"manifest": str(tmp_path / "nope.jsonl"),
                                            "out": str(tmp_path / "runs")})
        code, out, err = _run(capsys, "partition", "--config", str(cfg_path))
        assert code == 3
        payload = json.loads(err)
        assert payload["error"]["kind"] == "data"

    def test_missing_required_key_is_config_error(self, tmp_path, capsys):
        cfg_path = _write_config(tmp_path, {"out": str(tmp_path / "runs")})
        code, _, err = _run(capsys, "partition", "--config", str(cfg_path))
        assert code == 2
        assert json.loads(err)["error"]["kind"] == "config"

    def test_seed_flag_overrides(self, tmp_path, capsys):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(json.dumps({"id": "a", "volume": "a.nvol",
                                        "annotations": [1], "center": [0, 0, 0]}))
        cfg_path = _write_config(tmp_path, {"manifest": str(manifest),
                                            "out": str(tmp_path / "runs")})
        code, _, _ = _run(capsys, "partition", "--config", str(cfg_path),
                          "--seed", "42")
        assert code == 0
        runs = list((tmp_path / "runs").iterdir())
        assert any(d.name.endswith("-s42") for d in runs)

    def test_dar_out_env_override(self, tmp_path, capsys, monkeypatch):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(json.dumps({"id": "a", "volume": "a.nvol",
                                        "annotations": [1], "center": [0, 0, 0]}))
        monkeypatch.setenv("DAR_OUT", str(tmp_path / "elsewhere"))
        cfg_path = _write_config(tmp_path, {"manifest": str(manifest),
                                            "out": str(tmp_path / "runs")})
        code, _, _ = _run(capsys, "partition", "--config", str(cfg_path))
        assert code == 0
        assert (tmp_path / "elsewhere").exists()
        assert not (tmp_path / "runs").exists()
