import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from mixgan.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, ConfigError, apply_override,
                        config_hash, load_config, main, validate_report)
from mixgan.data import load_feature_csv, write_feature_csv

TINY = {
    "experiment": "within",
    "seeds": [0],
    "data": {"benchmark": {"n_per_class": 12, "dim": 6, "n_sessions": 2, "class_separation": 10.0}},
    "model": {"latent_dim": 2, "encoder_hidden": [8, 6], "discriminator_hidden": [8, 8]},
    "train": {"pretrain_epochs": 2, "epochs": 2, "batch_size": 16, "lr_autoencoder": 0.002},
    "classifier": {"hidden_units": 8, "epochs": 3, "learning_rate": 0.001, "batch_size": 16},
}


def write_config(tmp_path, doc, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc) if name.endswith(".yaml") else json.dumps(doc))
    return p


class TestBenchmark:
    def test_writes_csv(self, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["benchmark", "--out", str(out), "--n-per-class", "5", "--dim", "7", "--sessions", "3"]) == 0
        d = load_feature_csv(out)
        assert len(d) == 20 and d.dim == 7 and np.unique(d.session).size == 3

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["benchmark", "--out", str(a), "--n-per-class", "4", "--dim", "3"])
        main(["benchmark", "--out", str(b), "--n-per-class", "4", "--dim", "3"])
        assert a.read_bytes() == b.read_bytes()

    def test_refuses_overwrite(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        out.write_text("keep me")
        assert main(["benchmark", "--out", str(out), "--dim", "3"]) == EXIT_DATA
        assert out.read_text() == "keep me" and "--force" in capsys.readouterr().err
        assert main(["benchmark", "--out", str(out), "--dim", "3", "--n-per-class", "2", "--force"]) == 0
        assert len(load_feature_csv(out)) == 8


class TestConfig:
    def test_yaml_and_json_agree(self, tmp_path):
        a = load_config(write_config(tmp_path, TINY, "c.yaml"))
        b = load_config(write_config(tmp_path, TINY, "c.json"))
        assert a == b and config_hash(a) == config_hash(b)

    def test_override(self, tmp_path):
        doc = load_config(write_config(tmp_path, TINY), ["train.epochs=7", "model.encoder_hidden=[4, 3]"])
        assert doc["train"]["epochs"] == 7 and doc["model"]["encoder_hidden"] == [4, 3]

    def test_override_errors(self):
        with pytest.raises(ConfigError):
            apply_override({}, "noequals")
        with pytest.raises(ConfigError):
            apply_override({"a": 3}, "a.b=1")

    def test_field_level_message(self, tmp_path, capsys):
        p = write_config(tmp_path, {**TINY, "train": {"epochs": -1}})
        assert main(["train", str(p), "--run-dir", str(tmp_path / "r")]) == EXIT_CONFIG
        assert "train.epochs" in capsys.readouterr().err

    def test_unknown_field(self, tmp_path, capsys):
        p = write_config(tmp_path, {**TINY, "modle": {}})
        assert main(["train", str(p)]) == EXIT_CONFIG
        assert "modle" in capsys.readouterr().err

    def test_cross_requires_target(self, tmp_path):
        with pytest.raises(ConfigError, match="target"):
            load_config(write_config(tmp_path, {**TINY, "experiment": "cross"}))

    def test_unparseable(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("experiment: [unclosed\n")
        assert main(["evaluate", str(p)]) == EXIT_CONFIG

    def test_yaml_exponent_floats(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(TINY) + "mixup:\n  alpha: 2e-1\n")
        assert load_config(p)["mixup"]["alpha"] == 0.2

    def test_hash_changes_with_content(self):
        assert config_hash(TINY) != config_hash({**TINY, "seeds": [1]})


class TestTrain:
    def test_writes_outputs(self, tmp_path):
        run = tmp_path / "run"
        assert main(["train", str(write_config(tmp_path, TINY)), "--run-dir", str(run)]) == EXIT_OK
        for name in ("checkpoint.mixgan", "train_log.csv", "normalizer.json", "config.json"):
            assert (run / name).is_file()
        assert len((run / "train_log.csv").read_text().splitlines()) == 1 + 4

    def test_default_run_dir(self, tmp_path):
        doc = {**TINY, "output_dir": str(tmp_path / "runs")}
        assert main(["train", str(write_config(tmp_path, doc))]) == EXIT_OK
        (run,) = (tmp_path / "runs").iterdir()
        assert run.name.startswith(config_hash(load_config(write_config(tmp_path, doc))) + "-")
        assert json.loads((run / "config.json").read_text()) == doc

    def test_byte_identical_rerun(self, tmp_path):
        cfg = write_config(tmp_path, TINY)
        main(["train", str(cfg), "--run-dir", str(tmp_path / "a")])
        main(["train", str(cfg), "--run-dir", str(tmp_path / "b")])
        for name in ("checkpoint.mixgan", "train_log.csv", "normalizer.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_data_path(self, tmp_path, capsys):
        doc = {**TINY, "data": {"path": str(tmp_path / "nope.csv")}}
        assert main(["train", str(write_config(tmp_path, doc))]) == EXIT_DATA
        assert "data.path" in capsys.readouterr().err

    def test_input_dim_mismatch(self, tmp_path):
        doc = {**TINY, "model": {**TINY["model"], "input_dim": 9}}
        assert main(["train", str(write_config(tmp_path, doc)), "--run-dir", str(tmp_path / "r")]) == EXIT_DATA

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure(self, tmp_path, capsys):
        cfg = write_config(tmp_path, TINY)
        args = ["train", str(cfg), "--run-dir", str(tmp_path / "r"), "--set", "train.lr_autoencoder=1e200"]
        assert main(args) == EXIT_NUMERICAL
        assert "non-finite" in capsys.readouterr().err

    def test_non_finite_csv_rejected(self, tmp_path):
        main(["benchmark", "--out", str(tmp_path / "d.csv"), "--n-per-class", "8", "--dim", "6"])
        d = load_feature_csv(tmp_path / "d.csv")
        x = d.features.copy()
        x[0, 0] = np.inf
        write_feature_csv(d.with_features(x), tmp_path / "d.csv")
        doc = {**TINY, "data": {"path": str(tmp_path / "d.csv")}}
        assert main(["train", str(write_config(tmp_path, doc)), "--run-dir", str(tmp_path / "r")]) == EXIT_DATA


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    main(["benchmark", "--out", str(tmp / "d.csv"), "--n-per-class", "12", "--dim", "6", "--sessions", "2"])
    doc = {**TINY, "data": {"path": str(tmp / "d.csv")}}
    main(["train", str(write_config(tmp, doc)), "--run-dir", str(tmp / "run")])
    return tmp


class TestInference:
    def args(self, tmp, cmd, out, data=None):
        return [cmd, "--checkpoint", str(tmp / "run" / "checkpoint.mixgan"), "--data", str(data or tmp / "d.csv"),
                "--out", str(out), "--normalizer", str(tmp / "run" / "normalizer.json")]

    def test_generate(self, trained, tmp_path):
        assert main(self.args(trained, "generate", tmp_path / "syn.csv")) == EXIT_OK
        real, syn = load_feature_csv(trained / "d.csv"), load_feature_csv(tmp_path / "syn.csv")
        assert len(syn) == len(real) and syn.dim == real.dim
        assert np.array_equal(syn.labels, real.labels)

    def test_encode(self, trained, tmp_path):
        assert main(self.args(trained, "encode", tmp_path / "z.csv")) == EXIT_OK
        real, z = load_feature_csv(trained / "d.csv"), load_feature_csv(tmp_path / "z.csv")
        assert len(z) == len(real) and z.dim == 2 and np.array_equal(z.labels, real.labels)

    def test_dim_mismatch(self, trained, tmp_path, capsys):
        main(["benchmark", "--out", str(tmp_path / "wide.csv"), "--n-per-class", "3", "--dim", "9"])
        args = self.args(trained, "generate", tmp_path / "o.csv", tmp_path / "wide.csv")
        assert main(args[:-2]) == EXIT_DATA
        assert "6 features" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, trained, tmp_path):
        bad = tmp_path / "bad.mixgan"
        blob = bytearray((trained / "run" / "checkpoint.mixgan").read_bytes())
        blob[100] ^= 1
        bad.write_bytes(bytes(blob))
        args = ["encode", "--checkpoint", str(bad), "--data", str(trained / "d.csv"), "--out", str(tmp_path / "z")]
        assert main(args) == EXIT_DATA


class TestEvaluate:
    def test_within(self, tmp_path, capsys):
        run = tmp_path / "run"
        doc = {**TINY, "seeds": [1, 2]}
        assert main(["evaluate", str(write_config(tmp_path, doc)), "--run-dir", str(run)]) == EXIT_OK
        report = json.loads((run / "report.json").read_text())
        validate_report(report)
        assert sorted(report["settings"]) == ["real", "real+synthetic", "synthetic"]
        assert all(sorted(s["seeds"]) == ["1", "2"] for s in report["settings"].values())
        assert (run / "report.csv").read_text().count("\n") == 1 + 3 * 2 * 2
        assert "true\\pred,angry,happy,neutral,sad" in (run / "confusion.csv").read_text()
        assert "published" in capsys.readouterr().out

    def test_reproducible(self, tmp_path):
        cfg = write_config(tmp_path, TINY)
        main(["evaluate", str(cfg), "--run-dir", str(tmp_path / "a")])
        main(["evaluate", str(cfg), "--run-dir", str(tmp_path / "b")])
        for name in ("report.json", "report.csv", "confusion.csv", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_encoded(self, tmp_path):
        doc = {**TINY, "experiment": "encoded",
               "encoded": {"k": 2, "reducers": ["pca", "proposed"], "mixup_flags": [True]}}
        assert main(["evaluate", str(write_config(tmp_path, doc)), "--run-dir", str(tmp_path / "r")]) == 0
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert sorted(report["settings"]) == ["pca+mixup", "proposed+mixup"]

    def test_cross(self, tmp_path):
        tgt = {"benchmark": {**TINY["data"]["benchmark"], "sample_seed": 3, "corpus": "other"}}
        doc = {**TINY, "experiment": "cross", "target": tgt, "classifier": {**TINY["classifier"], "eval_every": 1}}
        assert main(["evaluate", str(write_config(tmp_path, doc)), "--run-dir", str(tmp_path / "r")]) == 0
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert list(report["settings"]["real"]["seeds"]["0"]["folds"]) == ["other"]

    def test_report_command(self, tmp_path, capsys):
        main(["evaluate", str(write_config(tmp_path, TINY)), "--run-dir", str(tmp_path / "r")])
        capsys.readouterr()
        assert main(["report", str(tmp_path / "r" / "report.json")]) == EXIT_OK
        assert "real+synthetic" in capsys.readouterr().out
        (tmp_path / "junk.json").write_text('{"experiment": "within"}')
        assert main(["report", str(tmp_path / "junk.json")]) == EXIT_DATA


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mixgan", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "evaluate" in out.stdout


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
