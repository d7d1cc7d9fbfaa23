"""Command-line interface and configuration resolution, end to end on
tiny configurations."""

import csv
import json

import pytest

from tmson.cli import main
from tmson.config import (
    ConfigError,
    deep_merge,
    default_config,
    load_config_file,
    resolve_config,
)
from tmson.data import load_jsonl


TINY_RUN_CONFIG = {
    "synth": {"n_train": 30, "n_val": 10, "n_test": 10,
              "d_t": 6, "d_v": 5, "d_a": 4, "T_v": 4, "T_a": 5, "seed": 3},
    "model": {"text_hidden": 6, "d_tp": 4, "d_vp": 4, "d_ap": 3,
              "d_star": 8, "dist_dim": 4, "unc_hidden": 6, "fc_f_hidden": 6},
    "train": {"max_epochs": 2, "patience": 2, "seed": 0},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg_path = d / "config.json"
    cfg_path.write_text(json.dumps(TINY_RUN_CONFIG), encoding="utf-8")
    assert main(["gen-data", "--config", str(cfg_path),
                 "--out", str(d / "data")]) == 0
    assert main(["train", "--config", str(cfg_path),
                 "--train", str(d / "data" / "train.jsonl"),
                 "--val", str(d / "data" / "val.jsonl"),
                 "--out", str(d / "model.tmson")]) == 0
    return d, cfg_path


class TestConfigResolution:
    def test_defaults_shape(self):
        cfg = default_config()
        assert set(cfg) == {"model", "train", "synth", "scheme"}
        assert cfg["model"] == {}
        assert cfg["train"]["max_epochs"] == 50

    def test_deep_merge_is_recursive_and_non_destructive(self):
        base = {"a": {"x": 1, "y": 2}, "b": 3}
        out = deep_merge(base, {"a": {"y": 9}, "c": 4})
        assert out == {"a": {"x": 1, "y": 9}, "b": 3, "c": 4}
        assert base["a"]["y"] == 2

    def test_precedence_flags_over_file_over_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"seed": 5, "max_epochs": 7}}))
        resolved = resolve_config(path, {"train": {"seed": 11}})
        assert resolved["train"]["seed"] == 11          # flag wins
        assert resolved["train"]["max_epochs"] == 7     # file beats default
        assert resolved["train"]["batch_size"] == 16    # default survives

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  oops\n}")
        with pytest.raises(ConfigError, match="line 2"):
            load_config_file(path)

    def test_non_object_root_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_config_file(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config_file(tmp_path / "absent.json")


class TestGenData:
    def test_outputs_and_manifest(self, workdir):
        d, _ = workdir
        data = d / "data"
        for split, n in (("train", 30), ("val", 10), ("test", 10)):
            ds = load_jsonl(data / f"{split}.jsonl")
            assert len(ds) == n
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["splits"] == {"train": 30, "val": 10, "test": 10}
        assert manifest["bayes_floor_mae"] > 0.0
        assert manifest["config"]["synth"]["d_t"] == 6

    def test_deterministic_bytes(self, workdir, tmp_path):
        d, cfg_path = workdir
        assert main(["gen-data", "--config", str(cfg_path),
                     "--out", str(tmp_path / "again")]) == 0
        for name in ("train.jsonl", "val.jsonl", "test.jsonl",
                     "manifest.json"):
            assert ((tmp_path / "again" / name).read_bytes()
                    == (d / "data" / name).read_bytes())

    def test_seed_flag_overrides_config_file(self, workdir, tmp_path):
        _, cfg_path = workdir
        assert main(["gen-data", "--config", str(cfg_path), "--seed", "9",
                     "--out", str(tmp_path / "seeded")]) == 0
        manifest = json.loads((tmp_path / "seeded" / "manifest.json").read_text())
        assert manifest["config"]["synth"]["seed"] == 9

    def test_invalid_config_value_is_reported(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"synth": {"n_train": 0}}))
        rc = main(["gen-data", "--config", str(path),
                   "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_artifacts(self, workdir):
        d, _ = workdir
        ckpt = d / "model.tmson"
        assert ckpt.read_bytes()[:4] == b"TMSN"
        history = json.loads((d / "model.tmson.history.json").read_text())
        assert len(history) == 2
        assert {"epoch", "train_total", "val_mae"} <= set(history[0])

    def test_deterministic_checkpoint(self, workdir, tmp_path):
        d, cfg_path = workdir
        out = tmp_path / "again.tmson"
        assert main(["train", "--config", str(cfg_path),
                     "--train", str(d / "data" / "train.jsonl"),
                     "--val", str(d / "data" / "val.jsonl"),
                     "--out", str(out)]) == 0
        assert out.read_bytes() == (d / "model.tmson").read_bytes()

    def test_missing_data_file(self, workdir, tmp_path, capsys):
        d, cfg_path = workdir
        rc = main(["train", "--config", str(cfg_path),
                   "--train", str(tmp_path / "absent.jsonl"),
                   "--val", str(d / "data" / "val.jsonl"),
                   "--out", str(tmp_path / "m.tmson")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestEvalPredictSweep:
    def test_eval_report(self, workdir, capsys):
        d, _ = workdir
        report_path = d / "report.json"
        rc = main(["eval", "--model", str(d / "model.tmson"),
                   "--data", str(d / "data" / "test.jsonl"),
                   "--report", str(report_path)])
        assert rc == 0
        printed = json.loads(capsys.readouterr().out)
        on_disk = json.loads(report_path.read_text())
        assert printed == on_disk
        assert on_disk["scheme"] == "mosi-acc2-nonneg"
        assert on_disk["mae"] > 0.0
        assert set(on_disk["uncertainty"]) >= {"u_t", "u_v", "u_a", "u_f"}

    def test_eval_scheme_choice_enforced(self, workdir, capsys):
        d, _ = workdir
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--model", str(d / "model.tmson"),
                  "--data", str(d / "data" / "test.jsonl"),
                  "--scheme", "bogus"])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_eval_missing_checkpoint(self, workdir, capsys):
        d, _ = workdir
        rc = main(["eval", "--model", str(d / "nope.tmson"),
                   "--data", str(d / "data" / "test.jsonl")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_predict_stdout_and_file_agree(self, workdir, tmp_path, capsys):
        d, _ = workdir
        rc = main(["predict", "--model", str(d / "model.tmson"),
                   "--data", str(d / "data" / "test.jsonl")])
        assert rc == 0
        stdout_lines = capsys.readouterr().out.strip().splitlines()
        out_path = tmp_path / "preds.jsonl"
        rc = main(["predict", "--model", str(d / "model.tmson"),
                   "--data", str(d / "data" / "test.jsonl"),
                   "--out", str(out_path)])
        assert rc == 0
        file_lines = out_path.read_text().strip().splitlines()
        assert stdout_lines == file_lines
        recs = [json.loads(line) for line in file_lines]
        assert len(recs) == 10
        ds = load_jsonl(d / "data" / "test.jsonl")
        assert [r["id"] for r in recs] == [s.id for s in ds.samples]
        assert set(recs[0]) == {"id", "y_hat", "y_hat_t", "y_hat_v", "y_hat_a"}

    def test_predict_with_uncertainty(self, workdir, tmp_path):
        d, _ = workdir
        out_path = tmp_path / "preds_u.jsonl"
        rc = main(["predict", "--model", str(d / "model.tmson"),
                   "--data", str(d / "data" / "test.jsonl"),
                   "--with-uncertainty", "--out", str(out_path)])
        assert rc == 0
        rec = json.loads(out_path.read_text().splitlines()[0])
        assert {"u_t", "u_v", "u_a", "u_f"} <= set(rec)
        for k in ("u_t", "u_v", "u_a", "u_f"):
            assert 0.0 <= rec[k] <= 1.0

    def test_sweep_csv(self, workdir, tmp_path, capsys):
        d, _ = workdir
        out_path = tmp_path / "sweep.csv"
        rc = main(["sweep", "--model", str(d / "model.tmson"),
                   "--data", str(d / "data" / "test.jsonl"),
                   "--noise", "0,1", "--missing", "0.5",
                   "--seeds", "0,1", "--out", str(out_path)])
        assert rc == 0
        capsys.readouterr()
        with open(out_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [(r["kind"], float(r["value"])) for r in rows] == [
            ("noise", 0.0), ("noise", 1.0), ("missing", 0.5)]

    def test_sweep_empty_grids_fail(self, workdir, tmp_path, capsys):
        d, _ = workdir
        rc = main(["sweep", "--model", str(d / "model.tmson"),
                   "--data", str(d / "data" / "test.jsonl"),
                   "--out", str(tmp_path / "s.csv")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestGradcheckAndUsage:
    @pytest.mark.slow
    def test_gradcheck_command(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "OK" in out

    def test_no_command_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_unknown_command_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        capsys.readouterr()
