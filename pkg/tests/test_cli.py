"""End-to-end CLI pipeline on a tiny dataset plus error-path behavior."""

import json

import numpy as np
import pytest

from tsmkit import cli
from tsmkit.train import PredictionSet


def strip_seconds(csv_text):
    lines = csv_text.strip().splitlines()
    return [",".join(line.split(",")[:-1]) for line in lines]


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ds")
    rc = cli.main(["gen-data", "--out", str(root), "--classes", "2",
                   "--clips-per-class", "6", "--seed", "0"])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    ckpt = out / "ir.ckpt"
    rc = cli.main(["train", "--data", str(tiny_dataset / "manifest.jsonl"),
                   "--out", str(ckpt), "--classes", "2", "--segments", "4",
                   "--epochs", "2", "--log", str(out / "log.csv")])
    assert rc == 0
    return tiny_dataset, out, ckpt


class TestGenData:
    def test_outputs(self, tiny_dataset):
        manifest = tiny_dataset / "manifest.jsonl"
        assert manifest.exists()
        records = [json.loads(l) for l in manifest.read_text().splitlines()]
        assert len(records) == 2 * 6 * 2
        assert {r["split"] for r in records} == {"train", "val"}
        assert (tiny_dataset / "run_config.json").exists()

    def test_deterministic(self, tiny_dataset, tmp_path):
        cli.main(["gen-data", "--out", str(tmp_path), "--classes", "2",
                  "--clips-per-class", "6", "--seed", "0"])
        a = (tiny_dataset / "manifest.jsonl").read_bytes()
        b = (tmp_path / "manifest.jsonl").read_bytes()
        assert a == b


class TestTrainPredict:
    def test_checkpoint_and_log_written(self, trained):
        _, out, ckpt = trained
        assert ckpt.exists()
        assert (out / "log.csv").exists()
        assert (str(ckpt) + ".config.json") in [
            str(p) for p in out.iterdir() if p.suffix == ".json"]
        lines = (out / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_top1,val_top5,seconds"
        assert len(lines) == 3

    def test_repeat_run_reproduces_artifacts(self, trained, tmp_path):
        ds, out, ckpt = trained
        ckpt2 = tmp_path / "again.ckpt"
        rc = cli.main(["train", "--data", str(ds / "manifest.jsonl"),
                       "--out", str(ckpt2), "--classes", "2",
                       "--segments", "4", "--epochs", "2",
                       "--log", str(tmp_path / "log.csv")])
        assert rc == 0
        assert ckpt.read_bytes() == ckpt2.read_bytes()
        # the log matches except for the wall-clock seconds column
        a = strip_seconds((out / "log.csv").read_text())
        b = strip_seconds((tmp_path / "log.csv").read_text())
        assert a == b

    def test_predict_and_eval(self, trained, tmp_path, capsys):
        ds, _, ckpt = trained
        preds = tmp_path / "val.jsonl"
        rc = cli.main(["predict", "--ckpt", str(ckpt), "--data",
                       str(ds / "manifest.jsonl"), "--split", "val",
                       "--out", str(preds)])
        assert rc == 0
        loaded = PredictionSet.load(preds)
        assert loaded.probs.shape[1] == 2
        np.testing.assert_allclose(loaded.probs.sum(axis=1), 1.0, atol=1e-6)
        rc = cli.main(["eval", "--preds", str(preds), "--data",
                       str(ds / "manifest.jsonl"), "--split", "val"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "top1" in out and "top5" in out


class TestEnsembleCli:
    def test_degenerate_weights_select_first_member(self, trained, tmp_path):
        ds, _, ckpt = trained
        preds = tmp_path / "p.jsonl"
        cli.main(["predict", "--ckpt", str(ckpt), "--data",
                  str(ds / "manifest.jsonl"), "--out", str(preds)])
        other = tmp_path / "uniform.jsonl"
        base = PredictionSet.load(preds)
        PredictionSet(base.ids, np.full_like(base.probs, 0.5)).save(other)
        combined = tmp_path / "ens.jsonl"
        rc = cli.main(["ensemble", "--preds", str(preds), str(other),
                       "--weights", "1,0", "--out", str(combined)])
        assert rc == 0
        out = PredictionSet.load(combined)
        np.testing.assert_allclose(out.probs, base.probs, atol=1e-9)

    def test_search_writes_spec(self, trained, tmp_path):
        ds, _, ckpt = trained
        preds = tmp_path / "p.jsonl"
        cli.main(["predict", "--ckpt", str(ckpt), "--data",
                  str(ds / "manifest.jsonl"), "--out", str(preds)])
        spec = tmp_path / "spec.json"
        rc = cli.main(["ensemble", "--preds", str(preds), str(preds),
                       "--search", "--step", "0.5",
                       "--data", str(ds / "manifest.jsonl"),
                       "--out", str(tmp_path / "ens.jsonl"),
                       "--spec-out", str(spec)])
        assert rc == 0
        members = json.loads(spec.read_text())["members"]
        assert len(members) == 2
        assert sum(m["weight"] for m in members) == pytest.approx(1.0)

    def test_requires_weights_or_search(self, trained, tmp_path, capsys):
        ds, _, ckpt = trained
        preds = tmp_path / "p.jsonl"
        cli.main(["predict", "--ckpt", str(ckpt), "--data",
                  str(ds / "manifest.jsonl"), "--out", str(preds)])
        rc = cli.main(["ensemble", "--preds", str(preds),
                       "--out", str(tmp_path / "ens.jsonl")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestReportCli:
    def test_table_and_csv(self, trained, tmp_path, capsys):
        ds, _, ckpt = trained
        preds = tmp_path / "p.jsonl"
        cli.main(["predict", "--ckpt", str(ckpt), "--data",
                  str(ds / "manifest.jsonl"), "--out", str(preds)])
        csv = tmp_path / "report.csv"
        rc = cli.main(["report", "--row", f"ir={preds}", "--data",
                       str(ds / "manifest.jsonl"), "--csv", str(csv)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "Method" in out and "ir" in out
        assert csv.read_text().startswith("method,top1,top5\n")


class TestUtilityCommands:
    def test_grad_check_passes(self, capsys):
        assert cli.main(["grad-check"]) == 0
        out = capsys.readouterr().out
        assert "max rel err" in out

    def test_shift_demo(self, capsys):
        assert cli.main(["shift-demo", "--segments", "3", "--channels", "4",
                         "--fold-div", "4"]) == 0
        out = capsys.readouterr().out
        assert "ch0" in out and "ch3" in out


class TestErrorPaths:
    def test_missing_manifest(self, capsys, tmp_path):
        rc = cli.main(["predict", "--ckpt", str(tmp_path / "no.ckpt"),
                       "--data", str(tmp_path / "no.jsonl"),
                       "--out", str(tmp_path / "o.jsonl")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_weight_count_mismatch(self, trained, tmp_path, capsys):
        ds, _, ckpt = trained
        preds = tmp_path / "p.jsonl"
        cli.main(["predict", "--ckpt", str(ckpt), "--data",
                  str(ds / "manifest.jsonl"), "--out", str(preds)])
        rc = cli.main(["ensemble", "--preds", str(preds), "--weights",
                       "0.5,0.5", "--out", str(tmp_path / "e.jsonl")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err
