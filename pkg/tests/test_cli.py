"""Command-line train / eval / gradcheck."""
import json
import os

import pytest

from mdst import gradcheck
from mdst.cli import main
from mdst.data import SyntheticSpec, generate_synthetic, save_dataset
from mdst.errors import ConfigError

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SMOKE = os.path.join(ROOT, "configs", "smoke.toml")


def read_lines(path):
    with open(path) as fh:
        return [json.loads(l) for l in fh if l.strip()]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--model", "mdstpp", "--config", SMOKE, "--seed", "3", "--out", str(out)]) == 0
    return out


class TestTrain:
    def test_metrics_lines(self, trained):
        rows = read_lines(trained / "metrics.jsonl")
        assert [r["epoch"] for r in rows] == [1, 2]
        for r in rows:
            assert set(r) == {"epoch", "L_n", "L_p", "L_r", "L_total", "per_stage"}
            assert len(r["per_stage"]) == 2

    def test_weight_manifest(self, trained):
        rows = read_lines(trained / "weights" / "manifest.jsonl")
        assert rows and all(set(r) == {"name", "file", "shape"} for r in rows)
        for r in rows:
            with open(trained / "weights" / r["file"], "rb") as fh:
                assert fh.read(4) == b"SPKT"

    def test_report(self, trained):
        rep = json.loads((trained / "report.json").read_text())
        assert rep["model"] == "mdstpp" and rep["seed"] == 3
        assert set(rep["gzsl"]) == {"seen_acc", "unseen_acc", "hm", "zsl_acc"}

    def test_eval_reproduces_report(self, trained, capsys):
        rep = json.loads((trained / "report.json").read_text())
        capsys.readouterr()
        for split in ("zsl", "gzsl"):
            assert main(["eval", "--weights", str(trained / "weights"), "--split", split]) == 0
            out = json.loads(capsys.readouterr().out)
            assert out.pop("split") == split
            assert out == rep[split]

    def test_eval_accepts_run_dir(self, trained, capsys):
        assert main(["eval", "--weights", str(trained), "--split", "zsl"]) == 0
        assert json.loads(capsys.readouterr().out)["split"] == "zsl"


def test_train_from_feature_directory(tmp_path, capsys):
    data = tmp_path / "features"
    save_dataset(generate_synthetic(SyntheticSpec(samples_per_class=6, frames=10, feature_dim=6, word_dim=12),
                                    seed=0), data)
    out = tmp_path / "run"
    assert main(["train", "--config", SMOKE, "--seed", "1", "--data", str(data), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["eval", "--weights", str(out / "weights"), "--split", "gzsl", "--data", str(data)]) == 0
    assert 0.0 <= json.loads(capsys.readouterr().out)["hm"] <= 100.0


def test_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('preset = "huge"\n')
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["eval", "--weights", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--module", "training"]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert lines[-1]["module"] == "training" and lines[-1]["ok"]
    assert {l["case"] for l in lines[:-1]} == {"triplet_loss", "projection_loss", "reconstruction_loss"}


def test_gradcheck_unknown_module():
    with pytest.raises(SystemExit):
        main(["gradcheck", "--module", "nope"])
    with pytest.raises(ConfigError):
        gradcheck.run("nope")
