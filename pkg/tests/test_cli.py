import pytest

from hapnet.cli import main
from hapnet.data import load_manifest
from hapnet.train import FINAL_CHECKPOINT

from conftest import tiny_config


@pytest.fixture()
def cfg_json(tmp_path):
    path = tmp_path / "tiny.json"
    tiny_config().save(path)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


class TestSynthVerb:
    def test_writes_tree(self, tmp_path, capsys):
        root = tmp_path / "data"
        code = run(
            "synth", "--out", root, "--train", 3, "--val", 2, "--test", 1,
            "--height", 64, "--width", 64, "--classes", 3,
        )
        assert code == 0
        assert "wrote 6 scenes" in capsys.readouterr().out
        manifest = load_manifest(root)
        assert manifest.num_classes == 3
        assert sorted(manifest.splits) == ["test", "train", "val"]
        assert len(manifest.splits["train"]) == 3
        first = manifest.splits["train"][0]
        for sub in ("rgb", "thermal", "labels"):
            assert (root / sub / f"{first}.png").is_file()


class TestTrainVerb:
    def test_synthetic_train_and_report(self, tmp_path, cfg_json):
        out = tmp_path / "run"
        code = run(
            "train", "--config", cfg_json, "--out", out,
            "--synthetic", 2, "--synth-classes", 3, "--epochs", 1,
        )
        assert code == 0
        assert (out / FINAL_CHECKPOINT).is_file()
        assert (out / "metrics.csv").is_file()

    def test_skip_eval(self, tmp_path, cfg_json):
        out = tmp_path / "run"
        code = run(
            "train", "--config", cfg_json, "--out", out,
            "--synthetic", 2, "--synth-classes", 3, "--epochs", 1, "--skip-eval",
        )
        assert code == 0
        assert not (out / "metrics.csv").exists()

    def test_tree_dataset_split(self, tmp_path, cfg_json):
        root = tmp_path / "data"
        run("synth", "--out", root, "--train", 2, "--val", 1, "--test", 1,
            "--classes", 3)
        out = tmp_path / "run"
        code = run(
            "train", "--config", cfg_json, "--out", out, "--data", root,
            "--epochs", 1, "--skip-eval",
        )
        assert code == 0
        assert (out / FINAL_CHECKPOINT).is_file()

    def test_rejects_dataset_with_too_many_classes(self, tmp_path, cfg_json):
        root = tmp_path / "data"
        run("synth", "--out", root, "--train", 1, "--val", 0, "--test", 0,
            "--classes", 7)
        with pytest.raises(SystemExit, match="7 classes"):
            run("train", "--config", cfg_json, "--out", tmp_path / "run",
                "--data", root, "--epochs", 1)

    def test_no_dataset_exits(self, tmp_path, cfg_json, monkeypatch):
        monkeypatch.delenv("HAPNET_DATA_ROOT", raising=False)
        with pytest.raises(SystemExit, match="no dataset"):
            run("train", "--config", cfg_json, "--out", tmp_path / "run")

    def test_seed_flag_changes_run(self, tmp_path, cfg_json):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out, seed in ((a, 3), (b, 4)):
            run("train", "--config", cfg_json, "--seed", seed, "--out", out,
                "--synthetic", 2, "--synth-classes", 3, "--epochs", 1, "--skip-eval")
        assert (a / FINAL_CHECKPOINT).read_bytes() != (b / FINAL_CHECKPOINT).read_bytes()


class TestEvalVerb:
    def test_eval_prints_metrics_and_writes_overlays(self, tmp_path, cfg_json, capsys):
        out = tmp_path / "run"
        run("train", "--config", cfg_json, "--out", out,
            "--synthetic", 2, "--synth-classes", 3, "--epochs", 1, "--skip-eval")
        capsys.readouterr()
        code = run(
            "eval", "--checkpoint", out / FINAL_CHECKPOINT,
            "--synthetic", 2, "--synth-classes", 3, "--overlays",
        )
        assert code == 0
        line = capsys.readouterr().out
        assert "mAcc " in line and "mIoU " in line
        eval_dir = out / "eval_val"
        assert (eval_dir / "metrics.csv").is_file()
        overlays = list((eval_dir / "overlays").iterdir())
        assert len(overlays) == 4


class TestAblateVerb:
    def test_two_variants(self, tmp_path, cfg_json, capsys):
        out = tmp_path / "ab"
        code = run(
            "ablate", "--config", cfg_json, "--out", out,
            "--variants", "full,summation", "--synthetic", 2,
            "--synth-classes", 3, "--eval-count", 2, "--epochs", 1,
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "full" in printed and "summation" in printed
        csv = (out / "ablation.csv").read_text().strip().split("\n")
        assert len(csv) == 3


class TestCheckVerb:
    def test_selfcheck_passes(self, capsys):
        assert run("check") == 0
        assert "FAIL" not in capsys.readouterr().out
