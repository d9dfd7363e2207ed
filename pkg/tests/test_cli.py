import filecmp
import hashlib
import math
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from stawgan.cli import main
from stawgan.dataset import DatasetManifest, PairedTranslationDataset, make_toy_dataset, normalize
from stawgan.losses import ssim
from stawgan.metrics import MetricReport
from stawgan.models import ModelConfig, StawGAN, save_model
from stawgan.training import collate


def tree_digest(root: Path) -> dict[str, str]:
    return {
        p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def one_line_error(capsys) -> str:
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ") and "\n" not in err
    return err


@pytest.fixture(scope="module")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_toy")
    assert main(["make-toy", "--out", str(root), "--n", "8", "--n-val", "4", "--size", "32", "--seed", "2"]) == 0
    return root


@pytest.fixture(scope="module")
def overfit_checkpoint(tmp_path_factory, toy_root):
    """Generator fitted with supervision on the four val pairs (IR -> RGB)."""
    manifest = DatasetManifest.load(toy_root / "val_manifest.txt")
    batch = collate([PairedTranslationDataset(manifest, 32)[i] for i in range(4)], 0)
    torch.manual_seed(0)
    model = StawGAN(ModelConfig.toy(32))
    opt = torch.optim.Adam(model.generator.parameters(), 2e-3)
    for _ in range(500):
        x_t, r_t = model.generator(batch["x"], batch["r"], batch["t"])
        loss = (x_t - batch["paired"]).abs().mean() + (r_t - batch["r"]).abs().mean()
        loss = loss + 1 - ssim(x_t, batch["paired"], window=7)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return save_model(model, tmp_path_factory.mktemp("ckpt") / "overfit.pt")


class TestMakeToy:
    def test_deterministic_tree(self, tmp_path):
        args = ["make-toy", "--n", "6", "--n-val", "2", "--size", "32", "--seed", "7"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        da, db = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
        assert da and da.keys() == db.keys()
        # manifests embed no absolute paths, so every file matches byte for byte
        assert da == db

    def test_env_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STAWGAN_DATA_ROOT", str(tmp_path))
        from stawgan import cli

        parser = cli.build_parser()
        assert parser.parse_args(["make-toy"]).data_root == str(tmp_path)


class TestMakeMasks:
    def test_rebuilds_masks_and_manifest(self, tmp_path):
        make_toy_dataset(tmp_path, 5, 32, seed=0)
        masks = sorted((tmp_path / "train" / "mask").glob("*.png"))
        before = {p.name: p.read_bytes() for p in masks}
        for p in masks:
            p.unlink()
        (tmp_path / "train_manifest.txt").unlink()
        assert main(["make-masks", "--data-root", str(tmp_path), "--splits", "train"]) == 0
        after = {p.name: p.read_bytes() for p in (tmp_path / "train" / "mask").glob("*.png")}
        assert after == before
        assert len(DatasetManifest.load(tmp_path / "train_manifest.txt")) == 5

    def test_missing_root(self, tmp_path, capsys):
        assert main(["make-masks", "--data-root", str(tmp_path / "absent")]) == 2
        assert str(tmp_path / "absent") in one_line_error(capsys)


class TestTrain:
    def test_writes_run_artifacts(self, toy_root, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--data-root", str(toy_root), "--out", str(out), "--epochs", "1", "--batch-size", "4",
                     "--image-size", "32", "--model-size", "toy", "--seed", "1"])
        assert code == 0
        for name in ("ckpt_e000.pt", "ckpt_e001.pt", "last.pt", "metrics.log", "loss_curves.png",
                     "metrics.txt", "table.md", "samples.png"):
            assert (out / name).is_file(), name
        assert len((out / "metrics.log").read_text().splitlines()) == 2

    def test_resume(self, toy_root, tmp_path):
        out = tmp_path / "run"
        base = ["train", "--data-root", str(toy_root), "--batch-size", "4", "--image-size", "32",
                "--model-size", "toy", "--seed", "1"]
        assert main(base + ["--out", str(out), "--epochs", "1"]) == 0
        assert main(base + ["--out", str(tmp_path / "more"), "--epochs", "2",
                            "--checkpoint", str(out / "last.pt")]) == 0
        assert (tmp_path / "more" / "ckpt_e002.pt").is_file()
        assert not (tmp_path / "more" / "ckpt_e000.pt").exists()

    def test_config_file(self, toy_root, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 1\nbatch_size = 8\nimage_size = 32\nlambda_cross = 5\n")
        assert main(["train", "--data-root", str(toy_root), "--out", str(tmp_path / "r"), "--config", str(cfg),
                     "--model-size", "toy"]) == 0
        assert len((tmp_path / "r" / "metrics.log").read_text().splitlines()) == 1

    def test_invalid_config(self, toy_root, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learning_rate = 1\n")
        assert main(["train", "--data-root", str(toy_root), "--out", str(tmp_path), "--config", str(cfg)]) == 2
        assert "learning_rate" in one_line_error(capsys)

    def test_missing_checkpoint(self, toy_root, tmp_path, capsys):
        missing = tmp_path / "nope.pt"
        assert main(["train", "--data-root", str(toy_root), "--out", str(tmp_path), "--checkpoint", str(missing)]) == 2
        assert str(missing) in one_line_error(capsys)


class TestTranslate:
    def test_overfit_outputs_match_ground_truth(self, toy_root, overfit_checkpoint, tmp_path):
        before = tree_digest(toy_root)
        out = tmp_path / "out"
        assert main(["translate", "--data-root", str(toy_root), "--checkpoint", str(overfit_checkpoint),
                     "--out", str(out), "--split", "val"]) == 0
        assert tree_digest(toy_root) == before
        manifest = DatasetManifest.load(toy_root / "val_manifest.txt")
        scores = []
        for rec in manifest.records:
            stem = Path(rec.ir).stem
            produced = np.asarray(Image.open(out / f"{stem}_to_rgb.png").convert("RGB"))
            truth = np.asarray(Image.open(manifest.resolve(rec.rgb)).convert("RGB"))
            a = torch.from_numpy(normalize(produced)).permute(2, 0, 1)[None]
            b = torch.from_numpy(normalize(truth)).permute(2, 0, 1)[None]
            scores.append(float(ssim(a.double(), b.double(), window=7)))
            mask = np.asarray(Image.open(out / f"{stem}_to_rgb_mask.png"))
            assert set(np.unique(mask)) <= {0, 255}
        assert min(scores) >= 0.9, scores

    def test_both_directions_naming(self, toy_root, overfit_checkpoint, tmp_path):
        assert main(["translate", "--data-root", str(toy_root), "--checkpoint", str(overfit_checkpoint),
                     "--out", str(tmp_path), "--direction", "both", "--limit", "2"]) == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert len(names) == 8
        assert any(n.endswith("_to_ir.png") for n in names) and any(n.endswith("_to_rgb.png") for n in names)
        ir_out = next(p for p in tmp_path.iterdir() if p.name.endswith("_to_ir.png"))
        assert Image.open(ir_out).mode == "L"

    def test_missing_checkpoint(self, toy_root, tmp_path, capsys):
        assert main(["translate", "--data-root", str(toy_root), "--checkpoint", str(tmp_path / "x.pt"),
                     "--out", str(tmp_path)]) == 2
        assert "x.pt" in one_line_error(capsys)


class TestEvaluate:
    def test_ground_truth_identity_report(self, toy_root, tmp_path):
        assert main(["evaluate", "--data-root", str(toy_root), "--ground-truth", "--image-size", "32",
                     "--out", str(tmp_path)]) == 0
        rep = MetricReport.load(tmp_path / "metrics.txt")
        assert rep.ssim == pytest.approx(1.0, abs=1e-6) and rep.psnr_db == math.inf
        assert rep.fid == pytest.approx(0.0, abs=1e-6)
        assert rep.dsc_percent == 100.0 and rep.s_score_percent == 100.0 and rep.mae == 0.0
        assert "| Model | DSC | S-Score | MAE |" in (tmp_path / "table.md").read_text()

    def test_checkpoint_report_reproducible(self, toy_root, overfit_checkpoint, tmp_path):
        for name in ("a", "b"):
            assert main(["evaluate", "--data-root", str(toy_root), "--checkpoint", str(overfit_checkpoint),
                         "--out", str(tmp_path / name), "--seed", "3"]) == 0
        assert filecmp.cmp(tmp_path / "a" / "metrics.txt", tmp_path / "b" / "metrics.txt", shallow=False)


class TestUsage:
    def test_unknown_flag(self, capsys):
        assert main(["make-toy", "--bogus"]) == 2
        assert "--bogus" in one_line_error(capsys)

    def test_unknown_command(self, capsys):
        assert main(["serve"]) == 2
        one_line_error(capsys)

    def test_no_data_root(self, monkeypatch, capsys):
        monkeypatch.delenv("STAWGAN_DATA_ROOT", raising=False)
        assert main(["evaluate", "--ground-truth"]) == 2
        assert "STAWGAN_DATA_ROOT" in one_line_error(capsys)

    @pytest.mark.parametrize("cmd", ["make-masks", "make-toy", "train", "translate", "evaluate"])
    def test_help_documents_flags(self, cmd, capsys):
        with pytest.raises(SystemExit) as info:
            main([cmd, "--help"])
        assert info.value.code == 0
        text = capsys.readouterr().out
        assert "--data-root" in text
