"""CLI contract: subcommands, exit codes, files written."""

import numpy as np
import pytest

from zoominpaint.checkpoint import save_checkpoint
from zoominpaint.cli import main
from zoominpaint.config import RunConfig
from zoominpaint.data import make_texture_dataset
from zoominpaint.imgio import load_image, load_mask, save_image, save_mask
from zoominpaint.masks import sample_mask, small_mask_spec
from zoominpaint.networks import NetworkConfig, build_models


@pytest.fixture(scope="module")
def desk_ckpt(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    cfg = NetworkConfig.desk()
    models = build_models(cfg, seed=0, dtype=np.float32)
    path = d / "model.bin"
    save_checkpoint(path, models, cfg)
    return path


@pytest.fixture(scope="module")
def image_and_mask(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    rng = np.random.default_rng(1)
    img = rng.random((3, 32, 32))
    save_image(img, d / "image.png")
    mask = sample_mask(small_mask_spec(), 32, 32, rng)
    save_mask(mask, d / "mask.png")
    return d / "image.png", d / "mask.png"


class TestUsageErrors:
    def test_unknown_subcommand_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_required_flag_exits_1_no_files(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen-masks", "--spec", "small", "--out", str(tmp_path / "o")])
        assert exc.value.code == 1
        assert not (tmp_path / "o").exists()

    def test_unknown_flag_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["stats", "--spec", "small", "--n", "1", "--out", "x",
                  "--frob", "3"])
        assert exc.value.code == 1


class TestMaskCommands:
    def test_gen_masks_writes_pngs_and_report(self, tmp_path, capsys):
        out = tmp_path / "masks"
        rc = main(["gen-masks", "--spec", "small", "--n", "10", "--size", "64",
                   "--seed", "7", "--out", str(out)])
        assert rc == 0
        pngs = sorted(out.glob("mask_*.png"))
        assert len(pngs) == 10
        m = load_mask(pngs[0])
        assert m.shape == (64, 64)
        assert set(np.unique(m)) <= {0, 1}
        for name in ("mask_stats.txt", "mask_stats.csv", "ratio_hist.csv",
                     "ratio_hist.png"):
            assert (out / name).exists()
        shown = capsys.readouterr().out
        assert "reference" in shown and "mean_ratio" in shown

    def test_gen_masks_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["gen-masks", "--spec", "large", "--n", "3", "--size", "64",
                  "--seed", "3", "--out", str(out)])
        for pa, pb in zip(sorted(a.glob("*.png")), sorted(b.glob("*.png"))):
            assert pa.read_bytes() == pb.read_bytes()

    def test_stats_without_pngs(self, tmp_path):
        out = tmp_path / "stats"
        rc = main(["stats", "--spec", "small", "--n", "50", "--size", "128",
                   "--seed", "0", "--out", str(out)])
        assert rc == 0
        assert not list(out.glob("mask_*.png"))
        assert (out / "mask_stats.csv").exists()
        assert (out / "ratio_hist.png").exists()


class TestInferCommand:
    def test_infer_writes_output(self, tmp_path, desk_ckpt, image_and_mask):
        img_path, mask_path = image_and_mask
        out_png = tmp_path / "result.png"
        rc = main(["infer", "--image", str(img_path), "--mask", str(mask_path),
                   "--ckpt", str(desk_ckpt), "--out", str(out_png)])
        assert rc == 0
        result = load_image(out_png)[0]
        original = load_image(img_path)[0]
        mask = load_mask(mask_path)
        valid = mask == 0
        np.testing.assert_array_equal(result[:, valid], original[:, valid])

    def test_scale_mismatch_exits_2(self, tmp_path, desk_ckpt, image_and_mask):
        img_path, mask_path = image_and_mask
        rc = main(["infer", "--image", str(img_path), "--mask", str(mask_path),
                   "--ckpt", str(desk_ckpt), "--out", str(tmp_path / "r.png"),
                   "--scale", "3"])
        assert rc == 2
        assert not (tmp_path / "r.png").exists()

    def test_bad_checkpoint_exits_2(self, tmp_path, image_and_mask, capsys):
        img_path, mask_path = image_and_mask
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"nope")
        rc = main(["infer", "--image", str(img_path), "--mask", str(mask_path),
                   "--ckpt", str(bad), "--out", str(tmp_path / "r.png")])
        assert rc == 2
        assert "error" in capsys.readouterr().err


class TestTrainEvalCommands:
    def test_train_then_eval_and_freq(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        make_texture_dataset(data_dir, 6, 96, seed=11)
        cfg = RunConfig.desk()
        cfg.pipeline.iterations_small = 2
        cfg.pipeline.iterations_large = 2
        cfg.pipeline.batch = 2
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(cfg.to_text())

        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg_path), "--data", str(data_dir),
                   "--out", str(out), "--seed", "5"])
        assert rc == 0
        assert (out / "loss_log.csv").exists()
        assert (out / "ckpt_final.bin").exists()
        assert (out / "loss_curves.png").exists()
        assert (out / "config_used.cfg").exists()
        header = (out / "loss_log.csv").read_text().splitlines()[0]
        assert header == "iter,l_c,l_sr,l_r,total,d_loss"

        eval_out = tmp_path / "eval"
        rc = main(["eval", "--ckpt", str(out / "ckpt_final.bin"),
                   "--data", str(data_dir), "--mask-spec", "small",
                   "--seed", "3", "--crop", "64", "--out", str(eval_out)])
        assert rc == 0
        for name in ("metrics.csv", "metrics.txt", "bands.csv", "bands.png"):
            assert (eval_out / name).exists()
        assert "psnr" in (eval_out / "metrics.csv").read_text().splitlines()[0]

        # freq-analyze between the dataset and itself: all bands 1.0
        freq_out = tmp_path / "freq"
        rc = main(["freq-analyze", "--pred", str(data_dir), "--target",
                   str(data_dir), "--out", str(freq_out)])
        assert rc == 0
        rows = (freq_out / "bands.csv").read_text().strip().splitlines()[1:]
        assert len(rows) == 3
        for row in rows:
            assert float(row.split(",")[1]) == pytest.approx(1.0, abs=1e-12)
        assert (freq_out / "bands.png").exists()

    def test_eval_requires_exactly_one_mask_source(self, tmp_path, desk_ckpt):
        rc = main(["eval", "--ckpt", str(desk_ckpt), "--data", str(tmp_path),
                   "--out", str(tmp_path / "e")])
        assert rc == 2

    def test_freq_mismatched_counts_exits_2(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        make_texture_dataset(a, 2, 16, seed=0)
        make_texture_dataset(b, 3, 16, seed=0)
        rc = main(["freq-analyze", "--pred", str(a), "--target", str(b),
                   "--out", str(tmp_path / "f")])
        assert rc == 2
