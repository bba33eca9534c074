"""The four architectures: shape contracts, degenerate parameter behavior,
gradient coverage, spectral bounds, checkpoint round-trips."""

import numpy as np
import pytest

from zoominpaint import tensor as tt
from zoominpaint.checkpoint import load_checkpoint, save_checkpoint
from zoominpaint.layers import spectral_normalize
from zoominpaint.masks import sample_mask, small_mask_spec, upscale_mask_nearest
from zoominpaint.networks import (
    CoarseNet, Discriminator, NetworkConfig, NetworkParams, RefineNet, SRNet,
    build_models, count_params,
)
from zoominpaint.pipeline import Adam
from zoominpaint.tensor import Tape, Tensor


def desk():
    return NetworkConfig.desk()


def rand_img(shape, seed):
    return np.random.default_rng(seed).random(shape)


def coverage(net, forward):
    """Fraction of parameters receiving a nonzero gradient from a scalar loss."""
    for _, p in net.params():
        p.zero_grad()
    with Tape() as tape:
        tape.backward(tt.mean(tt.square(forward())))
    hit = total = 0
    for _, p in net.params():
        total += p.size
        if p.grad is not None:
            hit += int(np.count_nonzero(p.grad))
    return hit / total


class TestCoarseNet:
    def test_shape_contract(self):
        net = CoarseNet(desk(), np.random.default_rng(0))
        x = Tensor(rand_img((2, 3, 64, 64), 1))
        mask = sample_mask(small_mask_spec(), 64, 64, np.random.default_rng(2))
        y = net(x, mask, update_stats=False)
        assert y.shape == (2, 3, 64, 64)

    def test_all_zero_params_zero_output(self):
        net = CoarseNet(desk(), np.random.default_rng(3))
        for _, p in net.params():
            p.data[:] = 0.0
        x = Tensor(rand_img((1, 3, 32, 32), 4))
        y = net(x, np.zeros((32, 32)), update_stats=False)
        np.testing.assert_array_equal(y.data, np.zeros((1, 3, 32, 32)))

    def test_indivisible_size_rejected(self):
        net = CoarseNet(desk(), np.random.default_rng(5))
        with pytest.raises(ValueError, match="divisible"):
            net(Tensor(rand_img((1, 3, 30, 30), 6)), np.zeros((30, 30)))

    def test_gradient_coverage(self):
        net = CoarseNet(desk(), np.random.default_rng(7))
        x = Tensor(rand_img((2, 3, 32, 32), 8))
        mask = sample_mask(small_mask_spec(), 32, 32, np.random.default_rng(9))
        frac = coverage(net, lambda: net(x, mask, update_stats=False))
        assert frac >= 0.99


class TestSRNet:
    def test_zero_params_equal_bicubic(self):
        cfg = desk()
        net = SRNet(cfg, np.random.default_rng(10))
        for _, p in net.params():
            p.data[:] = 0.0
        x = Tensor(rand_img((1, 3, 16, 16), 11))
        expect = tt.resize_bicubic(x, 32, 32).data
        np.testing.assert_array_equal(net(x).data, expect)

    def test_shape_contract(self):
        net = SRNet(desk(), np.random.default_rng(12))
        y = net(Tensor(rand_img((1, 3, 32, 32), 13)))
        assert y.shape == (1, 3, 64, 64)

    @pytest.mark.parametrize("scale", [1, 3])
    def test_other_scales(self, scale):
        cfg = desk()
        cfg.scale = scale
        net = SRNet(cfg, np.random.default_rng(14))
        y = net(Tensor(rand_img((1, 3, 16, 16), 15)))
        assert y.shape == (1, 3, 16 * scale, 16 * scale)

    def test_toy_training_beats_bicubic(self):
        # self-comparison: after a short fit on smooth textures, the SR net's
        # PSNR must exceed plain bicubic upsampling on held-out patches
        from zoominpaint.data import texture_image
        from zoominpaint.metrics import psnr

        cfg = desk()
        net = SRNet(cfg, np.random.default_rng(16))
        rng = np.random.default_rng(17)
        train_hr = np.stack([texture_image(32, rng) for _ in range(24)])
        test_hr = np.stack([texture_image(32, rng) for _ in range(8)])
        opt = Adam([p for _, p in net.params()], lr=2e-3)
        for it in range(120):
            idx = rng.integers(0, len(train_hr), size=4)
            hr = Tensor(train_hr[idx])
            with Tape() as tape:
                lr_in = tt.resize_bicubic(hr, 16, 16).detach()
                loss = tt.mean(tt.absolute(tt.sub(net(lr_in), hr)))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
        hr = Tensor(test_hr)
        lr_in = tt.resize_bicubic(hr, 16, 16)
        bicubic_up = tt.resize_bicubic(lr_in, 32, 32).data
        net_up = net(lr_in.detach()).data
        p_net = np.mean([psnr(a, b) for a, b in zip(net_up, test_hr)])
        p_bic = np.mean([psnr(a, b) for a, b in zip(bicubic_up, test_hr)])
        assert p_net > p_bic


class TestRefineNet:
    def test_shape_contract(self):
        net = RefineNet(desk(), np.random.default_rng(18))
        mask = upscale_mask_nearest(
            sample_mask(small_mask_spec(), 64, 64, np.random.default_rng(19)), 2)
        y = net(Tensor(rand_img((1, 3, 128, 128), 20)), mask, update_stats=False)
        assert y.shape == (1, 3, 128, 128)

    def test_fully_valid_mask_completes_finite(self):
        net = RefineNet(desk(), np.random.default_rng(21))
        y = net(Tensor(rand_img((1, 3, 32, 32), 22)), np.zeros((32, 32)),
                update_stats=False)
        assert np.isfinite(y.data).all()

    def test_gradient_coverage_including_attention(self):
        net = RefineNet(desk(), np.random.default_rng(23))
        x = Tensor(rand_img((1, 3, 64, 64), 24))
        mask = np.zeros((64, 64))
        mask[16:28, 20:32] = 1
        frac = coverage(net, lambda: net(x, mask, update_stats=False))
        assert frac >= 0.99

    def test_tiny_bottleneck_attention_degrades_gracefully(self):
        # central hole at a 4x4 attention grid leaves no fully valid key;
        # the branch passes features through instead of crashing
        net = RefineNet(desk(), np.random.default_rng(40))
        x = Tensor(rand_img((1, 3, 32, 32), 41))
        mask = np.zeros((32, 32))
        mask[8:16, 8:16] = 1
        y = net(x, mask, update_stats=False)
        assert np.isfinite(y.data).all()

    def test_all_invalid_mask_rejected(self):
        net = RefineNet(desk(), np.random.default_rng(42))
        with pytest.raises(ValueError, match="all-invalid"):
            net(Tensor(rand_img((1, 3, 32, 32), 43)), np.ones((32, 32)),
                update_stats=False)

    def test_attention_disabled_matches_coarse(self):
        cfg = desk()
        cfg.use_contextual_attention = False
        refine = RefineNet(cfg, np.random.default_rng(25))
        coarse = CoarseNet(cfg, np.random.default_rng(26))
        for (_, pc), (_, pr) in zip(coarse.params(), refine.params()):
            pr.data[...] = pc.data
        x = Tensor(rand_img((1, 3, 32, 32), 27))
        mask = sample_mask(small_mask_spec(), 32, 32, np.random.default_rng(28))
        a = coarse(x, mask, update_stats=False).data
        b = refine(x, mask, update_stats=False).data
        np.testing.assert_array_equal(a, b)


class TestDiscriminator:
    def test_spatial_halving_chain(self):
        cfg = desk()
        cfg.disc_layers = 4
        net = Discriminator(cfg, np.random.default_rng(29))
        x = Tensor(rand_img((1, 3, 64, 64), 30))
        shapes = []
        h = x
        for layer in net.layers:
            h = layer(h, train=False)
            shapes.append(h.shape[2])
        assert shapes == [32, 16, 8, 4]
        assert h.shape[1] == 1

    def test_eval_mode_deterministic(self):
        net = Discriminator(desk(), np.random.default_rng(31))
        x = Tensor(rand_img((1, 3, 64, 64), 32))
        a = net(x, train=False).data
        b = net(x, train=False).data
        np.testing.assert_array_equal(a, b)

    def test_every_layer_normalized_to_unit_sigma(self):
        net = Discriminator(desk(), np.random.default_rng(33))
        for layer in net.layers:
            wn = spectral_normalize(layer.sn, power_iterations=50)
            w2 = wn.data.reshape(wn.shape[0], -1)
            top = np.linalg.svd(w2, compute_uv=False)[0]
            assert abs(top - 1.0) < 1e-2


class TestBundle:
    def test_desk_parameter_budget(self):
        models = build_models(desk(), seed=0)
        total = sum(count_params(net) for net in models.values())
        assert total < 500_000

    def test_paper_scale_count_computable_and_larger(self):
        desk_total = sum(count_params(n) for n in build_models(desk(), 0).values())
        paper = NetworkConfig()
        paper_total = sum(count_params(n) for n in
                          build_models(paper, 0, dtype=np.float32).values())
        assert paper_total > 50 * desk_total

    def test_forwards_nan_free_many_seeds(self):
        models = build_models(desk(), seed=1)
        spec = small_mask_spec()
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.random((1, 3, 32, 32)))
            mask = sample_mask(spec, 32, 32, rng)
            y_c = models["coarse"](x, mask, update_stats=False)
            y_sr = models["sr"](y_c)
            y_r = models["refine"](y_sr, upscale_mask_nearest(mask, 2),
                                   update_stats=False)
            y_d = models["disc"](y_r, train=False)
            for y in (y_c, y_sr, y_r, y_d):
                assert np.isfinite(y.data).all()

    def test_network_params_registry(self):
        models = build_models(desk(), seed=2)
        np_coarse = NetworkParams("coarse", models["coarse"])
        assert len(np_coarse.tensors) == len(set(np_coarse.tensors))
        assert all(t.requires_grad for t in np_coarse.trainable())


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        cfg = desk()
        models = build_models(cfg, seed=3)
        # perturb states so they are not at init
        models["coarse"].stem.bn.running_mean += 0.25
        models["disc"].layers[0].sn.u[:] = 1.0 / np.sqrt(len(models["disc"].layers[0].sn.u))
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, models, cfg, run_config_text="seed = 3")
        loaded, cfg2, run_text = load_checkpoint(path)
        assert run_text == "seed = 3"
        assert cfg2 == cfg
        for role in models:
            for (n1, p1), (n2, p2) in zip(models[role].params(), loaded[role].params()):
                assert n1 == n2
                np.testing.assert_array_equal(p1.data, p2.data)
            for (n1, s1), (n2, s2) in zip(models[role].states(), loaded[role].states()):
                assert n1 == n2
                np.testing.assert_array_equal(s1, s2)

    def test_roundtrip_is_stable_bytes(self, tmp_path):
        cfg = desk()
        models = build_models(cfg, seed=4)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(p1, models, cfg)
        loaded, _, _ = load_checkpoint(p1)
        save_checkpoint(p2, loaded, cfg)
        assert p1.read_bytes() == p2.read_bytes()

    def test_architecture_mismatch_refused(self, tmp_path):
        cfg = desk()
        models = build_models(cfg, seed=5)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, models, cfg)
        import json
        from zoominpaint.checkpoint import MAGIC, read_manifest
        manifest = read_manifest(path)
        manifest["config"]["base_channels"] = 16          # lie about the width
        blob = json.dumps({k: v for k, v in manifest.items()
                           if k != "_payload_start"}, sort_keys=True).encode()
        payload = path.read_bytes()[manifest["_payload_start"]:]
        path.write_bytes(MAGIC + np.array(len(blob), dtype="<u8").tobytes()
                         + blob + payload)
        with pytest.raises(ValueError, match="shape"):
            load_checkpoint(path)
